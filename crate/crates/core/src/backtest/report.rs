use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wealth_step, MarketParams};
use crate::solver::SolveStatus;

pub const STEPS_FILE: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const WEALTH_FILE: &str = "wealth.csv";
pub const ALLOCATIONS_FILE: &str = "allocations.csv";
pub const RETURNS_FILE: &str = "returns.csv";

/// One traded step. `wealth`/`benchmark` are the values at `k + 1`, after the control
/// chosen at `k` has been exposed to `returns`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Date at which `returns` is realized, when known.
    pub date: Option<NaiveDate>,
    pub wealth_before: f64,
    pub benchmark_before: f64,
    pub wealth: f64,
    pub benchmark: f64,
    pub control: DVector<f64>,
    pub risk_free: f64,
    pub trade: DVector<f64>,
    pub cost: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub constraint_violation: f64,
    pub returns: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub terminal_wealth: f64,
    pub terminal_benchmark: f64,
    pub tracking_rmse: f64,
    pub total_cost: f64,
    pub beat_fraction: f64,
    pub steps: usize,
    pub ruin: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub n: usize,
    pub initial_wealth: f64,
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

impl BacktestReport {
    pub fn new(n: usize, initial_wealth: f64, records: Vec<StepRecord>, ruin: bool) -> Self {
        let steps = records.len();
        let (terminal_wealth, terminal_benchmark) = records
            .last()
            .map(|r| (r.wealth, r.benchmark))
            .unwrap_or((initial_wealth, initial_wealth));
        let (sq, beat, cost) = records.iter().fold((0.0, 0usize, 0.0), |(sq, beat, cost), r| {
            let gap = r.wealth - r.benchmark;
            (sq + gap * gap, beat + usize::from(gap > 0.0), cost + r.cost)
        });
        let denom = steps.max(1) as f64;
        let summary = Summary {
            terminal_wealth,
            terminal_benchmark,
            tracking_rmse: (sq / denom).sqrt(),
            total_cost: cost,
            beat_fraction: beat as f64 / denom,
            steps,
            ruin,
        };
        Self {
            n,
            initial_wealth,
            records,
            summary,
        }
    }

    /// Attaches dates to records; `return_dates[r]` is the date of return row `r`.
    pub fn with_dates(mut self, return_dates: &[NaiveDate]) -> Self {
        for r in &mut self.records {
            r.date = return_dates.get(r.k + 1).copied();
        }
        self
    }

    /// Largest gap between the recorded wealth path and one rebuilt from the controls
    /// and realized returns.
    pub fn replay_error(&self, market: &MarketParams) -> Result<f64> {
        let rows: Vec<(DVector<f64>, DVector<f64>, f64)> = self
            .records
            .iter()
            .map(|r| (r.control.clone(), r.returns.clone(), r.wealth))
            .collect();
        replay_error(self.initial_wealth, &rows, market)
    }
}

/// Rebuilds a wealth path from `(control, realized returns, recorded wealth)` rows.
pub fn replay_error(
    initial_wealth: f64,
    rows: &[(DVector<f64>, DVector<f64>, f64)],
    market: &MarketParams,
) -> Result<f64> {
    let mut v = initial_wealth;
    let mut worst: f64 = 0.0;
    for (control, returns, recorded) in rows {
        v = wealth_step(v, control, returns, market)?;
        worst = worst.max((v - recorded).abs());
    }
    Ok(worst)
}

fn date_str(d: Option<NaiveDate>) -> String {
    d.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default()
}

fn numbered(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!(",{prefix}{i}")).collect()
}

pub fn steps_table(report: &BacktestReport) -> String {
    let n = report.n;
    let mut s = format!("k,date,V,V0{},u_borrow,u_riskfree,cost,status\n", numbered("u_", n));
    for r in &report.records {
        let _ = write!(s, "{},{},{},{}", r.k, date_str(r.date), r.wealth, r.benchmark);
        for i in 0..n {
            let _ = write!(s, ",{}", r.control[i]);
        }
        let _ = writeln!(s, ",{},{},{},{}", r.control[n], r.risk_free, r.cost, r.status);
    }
    s
}

pub fn summary_text(summary: &Summary) -> String {
    format!(
        "terminal_wealth={}\nterminal_benchmark={}\ntracking_rmse={}\ntotal_cost={}\nbeat_fraction={}\nsteps={}\nruin={}\n",
        summary.terminal_wealth,
        summary.terminal_benchmark,
        summary.tracking_rmse,
        summary.total_cost,
        summary.beat_fraction,
        summary.steps,
        summary.ruin
    )
}

/// Wealth and benchmark including the starting point (`k` of the first decision).
fn wealth_table(report: &BacktestReport) -> String {
    let mut s = String::from("k,date,V,V0\n");
    if let Some(first) = report.records.first() {
        let _ = writeln!(s, "{},,{},{}", first.k, first.wealth_before, first.benchmark_before);
    }
    for r in &report.records {
        let _ = writeln!(s, "{},{},{},{}", r.k + 1, date_str(r.date), r.wealth, r.benchmark);
    }
    s
}

fn allocations_table(report: &BacktestReport) -> String {
    let n = report.n;
    let mut s = format!("k,date{},u_borrow,u_riskfree\n", numbered("u_", n));
    for r in &report.records {
        let _ = write!(s, "{},{}", r.k, date_str(r.date));
        for x in r.control.iter() {
            let _ = write!(s, ",{x}");
        }
        let _ = writeln!(s, ",{}", r.risk_free);
    }
    s
}

fn returns_table(report: &BacktestReport) -> String {
    let mut s = format!("k,date{}\n", numbered("eta_", report.n));
    for r in &report.records {
        let _ = write!(s, "{},{}", r.k, date_str(r.date));
        for x in r.returns.iter() {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

/// Writes the per-step table, the summary and the plot series into `out_dir`.
pub fn emit_report(report: &BacktestReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (STEPS_FILE, steps_table(report)),
        (SUMMARY_FILE, summary_text(&report.summary)),
        (WEALTH_FILE, wealth_table(report)),
        (ALLOCATIONS_FILE, allocations_table(report)),
        (RETURNS_FILE, returns_table(report)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// A row of `steps.csv` read back.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub k: usize,
    pub wealth: f64,
    pub benchmark: f64,
    pub control: DVector<f64>,
    pub risk_free: f64,
    pub cost: f64,
    pub status: String,
}

fn read_table(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Data {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {field:?}"),
    })
}

pub fn read_steps(path: impl AsRef<Path>, n: usize) -> Result<Vec<StepRow>> {
    let path = path.as_ref();
    read_table(path)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != n + 8 {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected {} fields, found {}", n + 8, f.len()),
                });
            }
            let num = |i: usize| parse_field::<f64>(path, line, &f[i]);
            let control = (0..=n).map(|i| num(4 + i)).collect::<Result<Vec<_>>>()?;
            Ok(StepRow {
                k: parse_field(path, line, &f[0])?,
                wealth: num(2)?,
                benchmark: num(3)?,
                control: DVector::from_vec(control),
                risk_free: num(n + 5)?,
                cost: num(n + 6)?,
                status: f[n + 7].clone(),
            })
        })
        .collect()
}

/// Realized return rows from `returns.csv`, keyed by step.
pub fn read_returns(path: impl AsRef<Path>, n: usize) -> Result<Vec<(usize, DVector<f64>)>> {
    let path = path.as_ref();
    read_table(path)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != n + 2 {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected {} fields, found {}", n + 2, f.len()),
                });
            }
            let eta = (0..n)
                .map(|i| parse_field::<f64>(path, line, &f[2 + i]))
                .collect::<Result<Vec<_>>>()?;
            Ok((parse_field(path, line, &f[0])?, DVector::from_vec(eta)))
        })
        .collect()
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Data {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected key=value".into(),
        })?;
        map.insert(k.trim().to_owned(), (i + 1, v.trim().to_owned()));
    }
    let get = |key: &str| {
        map.get(key).ok_or_else(|| Error::Data {
            path: path.to_path_buf(),
            line: 0,
            message: format!("missing key {key}"),
        })
    };
    let num = |key: &str| -> Result<f64> {
        let (line, v) = get(key)?;
        parse_field(path, *line, v)
    };
    Ok(Summary {
        terminal_wealth: num("terminal_wealth")?,
        terminal_benchmark: num("terminal_benchmark")?,
        tracking_rmse: num("tracking_rmse")?,
        total_cost: num("total_cost")?,
        beat_fraction: num("beat_fraction")?,
        steps: {
            let (line, v) = get("steps")?;
            parse_field(path, *line, v)?
        },
        ruin: {
            let (line, v) = get("ruin")?;
            parse_field(path, *line, v)?
        },
    })
}
