use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::Days;
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use trackmpc::backtest::{
    emit_report, load_prices, returns_to_prices, simulate_synthetic, summary_text, write_prices,
    PriceTable,
};
use trackmpc::forecast::{estimate_var2, min_observations};
use trackmpc::run_backtest;

use crate::config::{resolved_table, RunConfig};
use crate::error::{Class, CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| trackmpc::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }.into())
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| trackmpc::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = read_text(path)?;
    RunConfig::parse(&text).map_err(|errs| {
        CliError::schema(errs.into_iter().map(|e| format!("{}: {e}", path.display())).collect())
    })
}

/// `<file>.manifest.toml` next to a single-file output.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.toml");
    out.with_file_name(name)
}

fn write_manifest(
    path: &Path,
    command: &str,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
    mut body: Table,
) -> CliResult<()> {
    let mut manifest = Table::new();
    manifest.insert("command".into(), Value::String(command.into()));
    manifest.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    if let Some(seed) = seed {
        manifest.insert("seed".into(), Value::Integer(seed as i64));
    }
    let mut digests = Table::new();
    for (name, file) in inputs {
        let mut entry = Table::new();
        entry.insert("path".into(), Value::String(file.display().to_string()));
        entry.insert("sha256".into(), Value::String(sha256_file(file)?));
        digests.insert((*name).into(), Value::Table(entry));
    }
    manifest.insert("inputs".into(), Value::Table(digests));
    body.insert("manifest".into(), Value::Table(manifest));
    let text = toml::to_string(&body).map_err(|e| CliError::config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| trackmpc::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn backtest(config_path: &Path, prices: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let run = load_config(config_path)?;
    let table = load_prices(prices)?;
    let n = table.assets.len();
    let mut config = run.resolve(n).map_err(CliError::schema)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    log::info!(
        "{} assets, {} price rows, horizon {}, window {}",
        n,
        table.len(),
        config.horizon,
        config.estimation_window
    );

    let report = run_backtest(&config, &table.returns())?.with_dates(table.return_dates());
    emit_report(&report, out)?;
    write_manifest(
        &out.join(MANIFEST_FILE),
        "backtest",
        Some(config.seed),
        &[("config", config_path), ("prices", prices)],
        resolved_table(&config, run.synthetic.as_ref()),
    )?;
    print!("{}", summary_text(&report.summary));
    if report.summary.ruin {
        let last = report.records.last().map(|r| r.k).unwrap_or_default();
        return Err(CliError::ruin(format!(
            "wealth exhausted after step {last}; report written to {}",
            out.display()
        )));
    }
    Ok(())
}

pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let run = load_config(config_path)?;
    let Some(spec) = run.synthetic.clone() else {
        return Err(CliError::config(format!(
            "{}: missing `[synthetic]` section",
            config_path.display()
        )));
    };
    let model = spec.model().map_err(CliError::schema)?;
    let mut config = run.resolve(spec.n()).map_err(CliError::schema)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }

    let steps = spec.rows.saturating_sub(1);
    let prices = if spec.rows == 0 {
        DMatrix::zeros(0, spec.n())
    } else {
        let returns = simulate_synthetic(&model, steps, config.seed, spec.allow_unstable)?;
        returns_to_prices(&returns, spec.base_price)
    };
    let dates = (0..spec.rows)
        .map(|d| {
            spec.start_date
                .checked_add_days(Days::new(d as u64))
                .ok_or_else(|| CliError::config("`synthetic.start_date` plus `rows` overflows the calendar"))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let table = PriceTable {
        dates,
        assets: spec.asset_names(),
        prices,
    };
    write_prices(out, &table)?;
    write_manifest(
        &sibling_manifest(out),
        "simulate",
        Some(config.seed),
        &[("config", config_path)],
        resolved_table(&config, Some(&spec)),
    )?;
    log::info!("wrote {} price rows to {}", spec.rows, out.display());
    Ok(())
}

pub fn calibrate(prices: &Path, window: usize, out: &Path) -> CliResult<()> {
    let table = load_prices(prices)?;
    let returns = table.returns();
    let (t, n) = returns.shape();
    let needed = min_observations(n);
    if window < needed {
        return Err(CliError::config(format!(
            "window {window} is below the minimum of {needed} returns for {n} assets"
        )));
    }
    if window > t {
        return Err(CliError {
            class: Class::Data,
            message: format!(
                "window {window} exceeds the {t} returns in {} (minimum window {needed})",
                prices.display()
            ),
        });
    }
    let fit = estimate_var2(&returns.rows(t - window, window).into_owned())?;

    let mut csv = String::from("block,asset");
    for a in &table.assets {
        let _ = write!(csv, ",{a}");
    }
    csv.push('\n');
    let _ = write!(csv, "nu,");
    for x in fit.nu.iter() {
        let _ = write!(csv, ",{x}");
    }
    csv.push('\n');
    for (block, m) in [("a1", &fit.a1), ("a2", &fit.a2), ("sigma", &fit.sigma)] {
        for (i, asset) in table.assets.iter().enumerate() {
            let _ = write!(csv, "{block},{asset}");
            for j in 0..n {
                let _ = write!(csv, ",{}", m[(i, j)]);
            }
            csv.push('\n');
        }
    }
    std::fs::write(out, csv).map_err(|e| trackmpc::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;

    let mut body = Table::new();
    body.insert("window".into(), Value::Integer(window as i64));
    body.insert("observations".into(), Value::Integer(fit.n_obs as i64));
    body.insert("spectral_radius".into(), Value::Float(fit.spectral_radius()));
    write_manifest(&sibling_manifest(out), "calibrate", None, &[("prices", prices)], body)?;
    log::info!(
        "fitted {n} assets on {window} returns, spectral radius {:.4}",
        fit.spectral_radius()
    );
    Ok(())
}
