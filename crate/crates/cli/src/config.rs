//! TOML run configuration.
//!
//! Every key except `horizon` and the three `[market]` rates has a default. Per-asset
//! settings accept a scalar (broadcast over the assets) or an explicit list. Schema
//! problems are collected and reported together.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use toml::{Table, Value};

use trackmpc::{BacktestConfig, ConstraintSpec, MarketParams, SolverSettings, Var2Model};

/// A scalar broadcast over assets or one value per slot.
#[derive(Debug, Clone, PartialEq)]
pub enum PerAsset {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerAsset {
    fn resolve(&self, key: &str, len: usize, errors: &mut Vec<String>) -> Vec<f64> {
        match self {
            PerAsset::Scalar(x) => vec![*x; len],
            PerAsset::List(v) if v.len() == len => v.clone(),
            PerAsset::List(v) => {
                errors.push(format!("`{key}`: expected {len} values, found {}", v.len()));
                vec![0.0; len]
            }
        }
    }
}

/// Lag matrix given as a scalar (times the identity) or as rows.
#[derive(Debug, Clone, PartialEq)]
pub enum LagSpec {
    Diagonal(f64),
    Rows(Vec<Vec<f64>>),
}

impl LagSpec {
    fn resolve(&self, key: &str, n: usize, errors: &mut Vec<String>) -> DMatrix<f64> {
        match self {
            LagSpec::Diagonal(x) => DMatrix::identity(n, n) * *x,
            LagSpec::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    errors.push(format!("`{key}`: expected a {n}x{n} matrix"));
                    return DMatrix::zeros(n, n);
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of price rows to write (returns simulated: `rows - 1`).
    pub rows: usize,
    pub start_date: NaiveDate,
    pub base_price: f64,
    pub assets: Option<Vec<String>>,
    /// Unconditional mean daily return per asset; fixes the asset count.
    pub mean: Vec<f64>,
    pub volatility: PerAsset,
    pub correlation: f64,
    pub a1: LagSpec,
    pub a2: LagSpec,
    pub allow_unstable: bool,
}

impl SyntheticSpec {
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn asset_names(&self) -> Vec<String> {
        self.assets
            .clone()
            .unwrap_or_else(|| (1..=self.n()).map(|i| format!("asset{i}")).collect())
    }

    /// VAR(2) with intercept `(I − A1 − A2) mean` and shock covariance
    /// `diag(vol) C diag(vol)`, `C` equicorrelated.
    pub fn model(&self) -> Result<Var2Model, Vec<String>> {
        let n = self.n();
        let mut errors = Vec::new();
        let vol = self.volatility.resolve("synthetic.volatility", n, &mut errors);
        let a1 = self.a1.resolve("synthetic.a1", n, &mut errors);
        let a2 = self.a2.resolve("synthetic.a2", n, &mut errors);
        if let Some(names) = &self.assets {
            if names.len() != n {
                errors.push(format!(
                    "`synthetic.assets`: expected {n} names, found {}",
                    names.len()
                ));
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let sigma = DMatrix::from_fn(n, n, |i, j| {
            let c = if i == j { 1.0 } else { self.correlation };
            c * vol[i] * vol[j]
        });
        let mean = DVector::from_column_slice(&self.mean);
        let nu = (DMatrix::identity(n, n) - &a1 - &a2) * mean;
        Var2Model::new(nu, a1, a2, sigma).map_err(|e| vec![e.to_string()])
    }
}

/// Parsed configuration, independent of the asset count.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: usize,
    pub lending_rate: f64,
    pub borrowing_rate: f64,
    pub benchmark_rate: f64,
    pub beta: PerAsset,
    pub gamma: PerAsset,
    pub gamma0: f64,
    pub rho: f64,
    pub rho_overrides: BTreeMap<usize, f64>,
    pub cost: PerAsset,
    pub cost_overrides: BTreeMap<usize, PerAsset>,
    pub estimation_window: usize,
    pub trend_window: usize,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub initial_wealth: f64,
    pub reestimate: bool,
    pub mean_clamp: Option<f64>,
    pub rbar_with_terminal_cost: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub synthetic: Option<SyntheticSpec>,
}

const TOP_KEYS: &[&str] = &[
    "horizon",
    "rho",
    "estimation_window",
    "trend_window",
    "start",
    "end",
    "initial_wealth",
    "reestimate",
    "mean_clamp",
    "rbar_with_terminal_cost",
    "seed",
    "market",
    "constraints",
    "costs",
    "rho_overrides",
    "solver",
    "synthetic",
    "manifest",
];

struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn table<'a>(&mut self, parent: &'a Table, key: &str, prefix: &str) -> Option<&'a Table> {
        match parent.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.errors.push(format!("`{prefix}{key}` must be a table"));
                None
            }
        }
    }

    fn unknown(&mut self, table: &Table, allowed: &[&str], prefix: &str) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.errors.push(format!("unknown key `{prefix}{key}`"));
            }
        }
    }

    fn number(&mut self, v: &Value, name: &str) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.errors.push(format!("`{name}` must be a number"));
                None
            }
        }
    }

    fn f64(&mut self, t: Option<&Table>, key: &str, name: &str, default: Option<f64>) -> f64 {
        match t.and_then(|t| t.get(key)) {
            Some(v) => self.number(v, name).unwrap_or(0.0),
            None => default.unwrap_or_else(|| {
                self.errors.push(format!("missing required key `{name}`"));
                0.0
            }),
        }
    }

    fn opt_f64(&mut self, t: &Table, key: &str) -> Option<f64> {
        t.get(key).and_then(|v| self.number(v, key))
    }

    fn usize(&mut self, t: Option<&Table>, key: &str, name: &str, default: Option<usize>) -> usize {
        match t.and_then(|t| t.get(key)) {
            Some(v) => self.count(v, name).unwrap_or(0),
            None => default.unwrap_or_else(|| {
                self.errors.push(format!("missing required key `{name}`"));
                0
            }),
        }
    }

    fn count(&mut self, v: &Value, name: &str) -> Option<usize> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.errors.push(format!("`{name}` must be a non-negative integer"));
                None
            }
        }
    }

    fn bool(&mut self, t: Option<&Table>, key: &str, name: &str, default: bool) -> bool {
        match t.and_then(|t| t.get(key)) {
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.errors.push(format!("`{name}` must be true or false"));
                default
            }
            None => default,
        }
    }

    fn list(&mut self, v: &Value, name: &str) -> Option<Vec<f64>> {
        let Value::Array(items) = v else {
            self.errors.push(format!("`{name}` must be an array of numbers"));
            return None;
        };
        items.iter().map(|x| self.number(x, name)).collect()
    }

    fn per_asset(&mut self, t: Option<&Table>, key: &str, name: &str, default: f64) -> PerAsset {
        match t.and_then(|t| t.get(key)) {
            None => PerAsset::Scalar(default),
            Some(v @ Value::Array(_)) => PerAsset::List(self.list(v, name).unwrap_or_default()),
            Some(v) => PerAsset::Scalar(self.number(v, name).unwrap_or(default)),
        }
    }

    fn lag(&mut self, t: &Table, key: &str, name: &str) -> LagSpec {
        match t.get(key) {
            None => LagSpec::Diagonal(0.0),
            Some(Value::Array(rows)) => LagSpec::Rows(
                rows.iter()
                    .map(|r| self.list(r, name).unwrap_or_default())
                    .collect(),
            ),
            Some(v) => LagSpec::Diagonal(self.number(v, name).unwrap_or(0.0)),
        }
    }

    fn step_map<T>(
        &mut self,
        t: Option<&Table>,
        name: &str,
        mut value: impl FnMut(&mut Self, &Value, &str) -> Option<T>,
    ) -> BTreeMap<usize, T> {
        let mut out = BTreeMap::new();
        for (k, v) in t.into_iter().flatten() {
            let label = format!("{name}.{k}");
            match k.parse::<usize>() {
                Ok(step) => {
                    if let Some(x) = value(self, v, &label) {
                        out.insert(step, x);
                    }
                }
                Err(_) => self.errors.push(format!("`{label}`: key must be a step index")),
            }
        }
        out
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| vec![e.to_string()])?;
        let mut r = Reader { errors: Vec::new() };
        r.unknown(&root, TOP_KEYS, "");

        let market = r.table(&root, "market", "");
        if let Some(t) = market {
            r.unknown(t, &["lending_rate", "borrowing_rate", "benchmark_rate"], "market.");
        }
        let constraints = r.table(&root, "constraints", "");
        if let Some(t) = constraints {
            r.unknown(t, &["beta", "gamma", "gamma0"], "constraints.");
        }
        let costs = r.table(&root, "costs", "");
        if let Some(t) = costs {
            r.unknown(t, &["diag", "overrides"], "costs.");
        }
        let solver = r.table(&root, "solver", "");
        if let Some(t) = solver {
            r.unknown(t, &["tol", "max_iter"], "solver.");
        }
        let rho_overrides = r.table(&root, "rho_overrides", "");
        let cost_overrides = costs.and_then(|c| r.table(c, "overrides", "costs."));
        let top = Some(&root);

        let cfg = RunConfig {
            horizon: r.usize(top, "horizon", "horizon", None),
            lending_rate: r.f64(market, "lending_rate", "market.lending_rate", None),
            borrowing_rate: r.f64(market, "borrowing_rate", "market.borrowing_rate", None),
            benchmark_rate: r.f64(market, "benchmark_rate", "market.benchmark_rate", None),
            beta: r.per_asset(constraints, "beta", "constraints.beta", -0.6),
            gamma: r.per_asset(constraints, "gamma", "constraints.gamma", 3.0),
            gamma0: r.f64(constraints, "gamma0", "constraints.gamma0", Some(3.0)),
            rho: r.f64(top, "rho", "rho", Some(0.1)),
            rho_overrides: r.step_map(rho_overrides, "rho_overrides", |r, v, name| r.number(v, name)),
            cost: r.per_asset(costs, "diag", "costs.diag", 1e-4),
            cost_overrides: r.step_map(cost_overrides, "costs.overrides", |r, v, name| match v {
                Value::Array(_) => r.list(v, name).map(PerAsset::List),
                _ => r.number(v, name).map(PerAsset::Scalar),
            }),
            estimation_window: r.usize(top, "estimation_window", "estimation_window", Some(200)),
            trend_window: r.usize(top, "trend_window", "trend_window", Some(2)),
            start: root.get("start").and_then(|v| r.count(v, "start")),
            end: root.get("end").and_then(|v| r.count(v, "end")),
            initial_wealth: r.f64(top, "initial_wealth", "initial_wealth", Some(1.0)),
            reestimate: r.bool(top, "reestimate", "reestimate", false),
            mean_clamp: r.opt_f64(&root, "mean_clamp"),
            rbar_with_terminal_cost: r.bool(top, "rbar_with_terminal_cost", "rbar_with_terminal_cost", false),
            tol: r.f64(solver, "tol", "solver.tol", Some(SolverSettings::default().tol)),
            max_iter: r.usize(solver, "max_iter", "solver.max_iter", Some(SolverSettings::default().max_iter)),
            seed: match root.get("seed") {
                None => 0,
                Some(Value::Integer(i)) if *i >= 0 => *i as u64,
                Some(_) => {
                    r.errors.push("`seed` must be a non-negative integer".into());
                    0
                }
            },
            synthetic: r.table(&root, "synthetic", "").map(|t| parse_synthetic(&mut r, t)),
        };
        if r.errors.is_empty() {
            Ok(cfg)
        } else {
            Err(r.errors)
        }
    }

    /// Engine configuration for `n` assets, validated.
    pub fn resolve(&self, n: usize) -> Result<BacktestConfig, Vec<String>> {
        let mut errors = Vec::new();
        let beta = self.beta.resolve("constraints.beta", n, &mut errors);
        let gamma = self.gamma.resolve("constraints.gamma", n + 1, &mut errors);
        let cost_diag = self.cost.resolve("costs.diag", n + 1, &mut errors);
        let cost_overrides = self
            .cost_overrides
            .iter()
            .map(|(k, v)| (*k, v.resolve(&format!("costs.overrides.{k}"), n + 1, &mut errors)))
            .collect();
        if !errors.is_empty() {
            return Err(errors);
        }
        let config = BacktestConfig {
            market: MarketParams {
                n,
                lending_rate: self.lending_rate,
                borrowing_rate: self.borrowing_rate,
                benchmark_rate: self.benchmark_rate,
            },
            constraints: ConstraintSpec {
                beta,
                gamma,
                gamma0: self.gamma0,
            },
            horizon: self.horizon,
            rho: self.rho,
            cost_diag,
            rho_overrides: self.rho_overrides.clone(),
            cost_overrides,
            estimation_window: self.estimation_window,
            trend_window: self.trend_window,
            start: self.start,
            end: self.end,
            initial_wealth: self.initial_wealth,
            reestimate: self.reestimate,
            mean_clamp: self.mean_clamp,
            rbar_with_terminal_cost: self.rbar_with_terminal_cost,
            solver: SolverSettings {
                tol: self.tol,
                max_iter: self.max_iter,
            },
            seed: self.seed,
        };
        config.validate().map_err(|e| vec![e.to_string()])?;
        Ok(config)
    }
}

fn parse_synthetic(r: &mut Reader, t: &Table) -> SyntheticSpec {
    r.unknown(
        t,
        &[
            "rows",
            "start_date",
            "base_price",
            "assets",
            "mean",
            "volatility",
            "correlation",
            "a1",
            "a2",
            "allow_unstable",
        ],
        "synthetic.",
    );
    let some = Some(t);
    let start_date = match t.get("start_date") {
        None => NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
        Some(Value::String(s)) => NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap_or_else(|_| {
            r.errors
                .push(format!("`synthetic.start_date`: `{s}` is not a YYYY-MM-DD date"));
            NaiveDate::MIN
        }),
        Some(Value::Datetime(d)) => match d.date {
            Some(date) => NaiveDate::from_ymd_opt(date.year.into(), date.month.into(), date.day.into())
                .unwrap_or(NaiveDate::MIN),
            None => {
                r.errors.push("`synthetic.start_date` must be a date".into());
                NaiveDate::MIN
            }
        },
        Some(_) => {
            r.errors.push("`synthetic.start_date` must be a date".into());
            NaiveDate::MIN
        }
    };
    let assets = match t.get("assets") {
        None => None,
        Some(Value::Array(items)) => {
            let names: Option<Vec<String>> = items
                .iter()
                .map(|v| v.as_str().map(str::to_owned))
                .collect();
            if names.is_none() {
                r.errors.push("`synthetic.assets` must be an array of strings".into());
            }
            names
        }
        Some(_) => {
            r.errors.push("`synthetic.assets` must be an array of strings".into());
            None
        }
    };
    let mean = match t.get("mean") {
        Some(v) => r.list(v, "synthetic.mean").unwrap_or_default(),
        None => {
            r.errors.push("missing required key `synthetic.mean`".into());
            Vec::new()
        }
    };
    SyntheticSpec {
        rows: r.usize(some, "rows", "synthetic.rows", None),
        start_date,
        base_price: r.f64(some, "base_price", "synthetic.base_price", Some(100.0)),
        assets,
        mean,
        volatility: r.per_asset(some, "volatility", "synthetic.volatility", 0.01),
        correlation: r.f64(some, "correlation", "synthetic.correlation", Some(0.0)),
        a1: r.lag(t, "a1", "synthetic.a1"),
        a2: r.lag(t, "a2", "synthetic.a2"),
        allow_unstable: r.bool(some, "allow_unstable", "synthetic.allow_unstable", false),
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn int(x: usize) -> Value {
    Value::Integer(x as i64)
}

fn per_asset_value(p: &PerAsset) -> Value {
    match p {
        PerAsset::Scalar(x) => Value::Float(*x),
        PerAsset::List(v) => floats(v),
    }
}

fn lag_value(l: &LagSpec) -> Value {
    match l {
        LagSpec::Diagonal(x) => Value::Float(*x),
        LagSpec::Rows(rows) => Value::Array(rows.iter().map(|r| floats(r)).collect()),
    }
}

/// Fully materialized configuration in the input schema; parses back to the same run.
pub fn resolved_table(config: &BacktestConfig, synthetic: Option<&SyntheticSpec>) -> Table {
    let mut root = Table::new();
    root.insert("horizon".into(), int(config.horizon));
    root.insert("rho".into(), Value::Float(config.rho));
    root.insert("estimation_window".into(), int(config.estimation_window));
    root.insert("trend_window".into(), int(config.trend_window));
    if let Some(s) = config.start {
        root.insert("start".into(), int(s));
    }
    if let Some(e) = config.end {
        root.insert("end".into(), int(e));
    }
    root.insert("initial_wealth".into(), Value::Float(config.initial_wealth));
    root.insert("reestimate".into(), Value::Boolean(config.reestimate));
    if let Some(c) = config.mean_clamp {
        root.insert("mean_clamp".into(), Value::Float(c));
    }
    root.insert("rbar_with_terminal_cost".into(), Value::Boolean(config.rbar_with_terminal_cost));
    root.insert("seed".into(), Value::Integer(config.seed as i64));

    let mut market = Table::new();
    market.insert("lending_rate".into(), Value::Float(config.market.lending_rate));
    market.insert("borrowing_rate".into(), Value::Float(config.market.borrowing_rate));
    market.insert("benchmark_rate".into(), Value::Float(config.market.benchmark_rate));
    root.insert("market".into(), Value::Table(market));

    let mut constraints = Table::new();
    constraints.insert("beta".into(), floats(&config.constraints.beta));
    constraints.insert("gamma".into(), floats(&config.constraints.gamma));
    constraints.insert("gamma0".into(), Value::Float(config.constraints.gamma0));
    root.insert("constraints".into(), Value::Table(constraints));

    let mut costs = Table::new();
    costs.insert("diag".into(), floats(&config.cost_diag));
    if !config.cost_overrides.is_empty() {
        let overrides: Table = config
            .cost_overrides
            .iter()
            .map(|(k, v)| (k.to_string(), floats(v)))
            .collect();
        costs.insert("overrides".into(), Value::Table(overrides));
    }
    root.insert("costs".into(), Value::Table(costs));
    if !config.rho_overrides.is_empty() {
        let overrides: Table = config
            .rho_overrides
            .iter()
            .map(|(k, v)| (k.to_string(), Value::Float(*v)))
            .collect();
        root.insert("rho_overrides".into(), Value::Table(overrides));
    }

    let mut solver = Table::new();
    solver.insert("tol".into(), Value::Float(config.solver.tol));
    solver.insert("max_iter".into(), int(config.solver.max_iter));
    root.insert("solver".into(), Value::Table(solver));

    if let Some(s) = synthetic {
        let mut t = Table::new();
        t.insert("rows".into(), int(s.rows));
        t.insert(
            "start_date".into(),
            Value::String(s.start_date.format("%Y-%m-%d").to_string()),
        );
        t.insert("base_price".into(), Value::Float(s.base_price));
        t.insert(
            "assets".into(),
            Value::Array(s.asset_names().into_iter().map(Value::String).collect()),
        );
        t.insert("mean".into(), floats(&s.mean));
        t.insert("volatility".into(), per_asset_value(&s.volatility));
        t.insert("correlation".into(), Value::Float(s.correlation));
        t.insert("a1".into(), lag_value(&s.a1));
        t.insert("a2".into(), lag_value(&s.a2));
        t.insert("allow_unstable".into(), Value::Boolean(s.allow_unstable));
        root.insert("synthetic".into(), Value::Table(t));
    }
    root
}
