//! Daily price tables: `date,<asset1>,...,<assetN>` with ISO-8601 dates.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// One row per date, one column per asset.
    pub prices: DMatrix<f64>,
}

impl PriceTable {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Simple returns; row `r` covers `dates[r]` to `dates[r + 1]`.
    pub fn returns(&self) -> DMatrix<f64> {
        prices_to_returns(&self.prices)
    }

    /// Dates at which each return row is realized.
    pub fn return_dates(&self) -> &[NaiveDate] {
        self.dates.get(1..).unwrap_or(&[])
    }
}

pub fn load_prices(path: impl AsRef<Path>) -> Result<PriceTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_prices(file, path)
}

pub fn parse_prices(reader: impl std::io::Read, path: &Path) -> Result<PriceTable> {
    let data_err = |line: usize, message: String| Error::Data {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| data_err(1, e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(data_err(
            1,
            "header must be `date,<asset1>,...,<assetN>`".into(),
        ));
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if let Some(a) = assets.iter().find(|a| a.is_empty()) {
        return Err(data_err(1, format!("empty asset name {a:?}")));
    }
    let n = assets.len();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            data_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != n + 1 {
            return Err(data_err(
                line,
                format!("expected {} fields, found {}", n + 1, record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| data_err(line, format!("bad date {:?}: {e}", &record[0])))?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(data_err(
                    line,
                    format!("dates must be strictly increasing ({date} after {prev})"),
                ));
            }
        }
        for (j, field) in record.iter().skip(1).enumerate() {
            if field.is_empty() {
                return Err(data_err(line, format!("missing price for {}", assets[j])));
            }
            let price: f64 = field
                .parse()
                .map_err(|_| data_err(line, format!("bad price {field:?} for {}", assets[j])))?;
            if !price.is_finite() || price <= 0.0 {
                return Err(data_err(
                    line,
                    format!("price for {} must be positive, got {price}", assets[j]),
                ));
            }
            values.push(price);
        }
        dates.push(date);
    }
    let prices = DMatrix::from_row_slice(dates.len(), n, &values);
    Ok(PriceTable {
        dates,
        assets,
        prices,
    })
}

/// `η(t+1) = (P(t+1) − P(t)) / P(t)` row by row.
pub fn prices_to_returns(prices: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, n) = prices.shape();
    if t < 2 {
        return DMatrix::zeros(0, n);
    }
    DMatrix::from_fn(t - 1, n, |r, j| {
        (prices[(r + 1, j)] - prices[(r, j)]) / prices[(r, j)]
    })
}

/// Compounds returns onto a starting price; the result has one more row than `returns`.
pub fn returns_to_prices(returns: &DMatrix<f64>, base: f64) -> DMatrix<f64> {
    let (t, n) = returns.shape();
    let mut prices = DMatrix::zeros(t + 1, n);
    prices.row_mut(0).fill(base);
    for r in 0..t {
        for j in 0..n {
            prices[(r + 1, j)] = prices[(r, j)] * (1.0 + returns[(r, j)]);
        }
    }
    prices
}

pub fn write_prices(path: impl AsRef<Path>, table: &PriceTable) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write!(out, "date").map_err(io)?;
    for a in &table.assets {
        write!(out, ",{a}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for (r, date) in table.dates.iter().enumerate() {
        write!(out, "{}", date.format(DATE_FORMAT)).map_err(io)?;
        for j in 0..table.assets.len() {
            write!(out, ",{}", table.prices[(r, j)]).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}
