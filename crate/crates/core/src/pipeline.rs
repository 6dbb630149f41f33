//! Price and sector file ingestion, log returns and demeaning.
//!
//! Price file: CSV with header `date,SYM1,SYM2,...`, one row per ISO-8601
//! date, decimal close prices, empty cell for a missing price.
//!
//! Sector file: CSV `symbol,sector_code` (header optional), where the code
//! is an integer 1-11 or the word `UNCLASSIFIED`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Membership, ReturnsPanel, SectorMap};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Close prices, `n` stocks × `p + 1` dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub stock_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub close_prices: DMatrix<f64>,
}

impl PriceTable {
    pub fn new(stock_ids: Vec<String>, dates: Vec<NaiveDate>, close_prices: DMatrix<f64>) -> Result<Self> {
        if close_prices.shape() != (stock_ids.len(), dates.len()) {
            return Err(Error::DimensionMismatch(format!(
                "prices are {:?} for {} stocks and {} dates",
                close_prices.shape(),
                stock_ids.len(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invariant("price dates must be strictly increasing".into()));
        }
        if let Some(pos) = close_prices.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            let n = stock_ids.len();
            return Err(Error::Invariant(format!(
                "price for {} on {} is not a positive number",
                stock_ids[pos % n],
                dates[pos / n]
            )));
        }
        Ok(Self {
            stock_ids,
            dates,
            close_prices,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMissing {
    /// Drop any stock with a missing or non-positive price in range.
    #[default]
    Drop,
    /// Fail on the first missing or non-positive price.
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub on_missing: OnMissing,
    /// Inclusive date bounds.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedStock {
    pub stock_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub dropped: Vec<DroppedStock>,
}

pub fn load_prices(path: &Path, options: &IngestOptions) -> Result<(PriceTable, IngestReport)> {
    read_prices(File::open(path)?, path, options)
}

/// Parse a price CSV from any reader; `source` labels errors.
pub fn read_prices<R: Read>(
    reader: R,
    source: &Path,
    options: &IngestOptions,
) -> Result<(PriceTable, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, format!("header: {e}")))?
        .clone();
    if headers.is_empty() || !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::parse(source, "first header column must be `date`"));
    }
    let symbols: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if symbols.is_empty() {
        return Err(Error::parse(source, "no stock columns in header"));
    }
    let mut seen = HashSet::new();
    for s in &symbols {
        if s.is_empty() {
            return Err(Error::parse(source, "empty symbol in header"));
        }
        if !seen.insert(s) {
            return Err(Error::parse(source, format!("duplicate symbol `{s}` in header")));
        }
    }

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut previous: Option<NaiveDate> = None;
    let mut lines: Vec<u64> = Vec::new();
    // cells[d][s]; NaN marks a missing cell
    let mut cells: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(source, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != symbols.len() + 1 {
            return Err(Error::parse(
                source,
                format!("line {line}: expected {} fields, found {}", symbols.len() + 1, record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| Error::parse(source, format!("line {line}: bad date `{}`: {e}", &record[0])))?;
        if let Some(last) = previous {
            if date <= last {
                return Err(Error::parse(
                    source,
                    format!("line {line}: date {date} is not after {last}"),
                ));
            }
        }
        previous = Some(date);
        let in_range = options.start.is_none_or(|s| date >= s) && options.end.is_none_or(|e| date <= e);
        let mut row = Vec::with_capacity(symbols.len());
        for (c, field) in record.iter().skip(1).enumerate() {
            if field.is_empty() {
                row.push(f64::NAN);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::parse(
                        source,
                        format!("line {line}, column {} ({}): bad price `{field}`", c + 2, symbols[c]),
                    )
                })?;
                row.push(v);
            }
        }
        if in_range {
            dates.push(date);
            lines.push(line);
            cells.push(row);
        }
    }
    if dates.is_empty() {
        return Err(Error::parse(source, "no dates within the requested range"));
    }

    let mut report = IngestReport::default();
    let mut kept = Vec::new();
    for (s, symbol) in symbols.iter().enumerate() {
        let bad = cells.iter().position(|row| !(row[s].is_finite() && row[s] > 0.0));
        match (bad, options.on_missing) {
            (None, _) => kept.push(s),
            (Some(d), OnMissing::Error) => {
                let what = if cells[d][s].is_nan() { "missing" } else { "non-positive" };
                return Err(Error::parse(
                    source,
                    format!(
                        "line {}, column {} ({symbol}, {}): {what} price",
                        lines[d],
                        s + 2,
                        dates[d]
                    ),
                ));
            }
            (Some(d), OnMissing::Drop) => {
                let reason = if cells[d][s].is_nan() {
                    format!("missing price on {}", dates[d])
                } else {
                    format!("non-positive price {} on {}", cells[d][s], dates[d])
                };
                warn!("dropping {symbol}: {reason}");
                report.dropped.push(DroppedStock {
                    stock_id: symbol.clone(),
                    reason,
                });
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::parse(source, "every stock was dropped for missing prices"));
    }
    let close = DMatrix::from_fn(kept.len(), dates.len(), |r, d| cells[d][kept[r]]);
    let ids = kept.iter().map(|&s| symbols[s].clone()).collect();
    Ok((PriceTable::new(ids, dates, close)?, report))
}

/// `r[j, i] = ln(close[j, i+1] / close[j, i])`.
pub fn compute_log_returns(prices: &PriceTable) -> Result<ReturnsPanel> {
    let (n, d) = prices.close_prices.shape();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 dates for returns, got {d}"
        )));
    }
    let c = &prices.close_prices;
    let values = DMatrix::from_fn(n, d - 1, |j, i| (c[(j, i + 1)] / c[(j, i)]).ln());
    ReturnsPanel::new(prices.stock_ids.clone(), prices.dates[1..].to_vec(), values, false)
}

/// Subtract each row's mean.
pub fn demean(panel: &ReturnsPanel) -> ReturnsPanel {
    let (ids, dates, mut values) = panel.clone().into_parts();
    let p = values.ncols();
    if p > 0 {
        for mut row in values.row_iter_mut() {
            let mean = row.sum() / p as f64;
            row.add_scalar_mut(-mean);
        }
    }
    ReturnsPanel::new(ids, dates, values, true).expect("demeaned panel keeps its invariants")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectorReport {
    /// Universe stocks absent from the file, mapped to UNCLASSIFIED.
    pub unlisted: Vec<String>,
    /// File rows naming symbols outside the universe.
    pub ignored: usize,
}

impl SectorReport {
    pub fn warning_count(&self) -> usize {
        self.unlisted.len()
    }
}

pub fn load_sectors(path: &Path, universe: &[String]) -> Result<(SectorMap, SectorReport)> {
    read_sectors(File::open(path)?, path, universe)
}

pub fn read_sectors<R: Read>(
    reader: R,
    source: &Path,
    universe: &[String],
) -> Result<(SectorMap, SectorReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut listed: BTreeMap<String, Membership> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::parse(source, e.to_string()))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::parse(
                source,
                format!("line {line}: expected `symbol,sector_code`, found {} fields", record.len()),
            ));
        }
        if idx == 0 && record[1].eq_ignore_ascii_case("sector_code") {
            continue;
        }
        let symbol = record[0].to_string();
        if symbol.is_empty() {
            return Err(Error::parse(source, format!("line {line}: empty symbol")));
        }
        let membership: Membership = record[1]
            .parse()
            .map_err(|e| Error::parse(source, format!("line {line}: {e}")))?;
        match listed.get(&symbol) {
            Some(prev) if *prev != membership => {
                return Err(Error::parse(
                    source,
                    format!("line {line}: {symbol} assigned to both {prev} and {membership}"),
                ));
            }
            _ => {
                listed.insert(symbol, membership);
            }
        }
    }

    let in_universe: HashSet<&str> = universe.iter().map(String::as_str).collect();
    let mut report = SectorReport {
        ignored: listed.keys().filter(|k| !in_universe.contains(k.as_str())).count(),
        ..SectorReport::default()
    };
    let mut map = SectorMap::new();
    for id in universe {
        match listed.get(id) {
            Some(m) => map.insert(id.clone(), *m),
            None => {
                report.unlisted.push(id.clone());
                map.insert(id.clone(), Membership::Unclassified);
            }
        }
    }
    if !report.unlisted.is_empty() {
        warn!(
            "{} stock(s) missing from the sector file were marked UNCLASSIFIED",
            report.unlisted.len()
        );
    }
    Ok((map, report))
}

pub fn write_prices<W: Write>(writer: W, prices: &PriceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(prices.stock_ids.iter().cloned());
    w.write_record(&header)?;
    for (d, date) in prices.dates.iter().enumerate() {
        let mut row = vec![date.format(DATE_FORMAT).to_string()];
        row.extend(prices.close_prices.column(d).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sectors<W: Write>(writer: W, stock_ids: &[String], sectors: &SectorMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["symbol", "sector_code"])?;
    for id in stock_ids {
        w.write_record([id.as_str(), &sectors.membership(id)?.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
