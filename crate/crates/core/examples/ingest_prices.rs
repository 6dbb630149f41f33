//! Read a price CSV, drop gappy stocks, and turn it into a demeaned
//! log-return panel.
//!
//! cargo run --example ingest_prices -- [PRICES.csv]

use std::path::Path;

use sector_factor::pipeline::{compute_log_returns, demean, read_prices, IngestOptions};

const SAMPLE: &str = "\
date,AAPL,XOM,JPM,GAPPY
2010-01-04,30.57,69.15,42.85,10.0
2010-01-05,30.63,69.42,43.68,
2010-01-06,30.14,69.70,43.92,10.2
2010-01-07,30.08,69.44,44.79,10.1
2010-01-08,30.28,69.16,44.68,10.3
";

fn main() -> sector_factor::Result<()> {
    let options = IngestOptions::default();
    let (prices, report) = match std::env::args().nth(1) {
        Some(path) => sector_factor::pipeline::load_prices(Path::new(&path), &options)?,
        None => read_prices(SAMPLE.as_bytes(), Path::new("<sample>"), &options)?,
    };
    for d in &report.dropped {
        println!("dropped {}: {}", d.stock_id, d.reason);
    }
    let returns = demean(&compute_log_returns(&prices)?);
    println!(
        "{} stocks x {} returns, {} .. {}",
        returns.n_stocks(),
        returns.n_days(),
        returns.dates()[0],
        returns.dates()[returns.n_days() - 1]
    );
    for (id, row) in returns.stock_ids().iter().zip(returns.values().row_iter()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.5}")).collect();
        println!("{id:>6} {}", cells.join(" "));
    }
    Ok(())
}
