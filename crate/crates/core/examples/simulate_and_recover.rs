//! End to end through files: simulate prices and sectors, fit from disk,
//! write reports. Everything lands in the directory given (or a temp dir).
//!
//! cargo run --release --example simulate_and_recover -- [OUT_DIR]

use std::path::PathBuf;

use sector_factor::run::{cmd_fit, cmd_report, cmd_simulate, FitArgs, ReportArgs, SimulateArgs};
use sector_factor::synth::SynthSpec;

fn main() -> sector_factor::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sector-factor-demo"));
    let sim_dir = root.join("sim");
    let spec = SynthSpec {
        p: 1000,
        seed: 3,
        ..SynthSpec::default()
    };
    cmd_simulate(&SimulateArgs {
        out_dir: sim_dir.clone(),
        spec,
    })?;

    let prices = sim_dir.join(sector_factor::run::PRICES_FILE);
    let sectors = sim_dir.join(sector_factor::run::SECTORS_FILE);
    let fit_dir = root.join("fit");
    let outcome = cmd_fit(&FitArgs::new(&prices, &sectors, &fit_dir))?;
    println!(
        "fit {} stocks over {} days, final log-lik {:.3} after {} iterations",
        outcome.manifest.n_stocks,
        outcome.manifest.n_days,
        outcome.manifest.final_marginal_loglik.unwrap_or(f64::NAN),
        outcome.manifest.iterations_run
    );

    let report = cmd_report(&ReportArgs::new(
        fit_dir.join(sector_factor::run::MODEL_FILE),
        &sectors,
        root.join("report"),
    ))?;
    print!("{}", report.to_text());
    println!("outputs under {}", root.display());
    Ok(())
}
