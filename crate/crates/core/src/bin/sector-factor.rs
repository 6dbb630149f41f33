use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use sector_factor::diagnostics::{CoherenceScope, DEFAULT_THRESHOLD};
use sector_factor::em::InitStrategy;
use sector_factor::pipeline::OnMissing;
use sector_factor::run::{self, FitArgs, ReportArgs, SimulateArgs, Unclassified};
use sector_factor::synth::SynthSpec;
use sector_factor::Error;

#[derive(Parser)]
#[command(name = "sector-factor", version, about = "Sector-constrained factor models for daily log returns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum MissingArg {
    Drop,
    Error,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnclassifiedArg {
    Include,
    Drop,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    SectorPca,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Thresholded,
    AllNonzero,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = lo.trim().parse().map_err(|_| format!("bad number `{lo}`"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad number `{hi}`"))?;
    Ok((lo, hi))
}

#[derive(Subcommand)]
enum Command {
    /// Fit a sector (default) or standard factor model by EM.
    Fit {
        prices: PathBuf,
        sectors: PathBuf,
        #[arg(long, default_value = "fit_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Classic model with every loading free.
        #[arg(long)]
        standard: bool,
        #[arg(long, value_enum, default_value = "drop")]
        on_missing: MissingArg,
        #[arg(long, value_enum, default_value = "on")]
        demean: Switch,
        #[arg(long, value_enum, default_value = "include")]
        unclassified: UnclassifiedArg,
        #[arg(long, value_enum, default_value = "sector-pca")]
        init: InitArg,
        #[arg(long, default_value_t = 0.1)]
        init_scale: f64,
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        end: Option<NaiveDate>,
    },
    /// Write synthetic price and sector files from a random sector model.
    Simulate {
        #[arg(long, default_value = "sim_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stocks per sector as CODE=COUNT pairs.
        #[arg(long, default_value = "1=10,6=10,8=10")]
        sector_sizes: String,
        #[arg(long, default_value_t = 0)]
        unclassified: usize,
        #[arg(long, default_value_t = 13)]
        m: usize,
        /// Number of daily returns.
        #[arg(long, default_value_t = 1000)]
        days: usize,
        #[arg(long, value_parser = parse_range, default_value = "0.5,1.0")]
        sector_loading: (f64, f64),
        #[arg(long, default_value_t = 0.3)]
        market_scale: f64,
        #[arg(long, value_parser = parse_range, default_value = "0.2,0.5")]
        psi: (f64, f64),
        #[arg(long, value_enum, default_value = "on")]
        coherent: Switch,
    },
    /// Per-factor component, sector and sign-coherence reports.
    Report {
        model: PathBuf,
        sectors: PathBuf,
        #[arg(long, default_value = "report_out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "thresholded")]
        coherence_over: ScopeArg,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit {
            prices,
            sectors,
            out,
            m,
            iters,
            tol,
            seed,
            standard,
            on_missing,
            demean,
            unclassified,
            init,
            init_scale,
            start,
            end,
        } => {
            let args = FitArgs {
                m,
                iters,
                tol,
                seed,
                standard,
                on_missing: match on_missing {
                    MissingArg::Drop => OnMissing::Drop,
                    MissingArg::Error => OnMissing::Error,
                },
                demean: matches!(demean, Switch::On),
                unclassified: match unclassified {
                    UnclassifiedArg::Include => Unclassified::Include,
                    UnclassifiedArg::Drop => Unclassified::Drop,
                },
                init: match init {
                    InitArg::SectorPca => InitStrategy::SectorPca,
                    InitArg::Random => InitStrategy::Random,
                },
                init_scale,
                start,
                end,
                ..FitArgs::new(prices, sectors, &out)
            };
            let outcome = run::cmd_fit(&args)?;
            println!(
                "fitted {} stocks x {} days in {} iterations; Q = {:.6}; wrote {}",
                outcome.manifest.n_stocks,
                outcome.manifest.n_days,
                outcome.trace.iterations_run,
                outcome.trace.final_loglik().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Simulate {
            out,
            seed,
            sector_sizes,
            unclassified,
            m,
            days,
            sector_loading,
            market_scale,
            psi,
            coherent,
        } => {
            let spec = SynthSpec {
                n_per_sector: run::parse_sector_sizes(&sector_sizes)?,
                n_unclassified: unclassified,
                m,
                p: days,
                sector_loading_range: sector_loading,
                market_loading_scale: market_scale,
                psi_range: psi,
                sector_sign_coherent: matches!(coherent, Switch::On),
                seed,
            };
            let outcome = run::cmd_simulate(&SimulateArgs {
                out_dir: out.clone(),
                spec,
            })?;
            println!(
                "simulated {} stocks x {} days; wrote {}",
                outcome.returns.n_stocks(),
                outcome.returns.n_days(),
                out.display()
            );
        }
        Command::Report {
            model,
            sectors,
            out,
            threshold,
            coherence_over,
        } => {
            let args = ReportArgs {
                threshold,
                scope: match coherence_over {
                    ScopeArg::Thresholded => CoherenceScope::Thresholded,
                    ScopeArg::AllNonzero => CoherenceScope::AllNonzero,
                },
                ..ReportArgs::new(model, sectors, &out)
            };
            let doc = run::cmd_report(&args)?;
            print!("{}", doc.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code(&e) as u8)
        }
    }
}
