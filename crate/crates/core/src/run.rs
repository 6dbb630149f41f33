//! The `fit`, `simulate` and `report` commands as library calls, so the
//! thin binary and the tests drive exactly the same code.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{full_report, write_plot_data, CoherenceScope, ReportDocument, DEFAULT_THRESHOLD};
use crate::em::{self, FitConfig, FitTrace, InitStrategy};
use crate::error::{Error, Result};
use crate::io::{load_model, save_model, write_trace};
use crate::model::{FactorModel, LoadingMask, Membership, Sector, N_SECTORS};
use crate::pipeline::{
    compute_log_returns, demean, load_prices, load_sectors, write_prices, write_sectors,
    IngestOptions, OnMissing,
};
use crate::synth::{reconstruct_prices, sample_model, sample_panel, SynthSpec};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SECTOR_FACTOR_THREADS";

pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PRICES_FILE: &str = "prices.csv";
pub const SECTORS_FILE: &str = "sectors.csv";
pub const TRUTH_FILE: &str = "truth_model.json";
pub const SIM_SPEC_FILE: &str = "simulation.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const PLOT_DIR: &str = "plot_data";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => exit::USAGE,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::UnknownStock(_) => exit::PARSE,
        e if e.is_numerical() => exit::NUMERICAL,
        _ => exit::FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unclassified {
    /// Keep unclassified stocks; they load on market factors only.
    #[default]
    Include,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArgs {
    pub prices: PathBuf,
    pub sectors: PathBuf,
    pub out_dir: PathBuf,
    pub m: usize,
    pub iters: usize,
    pub tol: Option<f64>,
    pub seed: u64,
    pub standard: bool,
    pub on_missing: OnMissing,
    pub demean: bool,
    pub unclassified: Unclassified,
    pub init: InitStrategy,
    pub init_scale: f64,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl FitArgs {
    pub fn new(prices: impl Into<PathBuf>, sectors: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let defaults = FitConfig::default();
        Self {
            prices: prices.into(),
            sectors: sectors.into(),
            out_dir: out_dir.into(),
            m: 13,
            iters: defaults.max_iterations,
            tol: None,
            seed: 0,
            standard: false,
            on_missing: OnMissing::default(),
            demean: true,
            unclassified: Unclassified::default(),
            init: defaults.init,
            init_scale: defaults.init_scale,
            start: None,
            end: None,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iterations: self.iters,
            rel_tol: self.tol,
            seed: self.seed,
            init_scale: self.init_scale,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: FitArgs,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub n_stocks: usize,
    pub n_days: usize,
    pub dropped_stocks: Vec<String>,
    pub unlisted_stocks: Vec<String>,
    pub iterations_run: usize,
    pub converged_by_tol: bool,
    pub final_loglik: Option<f64>,
    pub final_marginal_loglik: Option<f64>,
    pub wall_clock_seconds: f64,
}

pub struct FitOutcome {
    pub model: FactorModel,
    pub trace: FitTrace,
    pub manifest: RunManifest,
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Thread cap from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Load, fit and write `model.json`, `trace.csv` and `manifest.json`.
pub fn cmd_fit(args: &FitArgs) -> Result<FitOutcome> {
    let started = Instant::now();
    let threads = threads_from_env()?;
    let config = args.fit_config();
    config.validate()?;
    if !args.standard && args.m < crate::model::MIN_SECTOR_FACTORS {
        return Err(Error::InvalidArgument(format!(
            "--m must be >= {} for the sector model, got {}",
            crate::model::MIN_SECTOR_FACTORS,
            args.m
        )));
    }

    let options = IngestOptions {
        on_missing: args.on_missing,
        start: args.start,
        end: args.end,
    };
    let (prices, ingest) = load_prices(&args.prices, &options)?;
    let mut panel = compute_log_returns(&prices)?;
    let (sectors, sector_report) = load_sectors(&args.sectors, panel.stock_ids())?;
    if args.unclassified == Unclassified::Drop {
        let keep: Vec<usize> = (0..panel.n_stocks())
            .filter(|&j| sectors.get(&panel.stock_ids()[j]) != Some(Membership::Unclassified))
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidArgument("every stock is unclassified".into()));
        }
        panel = panel.select_rows(&keep)?;
    }
    if args.demean {
        panel = demean(&panel);
    }

    let mask = if args.standard {
        LoadingMask::dense(panel.n_stocks(), args.m)?
    } else {
        LoadingMask::sector(&sectors, panel.stock_ids(), args.m)?
    };
    info!(
        "fitting {} model: {} stocks x {} days, m = {}",
        if args.standard { "standard" } else { "sector" },
        panel.n_stocks(),
        panel.n_days(),
        args.m
    );
    let (model, trace) = with_threads(threads, || {
        if args.demean {
            em::fit(&panel, &mask, &config)
        } else {
            em::fit_uncentered(&panel, &mask, &config)
        }
    })??;

    fs::create_dir_all(&args.out_dir)?;
    save_model(&args.out_dir.join(MODEL_FILE), &model)?;
    write_trace(File::create(args.out_dir.join(TRACE_FILE))?, &trace)?;

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "fit".into(),
        config: args.clone(),
        inputs: vec![digest(&args.prices)?, digest(&args.sectors)?],
        seed: args.seed,
        threads,
        n_stocks: panel.n_stocks(),
        n_days: panel.n_days(),
        dropped_stocks: ingest.dropped.iter().map(|d| d.stock_id.clone()).collect(),
        unlisted_stocks: sector_report.unlisted.clone(),
        iterations_run: trace.iterations_run,
        converged_by_tol: trace.converged_by_tol,
        final_loglik: trace.final_loglik(),
        final_marginal_loglik: trace.marginal_loglik_per_iter.last().copied(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let mut f = File::create(args.out_dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    Ok(FitOutcome {
        model,
        trace,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub out_dir: PathBuf,
    pub spec: SynthSpec,
}

/// Parse `CODE=COUNT[,CODE=COUNT...]` into per-sector stock counts.
pub fn parse_sector_sizes(text: &str) -> Result<[usize; N_SECTORS]> {
    let mut sizes = [0usize; N_SECTORS];
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (code, count) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("`{part}` is not CODE=COUNT")))?;
        let sector = code
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Sector::from_code)
            .ok_or_else(|| Error::InvalidArgument(format!("`{code}` is not a sector code 1-11")))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("`{count}` is not a stock count")))?;
        sizes[sector.column()] = count;
    }
    Ok(sizes)
}

pub struct SimulateOutcome {
    pub model: FactorModel,
    pub returns: crate::model::ReturnsPanel,
}

/// Draw a model and panel and write `prices.csv`, `sectors.csv`,
/// `truth_model.json` and `simulation.json`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateOutcome> {
    let model = sample_model(&args.spec)?;
    let returns = sample_panel(&model, args.spec.p, args.spec.seed)?;
    let prices = reconstruct_prices(&returns)?;
    fs::create_dir_all(&args.out_dir)?;
    write_prices(File::create(args.out_dir.join(PRICES_FILE))?, &prices)?;
    write_sectors(
        File::create(args.out_dir.join(SECTORS_FILE))?,
        model.stock_ids(),
        &args.spec.sector_map(),
    )?;
    save_model(&args.out_dir.join(TRUTH_FILE), &model)?;
    let mut f = File::create(args.out_dir.join(SIM_SPEC_FILE))?;
    serde_json::to_writer_pretty(&mut f, &args.spec)?;
    Ok(SimulateOutcome { model, returns })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportArgs {
    pub model: PathBuf,
    pub sectors: PathBuf,
    pub out_dir: PathBuf,
    pub threshold: f64,
    pub scope: CoherenceScope,
}

impl ReportArgs {
    pub fn new(model: impl Into<PathBuf>, sectors: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            sectors: sectors.into(),
            out_dir: out_dir.into(),
            threshold: DEFAULT_THRESHOLD,
            scope: CoherenceScope::default(),
        }
    }
}

/// Write `report.json`, `report.txt` and one plot-data CSV per factor.
pub fn cmd_report(args: &ReportArgs) -> Result<ReportDocument> {
    let model = load_model(&args.model)?;
    let (sectors, _) = load_sectors(&args.sectors, model.stock_ids())?;
    let factors = full_report(&model, &sectors, args.threshold, args.scope)?;
    let doc = ReportDocument::new(args.threshold, args.scope, factors);

    let plot_dir = args.out_dir.join(PLOT_DIR);
    fs::create_dir_all(&plot_dir)?;
    let mut f = File::create(args.out_dir.join(REPORT_JSON))?;
    serde_json::to_writer_pretty(&mut f, &doc)?;
    fs::write(args.out_dir.join(REPORT_TEXT), doc.to_text())?;
    for k in 0..model.n_factors() {
        let path = plot_dir.join(format!("factor_{:02}.csv", k + 1));
        write_plot_data(File::create(path)?, &model, &sectors, k)?;
    }
    Ok(doc)
}
