//! Synthetic sector-structured factor models and return panels drawn from
//! them.
//!
//! Every random component has its own ChaCha stream (same seed, different
//! stream id), so changing how one component is drawn leaves the others'
//! draws untouched.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_mask, FactorModel, Membership, ReturnsPanel, Sector, SectorMap, MIN_SECTOR_FACTORS,
    N_SECTORS,
};
use crate::pipeline::PriceTable;

const SECTOR_LOADING_STREAM: u64 = 0;
const MARKET_LOADING_STREAM: u64 = 1;
const PSI_STREAM: u64 = 2;
const FACTOR_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

/// Price level on the day before the first return.
pub const BASE_PRICE: f64 = 100.0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Stocks per sector, indexed by sector code − 1.
    pub n_per_sector: [usize; N_SECTORS],
    pub n_unclassified: usize,
    pub m: usize,
    pub p: usize,
    pub sector_loading_range: (f64, f64),
    pub market_loading_scale: f64,
    pub psi_range: (f64, f64),
    /// One shared sign per sector column.
    pub sector_sign_coherent: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let mut n_per_sector = [0; N_SECTORS];
        n_per_sector[Sector::Finance.column()] = 10;
        n_per_sector[Sector::Energy.column()] = 10;
        n_per_sector[Sector::Technology.column()] = 10;
        Self {
            n_per_sector,
            n_unclassified: 0,
            m: 13,
            p: 5000,
            sector_loading_range: (0.5, 1.0),
            market_loading_scale: 0.3,
            psi_range: (0.2, 0.5),
            sector_sign_coherent: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m < MIN_SECTOR_FACTORS {
            return bad(format!("m must be >= {MIN_SECTOR_FACTORS}, got {}", self.m));
        }
        if self.p < 2 {
            return bad(format!("p must be >= 2, got {}", self.p));
        }
        if self.n_stocks() == 0 {
            return bad("spec has no stocks".into());
        }
        let (lo, hi) = self.sector_loading_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("sector loading range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        let (lo, hi) = self.psi_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("psi range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if !(self.market_loading_scale > 0.0 && self.market_loading_scale.is_finite()) {
            return bad(format!(
                "market loading scale must be > 0, got {}",
                self.market_loading_scale
            ));
        }
        Ok(())
    }

    pub fn n_stocks(&self) -> usize {
        self.n_per_sector.iter().sum::<usize>() + self.n_unclassified
    }

    /// Stocks are ordered by sector code, then unclassified; ids look like
    /// `S07_002` and `U_000`.
    pub fn members(&self) -> Vec<(String, Membership)> {
        let mut out = Vec::with_capacity(self.n_stocks());
        for (s, &count) in Sector::ALL.iter().zip(self.n_per_sector.iter()) {
            for i in 0..count {
                out.push((format!("S{:02}_{i:03}", s.code()), Membership::Sector(*s)));
            }
        }
        for i in 0..self.n_unclassified {
            out.push((format!("U_{i:03}"), Membership::Unclassified));
        }
        out
    }

    pub fn stock_ids(&self) -> Vec<String> {
        self.members().into_iter().map(|(id, _)| id).collect()
    }

    pub fn sector_map(&self) -> SectorMap {
        SectorMap::from_pairs(self.members())
    }
}

/// Draw a ground-truth sector model.
pub fn sample_model(spec: &SynthSpec) -> Result<FactorModel> {
    spec.validate()?;
    let ids = spec.stock_ids();
    let sectors = spec.sector_map();
    let mask = build_mask(&sectors, &ids, spec.m)?;
    let n = ids.len();

    let (lo, hi) = spec.sector_loading_range;
    let magnitude = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut lambda = DMatrix::<f64>::zeros(n, spec.m);

    let mut rng = stream(spec.seed, SECTOR_LOADING_STREAM);
    for k in 0..N_SECTORS {
        let shared_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for j in mask.column_support(k) {
            let sign = if spec.sector_sign_coherent {
                shared_sign
            } else if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            };
            lambda[(j, k)] = sign * magnitude.sample(&mut rng);
        }
    }

    let mut rng = stream(spec.seed, MARKET_LOADING_STREAM);
    for j in 0..n {
        for k in N_SECTORS..spec.m {
            let z: f64 = StandardNormal.sample(&mut rng);
            lambda[(j, k)] = spec.market_loading_scale * z;
        }
    }

    let (lo, hi) = spec.psi_range;
    let psi_dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream(spec.seed, PSI_STREAM);
    let psi = DVector::from_fn(n, |_, _| psi_dist.sample(&mut rng));

    FactorModel::new(ids, lambda, psi, mask)
}

/// Draw `p` i.i.d. observations `ΛF_i + ε_i`, `F_i ~ N(0, I)`,
/// `ε_i ~ N(0, diag ψ)`. The panel is not demeaned. Dates are business
/// days starting the day after 2000-01-03.
pub fn sample_panel(model: &FactorModel, p: usize, seed: u64) -> Result<ReturnsPanel> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("p must be >= 2, got {p}")));
    }
    let (n, m) = model.lambda().shape();
    let mut rng = stream(seed, FACTOR_STREAM);
    let factors = DMatrix::<f64>::from_fn(m, p, |_, _| StandardNormal.sample(&mut rng));
    let mut rng = stream(seed, NOISE_STREAM);
    let sd = model.psi().map(f64::sqrt);
    // column-major fill: one observation at a time
    let noise = DMatrix::<f64>::from_fn(n, p, |j, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd[j] * z
    });
    let values = model.lambda() * factors + noise;
    let dates = business_days(first_price_date(), p + 1).split_off(1);
    ReturnsPanel::new(model.stock_ids().to_vec(), dates, values, false)
}

fn first_price_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

/// `count` consecutive weekdays starting at `start` (moved forward if it
/// falls on a weekend).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(count)
        .collect()
}

fn previous_business_day(date: NaiveDate) -> NaiveDate {
    let mut d = date.pred_opt().expect("date in range");
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d = d.pred_opt().expect("date in range");
    }
    d
}

/// Close prices `BASE_PRICE · exp(cumulative return)`, with one leading
/// base date on the business day before the first return.
pub fn reconstruct_prices(panel: &ReturnsPanel) -> Result<PriceTable> {
    let (n, p) = panel.values().shape();
    let first = *panel
        .dates()
        .first()
        .ok_or_else(|| Error::InvalidArgument("panel has no dates".into()))?;
    let mut dates = Vec::with_capacity(p + 1);
    dates.push(previous_business_day(first));
    dates.extend_from_slice(panel.dates());
    let mut close = DMatrix::<f64>::zeros(n, p + 1);
    for j in 0..n {
        let mut cum = 0.0;
        close[(j, 0)] = BASE_PRICE;
        for i in 0..p {
            cum += panel.values()[(j, i)];
            close[(j, i + 1)] = BASE_PRICE * cum.exp();
        }
    }
    PriceTable::new(panel.stock_ids().to_vec(), dates, close)
}
