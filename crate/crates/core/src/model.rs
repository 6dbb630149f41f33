//! Domain types shared across the crate: return panels, sector
//! classifications, loading masks and fitted factor models.
//!
//! The factor model is `X = ΛF + ε` with `F ~ N(0, I_m)` and
//! `ε ~ N(0, diag(ψ))`; the mean is taken to be zero, so panels are
//! demeaned before fitting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Lower bound on unique variances (return² units).
pub const PSI_FLOOR: f64 = 1e-8;

/// Number of IBES sectors, and therefore of sector factor columns.
pub const N_SECTORS: usize = 11;

/// Smallest admissible factor count for a sector model: 11 sector
/// columns plus at least one market column.
pub const MIN_SECTOR_FACTORS: usize = N_SECTORS + 1;

/// IBES sector classification, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sector {
    Finance = 1,
    HealthCare = 2,
    ConsumerNonDurables = 3,
    ConsumerServices = 4,
    ConsumerDurables = 5,
    Energy = 6,
    Transportation = 7,
    Technology = 8,
    BasicIndustries = 9,
    CapitalGoods = 10,
    PublicUtilities = 11,
}

impl Sector {
    pub const ALL: [Sector; N_SECTORS] = [
        Sector::Finance,
        Sector::HealthCare,
        Sector::ConsumerNonDurables,
        Sector::ConsumerServices,
        Sector::ConsumerDurables,
        Sector::Energy,
        Sector::Transportation,
        Sector::Technology,
        Sector::BasicIndustries,
        Sector::CapitalGoods,
        Sector::PublicUtilities,
    ];

    /// The 1-based IBES code.
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based factor column.
    pub fn column(self) -> usize {
        self as usize - 1
    }

    pub fn from_code(code: u8) -> Option<Sector> {
        (1..=N_SECTORS as u8)
            .contains(&code)
            .then(|| Sector::ALL[code as usize - 1])
    }

    pub fn name(self) -> &'static str {
        match self {
            Sector::Finance => "FINANCE",
            Sector::HealthCare => "HEALTH CARE",
            Sector::ConsumerNonDurables => "CONSUMER NON-DURABLES",
            Sector::ConsumerServices => "CONSUMER SERVICES",
            Sector::ConsumerDurables => "CONSUMER DURABLES",
            Sector::Energy => "ENERGY",
            Sector::Transportation => "TRANSPORTATION",
            Sector::Technology => "TECHNOLOGY",
            Sector::BasicIndustries => "BASIC INDUSTRIES",
            Sector::CapitalGoods => "CAPITAL GOODS",
            Sector::PublicUtilities => "PUBLIC UTILITIES",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{}", self.code(), self.name())
    }
}

/// A stock's classification: one sector, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Membership {
    Sector(Sector),
    Unclassified,
}

impl Membership {
    pub const UNCLASSIFIED_LABEL: &'static str = "UNCLASSIFIED";

    pub fn sector(self) -> Option<Sector> {
        match self {
            Membership::Sector(s) => Some(s),
            Membership::Unclassified => None,
        }
    }
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Membership::Sector(s) => write!(f, "{}", s.code()),
            Membership::Unclassified => f.write_str(Self::UNCLASSIFIED_LABEL),
        }
    }
}

impl FromStr for Membership {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case(Self::UNCLASSIFIED_LABEL) {
            return Ok(Membership::Unclassified);
        }
        s.parse::<u8>()
            .ok()
            .and_then(Sector::from_code)
            .map(Membership::Sector)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "sector code `{s}` is not in 1..=11 or UNCLASSIFIED"
                ))
            })
    }
}

impl Serialize for Membership {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Membership {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Static assignment of stock ids to sectors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectorMap {
    assignments: BTreeMap<String, Membership>,
}

impl SectorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Membership)>,
        S: Into<String>,
    {
        Self {
            assignments: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn insert(&mut self, stock_id: impl Into<String>, membership: Membership) {
        self.assignments.insert(stock_id.into(), membership);
    }

    pub fn get(&self, stock_id: &str) -> Option<Membership> {
        self.assignments.get(stock_id).copied()
    }

    pub fn membership(&self, stock_id: &str) -> Result<Membership> {
        self.get(stock_id)
            .ok_or_else(|| Error::UnknownStock(stock_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Membership)> {
        self.assignments.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// The fixed IBES label table, in code order.
    pub fn sector_names() -> [&'static str; N_SECTORS] {
        Sector::ALL.map(Sector::name)
    }
}

/// `n × p` panel of daily log returns; row `j` is a stock, column `i` a day.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    stock_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    values: DMatrix<f64>,
    demeaned: bool,
}

impl ReturnsPanel {
    pub fn new(
        stock_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        values: DMatrix<f64>,
        demeaned: bool,
    ) -> Result<Self> {
        if values.nrows() != stock_ids.len() || values.ncols() != dates.len() {
            return Err(Error::DimensionMismatch(format!(
                "panel is {}x{} but has {} stock ids and {} dates",
                values.nrows(),
                values.ncols(),
                stock_ids.len(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invariant("panel dates must be strictly increasing".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Invariant(format!(
                "non-finite return for {} on {}",
                stock_ids[row], dates[col]
            )));
        }
        let panel = Self {
            stock_ids,
            dates,
            values,
            demeaned,
        };
        if demeaned {
            let tol = 1e-9 * panel.n_days().max(1) as f64;
            for (j, row) in panel.values.row_iter().enumerate() {
                if row.sum().abs() > tol {
                    return Err(Error::Invariant(format!(
                        "row {} is flagged demeaned but sums to {:e}",
                        panel.stock_ids[j],
                        row.sum()
                    )));
                }
            }
        }
        Ok(panel)
    }

    /// Panel with synthetic, consecutive daily dates starting 2000-01-01.
    pub fn with_default_dates(stock_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = start.iter_days().take(values.ncols()).collect();
        Self::new(stock_ids, dates, values, false)
    }

    pub fn stock_ids(&self) -> &[String] {
        &self.stock_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_demeaned(&self) -> bool {
        self.demeaned
    }

    /// Number of stocks `n`.
    pub fn n_stocks(&self) -> usize {
        self.values.nrows()
    }

    /// Number of observations `p`.
    pub fn n_days(&self) -> usize {
        self.values.ncols()
    }

    pub(crate) fn into_parts(self) -> (Vec<String>, Vec<NaiveDate>, DMatrix<f64>) {
        (self.stock_ids, self.dates, self.values)
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(rows);
        let ids = rows.iter().map(|&r| self.stock_ids[r].clone()).collect();
        Self::new(ids, self.dates.clone(), values, self.demeaned)
    }
}

/// Whether a mask encodes the sector layout or the classic dense model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskLayout {
    /// 11 sector columns, then `m − 11` market columns.
    Sector,
    /// Every loading free.
    Dense,
}

/// Permitted nonzero pattern of the loading matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMask {
    pattern: DMatrix<bool>,
    layout: MaskLayout,
}

impl LoadingMask {
    /// Sector-constrained mask: stock `j` may load on its own sector column
    /// and on every market column.
    pub fn sector(sectors: &SectorMap, stock_ids: &[String], m: usize) -> Result<Self> {
        if m < MIN_SECTOR_FACTORS {
            return Err(Error::InvalidArgument(format!(
                "sector model needs m >= {MIN_SECTOR_FACTORS} (11 sector + at least 1 market factor), got {m}"
            )));
        }
        let mut pattern = DMatrix::from_element(stock_ids.len(), m, false);
        for (j, id) in stock_ids.iter().enumerate() {
            if let Membership::Sector(s) = sectors.membership(id)? {
                pattern[(j, s.column())] = true;
            }
            for k in N_SECTORS..m {
                pattern[(j, k)] = true;
            }
        }
        Ok(Self {
            pattern,
            layout: MaskLayout::Sector,
        })
    }

    /// All-true mask of the classic factor model.
    pub fn dense(n: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        Ok(Self {
            pattern: DMatrix::from_element(n, m, true),
            layout: MaskLayout::Dense,
        })
    }

    /// Rebuild from a stored pattern, checking the layout's invariants.
    pub fn from_pattern(pattern: DMatrix<bool>, layout: MaskLayout) -> Result<Self> {
        let (n, m) = pattern.shape();
        match layout {
            MaskLayout::Dense => {
                if m == 0 || pattern.iter().any(|b| !b) {
                    return Err(Error::Invariant("dense mask must be all true".into()));
                }
            }
            MaskLayout::Sector => {
                if m < MIN_SECTOR_FACTORS {
                    return Err(Error::Invariant(format!(
                        "sector mask has {m} columns, needs >= {MIN_SECTOR_FACTORS}"
                    )));
                }
                for j in 0..n {
                    let sector_hits = (0..N_SECTORS).filter(|&k| pattern[(j, k)]).count();
                    if sector_hits > 1 {
                        return Err(Error::Invariant(format!(
                            "row {j} is enabled on {sector_hits} sector columns"
                        )));
                    }
                    if (N_SECTORS..m).any(|k| !pattern[(j, k)]) {
                        return Err(Error::Invariant(format!(
                            "row {j} has a disabled market column"
                        )));
                    }
                }
            }
        }
        Ok(Self { pattern, layout })
    }

    pub fn pattern(&self) -> &DMatrix<bool> {
        &self.pattern
    }

    pub fn layout(&self) -> MaskLayout {
        self.layout
    }

    pub fn n_stocks(&self) -> usize {
        self.pattern.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.pattern.ncols()
    }

    pub fn n_sector_factors(&self) -> usize {
        match self.layout {
            MaskLayout::Sector => N_SECTORS,
            MaskLayout::Dense => 0,
        }
    }

    pub fn n_market_factors(&self) -> usize {
        self.n_factors() - self.n_sector_factors()
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.pattern[(row, col)]
    }

    /// Column indices `I_j` a row may load on, ascending.
    pub fn row_support(&self, row: usize) -> Vec<usize> {
        (0..self.n_factors()).filter(|&k| self.pattern[(row, k)]).collect()
    }

    /// Row indices permitted in a column, ascending.
    pub fn column_support(&self, col: usize) -> Vec<usize> {
        (0..self.n_stocks()).filter(|&j| self.pattern[(j, col)]).collect()
    }

    pub fn is_all_true(&self) -> bool {
        self.pattern.iter().all(|&b| b)
    }

    /// Sector names for the first 11 columns then `MKT1..`; `F1..Fm` when dense.
    pub fn factor_labels(&self) -> Vec<String> {
        match self.layout {
            MaskLayout::Sector => Sector::ALL
                .iter()
                .map(|s| s.name().to_string())
                .chain((1..=self.n_market_factors()).map(|i| format!("MKT{i}")))
                .collect(),
            MaskLayout::Dense => (1..=self.n_factors()).map(|i| format!("F{i}")).collect(),
        }
    }
}

/// Sector-constrained mask over `stock_ids` with `m` factors.
pub fn build_mask(sectors: &SectorMap, stock_ids: &[String], m: usize) -> Result<LoadingMask> {
    LoadingMask::sector(sectors, stock_ids, m)
}

/// Zero every entry the mask forbids.
pub fn apply_mask(lambda: &DMatrix<f64>, mask: &LoadingMask) -> Result<DMatrix<f64>> {
    if lambda.shape() != mask.pattern.shape() {
        return Err(Error::DimensionMismatch(format!(
            "loadings are {:?}, mask is {:?}",
            lambda.shape(),
            mask.pattern.shape()
        )));
    }
    Ok(lambda.zip_map(&mask.pattern, |v, keep| if keep { v } else { 0.0 }))
}

/// Loadings `Λ` (n × m), unique variances `ψ` (n) and the mask they respect.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    stock_ids: Vec<String>,
    lambda: DMatrix<f64>,
    psi: DVector<f64>,
    mask: LoadingMask,
    factor_labels: Vec<String>,
}

impl FactorModel {
    pub fn new(
        stock_ids: Vec<String>,
        lambda: DMatrix<f64>,
        psi: DVector<f64>,
        mask: LoadingMask,
    ) -> Result<Self> {
        let labels = mask.factor_labels();
        Self::with_labels(stock_ids, lambda, psi, mask, labels)
    }

    pub fn with_labels(
        stock_ids: Vec<String>,
        lambda: DMatrix<f64>,
        psi: DVector<f64>,
        mask: LoadingMask,
        factor_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, m) = lambda.shape();
        if mask.pattern.shape() != (n, m) || psi.len() != n || stock_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "lambda {:?}, mask {:?}, psi {}, stock ids {}",
                (n, m),
                mask.pattern.shape(),
                psi.len(),
                stock_ids.len()
            )));
        }
        if factor_labels.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} factor labels for {m} factors",
                factor_labels.len()
            )));
        }
        for j in 0..n {
            for k in 0..m {
                let v = lambda[(j, k)];
                if !v.is_finite() {
                    return Err(Error::Invariant(format!("non-finite loading at ({j}, {k})")));
                }
                if !mask.allows(j, k) && v.to_bits() != 0 {
                    return Err(Error::Invariant(format!(
                        "loading ({j}, {k}) = {v} lies outside the mask"
                    )));
                }
            }
        }
        if let Some(j) = psi.iter().position(|&v| !v.is_finite() || v < PSI_FLOOR) {
            return Err(Error::Invariant(format!(
                "unique variance psi[{j}] = {} is below the floor {PSI_FLOOR:e}",
                psi[j]
            )));
        }
        Ok(Self {
            stock_ids,
            lambda,
            psi,
            mask,
            factor_labels,
        })
    }

    pub fn stock_ids(&self) -> &[String] {
        &self.stock_ids
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    pub fn mask(&self) -> &LoadingMask {
        &self.mask
    }

    pub fn factor_labels(&self) -> &[String] {
        &self.factor_labels
    }

    pub fn n_stocks(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.lambda.ncols()
    }

    /// `ΛΛᵀ + diag(ψ)`.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        implied_covariance(&self.lambda, &self.psi)
    }
}

/// `ΛΛᵀ + diag(ψ)`, symmetrized so the result is exactly symmetric.
pub fn implied_covariance(lambda: &DMatrix<f64>, psi: &DVector<f64>) -> DMatrix<f64> {
    let mut cov = lambda * lambda.transpose();
    let n = cov.nrows();
    for j in 0..n {
        for l in 0..j {
            let v = 0.5 * (cov[(j, l)] + cov[(l, j)]);
            cov[(j, l)] = v;
            cov[(l, j)] = v;
        }
        cov[(j, j)] += psi[j];
    }
    cov
}

/// Posterior factor moments for every observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// `m × p`, column `i` is `E(F | X_i)`.
    pub ef: DMatrix<f64>,
    /// `B = Σ_i E(FFᵀ | X_i)`, `m × m`.
    pub eff_sum: DMatrix<f64>,
    /// `A = Σ_i X_i E(F | X_i)ᵀ`, `n × m`.
    pub cross_sum: DMatrix<f64>,
}
