//! Interpretability reports for fitted loadings: which components of a
//! factor are large, which sectors they come from, and whether they share
//! a sign.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorModel, Membership, SectorMap};

/// Default relative magnitude cut for selecting components.
pub const DEFAULT_THRESHOLD: f64 = 0.10;

/// How the coherence statistic is defined, carried in every report.
pub const COHERENCE_DEFINITION: &str = "sign coherence = max(#positive, #negative) / (#positive + #negative) \
over the counted components of a factor, exact zeros excluded; 1.0 means every counted component has the same sign";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub stock_id: String,
    pub loading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Sign {
    pub fn flipped(self) -> Sign {
        match self {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
        }
    }
}

/// Which components enter the coherence count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoherenceScope {
    #[default]
    Thresholded,
    /// Every nonzero loading in the factor's masked support.
    AllNonzero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    /// 1-based factor column.
    pub factor_index: usize,
    pub label: String,
    pub support_size: usize,
    pub selected_components: Vec<Component>,
    pub sector_histogram: BTreeMap<Membership, usize>,
    /// `None` when the factor has no nonzero loading.
    pub sign_coherence: Option<f64>,
    pub dominant_sign: Option<Sign>,
}

/// Entries with `|λ_j| ≥ threshold · max |λ|`, largest magnitude first,
/// ties by stock id.
pub fn threshold_components(
    column: &[f64],
    stock_ids: &[String],
    threshold: f64,
) -> Result<Vec<Component>> {
    if column.len() != stock_ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} loadings for {} stock ids",
            column.len(),
            stock_ids.len()
        )));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let max = column.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 {
        return Err(Error::InvalidArgument("loading column is all zero".into()));
    }
    let cut = threshold * max;
    let mut selected: Vec<Component> = column
        .iter()
        .zip(stock_ids)
        .filter(|(v, _)| v.abs() >= cut)
        .map(|(v, id)| Component {
            stock_id: id.clone(),
            loading: *v,
        })
        .collect();
    selected.sort_by(|a, b| {
        b.loading
            .abs()
            .total_cmp(&a.loading.abs())
            .then_with(|| a.stock_id.cmp(&b.stock_id))
    });
    Ok(selected)
}

pub fn sector_histogram(
    selected: &[Component],
    sectors: &SectorMap,
) -> Result<BTreeMap<Membership, usize>> {
    let mut hist = BTreeMap::new();
    for c in selected {
        *hist.entry(sectors.membership(&c.stock_id)?).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Majority-sign share among nonzero loadings, and the majority sign
/// (`None` on a tie).
pub fn sign_coherence(selected: &[Component]) -> Result<(f64, Option<Sign>)> {
    let pos = selected.iter().filter(|c| c.loading > 0.0).count();
    let neg = selected.iter().filter(|c| c.loading < 0.0).count();
    if pos + neg == 0 {
        return Err(Error::InvalidArgument(
            "no nonzero components to measure sign coherence".into(),
        ));
    }
    let coherence = pos.max(neg) as f64 / (pos + neg) as f64;
    let sign = match pos.cmp(&neg) {
        Ordering::Greater => Some(Sign::Positive),
        Ordering::Less => Some(Sign::Negative),
        Ordering::Equal => None,
    };
    Ok((coherence, sign))
}

/// Components of factor `k` restricted to its masked support.
pub fn factor_support(model: &FactorModel, k: usize) -> (Vec<f64>, Vec<String>) {
    let rows = model.mask().column_support(k);
    let values = rows.iter().map(|&j| model.lambda()[(j, k)]).collect();
    let ids = rows.iter().map(|&j| model.stock_ids()[j].clone()).collect();
    (values, ids)
}

/// One report per factor column.
pub fn full_report(
    model: &FactorModel,
    sectors: &SectorMap,
    threshold: f64,
    scope: CoherenceScope,
) -> Result<Vec<FactorReport>> {
    let mut reports = Vec::with_capacity(model.n_factors());
    for k in 0..model.n_factors() {
        let (values, ids) = factor_support(model, k);
        let label = model.factor_labels()[k].clone();
        let active = values.iter().any(|v| *v != 0.0);
        let (selected, coherence, sign) = if active {
            let selected = threshold_components(&values, &ids, threshold)?;
            let counted: Vec<Component> = match scope {
                CoherenceScope::Thresholded => selected.clone(),
                CoherenceScope::AllNonzero => values
                    .iter()
                    .zip(&ids)
                    .map(|(v, id)| Component {
                        stock_id: id.clone(),
                        loading: *v,
                    })
                    .collect(),
            };
            let (c, s) = sign_coherence(&counted)?;
            (selected, Some(c), s)
        } else {
            (Vec::new(), None, None)
        };
        reports.push(FactorReport {
            factor_index: k + 1,
            label,
            support_size: ids.len(),
            sector_histogram: sector_histogram(&selected, sectors)?,
            selected_components: selected,
            sign_coherence: coherence,
            dominant_sign: sign,
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub threshold: f64,
    pub coherence_scope: CoherenceScope,
    pub coherence_definition: String,
    pub factors: Vec<FactorReport>,
}

impl ReportDocument {
    pub fn new(threshold: f64, scope: CoherenceScope, factors: Vec<FactorReport>) -> Self {
        Self {
            threshold,
            coherence_scope: scope,
            coherence_definition: COHERENCE_DEFINITION.to_string(),
            factors,
        }
    }

    /// Aligned plain-text summary, one line per factor.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "threshold {:.2} of max |loading|; coherence over {} components",
            self.threshold,
            match self.coherence_scope {
                CoherenceScope::Thresholded => "thresholded",
                CoherenceScope::AllNonzero => "all nonzero",
            }
        );
        let _ = writeln!(out, "{COHERENCE_DEFINITION}");
        let _ = writeln!(out);
        let label_w = self.factors.iter().map(|f| f.label.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:>3}  {:<label_w$}  {:>7}  {:>8}  {:>9}  {:>4}  sectors (code:count)",
            "#", "label", "support", "selected", "coherence", "sign"
        );
        for f in &self.factors {
            let coherence = f.sign_coherence.map_or("-".to_string(), |c| format!("{c:.3}"));
            let sign = match f.dominant_sign {
                Some(Sign::Positive) => "+1",
                Some(Sign::Negative) => "-1",
                None => "none",
            };
            let hist = f
                .sector_histogram
                .iter()
                .map(|(m, c)| format!("{m}:{c}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                "{:>3}  {:<label_w$}  {:>7}  {:>8}  {:>9}  {:>4}  {}",
                f.factor_index,
                f.label,
                f.support_size,
                f.selected_components.len(),
                coherence,
                sign,
                hist
            );
        }
        out
    }
}

/// `stock_id,sector_code,loading` rows for factor `k` over its support.
pub fn write_plot_data<W: Write>(
    writer: W,
    model: &FactorModel,
    sectors: &SectorMap,
    k: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stock_id", "sector_code", "loading"])?;
    let (values, ids) = factor_support(model, k);
    for (v, id) in values.iter().zip(&ids) {
        w.write_record([id.as_str(), &sectors.membership(id)?.to_string(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
