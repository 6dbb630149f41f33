//! Expectation maximization for classic and sector-constrained factor
//! models.
//!
//! One iteration runs the E-step at the current `(Λ, ψ)`, the loading
//! update (row-restricted to the mask's support `I_j`), then the unique
//! variance update. The expected log-likelihood `Q` is recorded after every
//! iteration with its additive constant dropped.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_det, spd_factor};
use crate::model::{
    implied_covariance, FactorModel, LoadingMask, MaskLayout, PosteriorMoments, ReturnsPanel,
    PSI_FLOOR,
};

/// ChaCha stream reserved for loading initialization.
const INIT_STREAM: u64 = 16;

/// How the starting loadings are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Masked normal draws everywhere, then each populated sector column
    /// is replaced by the leading principal component of its members.
    #[default]
    SectorPca,
    /// Masked normal draws only.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Optional early stop on relative change of `Q`.
    pub rel_tol: Option<f64>,
    pub seed: u64,
    /// Standard deviation of the random initial loadings.
    pub init_scale: f64,
    pub init: InitStrategy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            rel_tol: None,
            seed: 0,
            init_scale: 0.1,
            init: InitStrategy::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if let Some(tol) = self.rel_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidArgument(format!("rel_tol must be > 0, got {tol}")));
            }
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init_scale must be > 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Per-iteration objective values of a fit.
///
/// `loglik_per_iter` holds `Q` without its additive constant;
/// `marginal_loglik_per_iter` is the exact Gaussian log-likelihood under
/// `N(0, ΛΛᵀ + Ψ)`. Only the marginal is guaranteed nondecreasing: `Q`
/// evaluated at each iterate with its own posterior can dip while the
/// marginal still rises, most often on masked fits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTrace {
    pub loglik_per_iter: Vec<f64>,
    pub marginal_loglik_per_iter: Vec<f64>,
    pub iterations_run: usize,
    pub converged_by_tol: bool,
}

impl FitTrace {
    pub fn final_loglik(&self) -> Option<f64> {
        self.loglik_per_iter.last().copied()
    }

    /// First step `i` where `Q[i+1] < Q[i] − slack·max(1, |Q[i]|)`.
    pub fn first_decrease(&self, slack: f64) -> Option<usize> {
        self.loglik_per_iter
            .windows(2)
            .position(|w| w[1] < w[0] - slack * w[0].abs().max(1.0))
    }
}

/// Which loading update a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadingUpdate {
    /// Row-wise `Λ(j, I_j) = A(j, I_j) B(I_j, I_j)⁻¹`.
    Constrained,
    /// `Λ = A B⁻¹`; only valid with an all-true mask.
    Unconstrained,
}

struct Posterior {
    moments: PosteriorMoments,
    sigma_chol: Cholesky<f64, Dyn>,
}

fn check_shapes(lambda: &DMatrix<f64>, psi: &DVector<f64>, x: &DMatrix<f64>) -> Result<()> {
    if lambda.nrows() != x.nrows() || psi.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} stocks (psi {}), panel has {}",
            lambda.nrows(),
            psi.len(),
            x.nrows()
        )));
    }
    if lambda.ncols() == 0 {
        return Err(Error::InvalidArgument("model has no factors".into()));
    }
    Ok(())
}

/// `βᵀ = (Ψ + ΛΛᵀ)⁻¹ Λ`, shape `n × m`.
fn beta_transpose(
    lambda: &DMatrix<f64>,
    psi: &DVector<f64>,
) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let sigma = implied_covariance(lambda, psi);
    let chol = spd_factor(&sigma, "implied covariance Ψ+ΛΛᵀ")?;
    let beta_t = chol.solve(lambda);
    Ok((beta_t, chol))
}

fn posterior(lambda: &DMatrix<f64>, psi: &DVector<f64>, x: &DMatrix<f64>) -> Result<Posterior> {
    check_shapes(lambda, psi, x)?;
    let (n, m) = lambda.shape();
    let p = x.ncols();
    let (beta_t, sigma_chol) = beta_transpose(lambda, psi)?;

    // E(F|X_i) = β X_i, one column per observation. Each column is a fixed
    // sequential dot product, so the result does not depend on the thread
    // count.
    let mut ef = DMatrix::<f64>::zeros(m, p);
    ef.as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, out)| {
            let xi = x.column(i);
            for (r, slot) in out.iter_mut().enumerate() {
                let br = beta_t.column(r);
                let mut acc = 0.0;
                for j in 0..n {
                    acc += br[j] * xi[j];
                }
                *slot = acc;
            }
        });

    // B = p (I − βΛ) + (βX)(βX)ᵀ
    let beta_lambda = beta_t.transpose() * lambda;
    let mut eff_sum = &ef * ef.transpose();
    for r in 0..m {
        for c in 0..m {
            let id = if r == c { 1.0 } else { 0.0 };
            eff_sum[(r, c)] += p as f64 * (id - beta_lambda[(r, c)]);
        }
    }
    symmetrize(&mut eff_sum);
    let cross_sum = x * ef.transpose();

    Ok(Posterior {
        moments: PosteriorMoments {
            ef,
            eff_sum,
            cross_sum,
        },
        sigma_chol,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..r {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Posterior weights `β = Λᵀ(Ψ + ΛΛᵀ)⁻¹`, shape `m × n`.
pub fn posterior_weights(model: &FactorModel) -> Result<DMatrix<f64>> {
    Ok(beta_transpose(model.lambda(), model.psi())?.0.transpose())
}

/// Posterior factor moments of every observation under `model`.
pub fn e_step(model: &FactorModel, panel: &ReturnsPanel) -> Result<PosteriorMoments> {
    Ok(posterior(model.lambda(), model.psi(), panel.values())?.moments)
}

/// `Λ = A B⁻¹`, solved as `B Λᵀ = Aᵀ`.
pub fn m_step_unconstrained(moments: &PosteriorMoments) -> Result<DMatrix<f64>> {
    let chol = spd_factor(&moments.eff_sum, "factor second moment B")?;
    Ok(chol.solve(&moments.cross_sum.transpose()).transpose())
}

/// Row-restricted loading update: for each stock, solve the
/// `|I_j| × |I_j|` system on its permitted columns and leave the rest at
/// exactly zero. Rows sharing a support share one factorization.
pub fn m_step_constrained(moments: &PosteriorMoments, mask: &LoadingMask) -> Result<DMatrix<f64>> {
    let a = &moments.cross_sum;
    let b = &moments.eff_sum;
    let (n, m) = a.shape();
    if mask.pattern().shape() != (n, m) || b.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "A is {:?}, B is {:?}, mask is {:?}",
            a.shape(),
            b.shape(),
            mask.pattern().shape()
        )));
    }

    let mut factors: BTreeMap<Vec<usize>, Cholesky<f64, Dyn>> = BTreeMap::new();
    let mut lambda = DMatrix::<f64>::zeros(n, m);
    for j in 0..n {
        let support = mask.row_support(j);
        if support.is_empty() {
            continue;
        }
        if !factors.contains_key(&support) {
            let sub = b.select_rows(&support).select_columns(&support);
            let chol = spd_factor(&sub, "B submatrix").map_err(|e| {
                Error::Numerical(format!(
                    "row {j} with support {:?}: {e}",
                    support.iter().map(|k| k + 1).collect::<Vec<_>>()
                ))
            })?;
            factors.insert(support.clone(), chol);
        }
        let chol = &factors[&support];
        let rhs = DVector::from_iterator(support.len(), support.iter().map(|&k| a[(j, k)]));
        let row = chol.solve(&rhs);
        for (&k, v) in support.iter().zip(row.iter()) {
            lambda[(j, k)] = *v;
        }
    }
    Ok(lambda)
}

/// `ψ_j = (Σ_i X_ji² − (Λ_new Aᵀ)_jj) / p`, floored at [`PSI_FLOOR`].
pub fn m_step_psi(
    panel: &ReturnsPanel,
    moments: &PosteriorMoments,
    lambda_new: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let sumsq = row_sum_squares(panel.values());
    psi_update(&sumsq, panel.n_days(), &moments.cross_sum, lambda_new)
}

fn row_sum_squares(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.iter().map(|v| v * v).sum()))
}

fn psi_update(
    sumsq: &DVector<f64>,
    p: usize,
    cross_sum: &DMatrix<f64>,
    lambda_new: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if cross_sum.shape() != lambda_new.shape() || sumsq.len() != lambda_new.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A is {:?}, new loadings are {:?}, panel has {} rows",
            cross_sum.shape(),
            lambda_new.shape(),
            sumsq.len()
        )));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("panel has no observations".into()));
    }
    Ok(DVector::from_fn(sumsq.len(), |j, _| {
        let explained: f64 = lambda_new
            .row(j)
            .iter()
            .zip(cross_sum.row(j).iter())
            .map(|(l, a)| l * a)
            .sum();
        let v = (sumsq[j] - explained) / p as f64;
        if v.is_finite() {
            v.max(PSI_FLOOR)
        } else {
            PSI_FLOOR
        }
    }))
}

fn q_value(
    lambda: &DMatrix<f64>,
    psi: &DVector<f64>,
    sumsq: &DVector<f64>,
    p: usize,
    moments: &PosteriorMoments,
) -> Result<f64> {
    if let Some(j) = psi.iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Numerical(format!("psi[{j}] = {} is not positive", psi[j])));
    }
    let log_det_psi: f64 = psi.iter().map(|v| v.ln()).sum();
    let mut quad = 0.0;
    let mut cross = 0.0;
    for j in 0..lambda.nrows() {
        quad += 0.5 * sumsq[j] / psi[j];
        let lr: f64 = lambda
            .row(j)
            .iter()
            .zip(moments.cross_sum.row(j).iter())
            .map(|(l, a)| l * a)
            .sum();
        cross += lr / psi[j];
    }
    // ½ tr(Λᵀ Ψ⁻¹ Λ B)
    let scaled = DMatrix::from_fn(lambda.nrows(), lambda.ncols(), |j, k| lambda[(j, k)] / psi[j]);
    let g = lambda.transpose() * scaled;
    let trace_term = 0.5 * g.component_mul(&moments.eff_sum).sum();
    Ok(-0.5 * p as f64 * log_det_psi - quad + cross - trace_term)
}

/// Expected complete-data log-likelihood `Q` at `model`, with posterior
/// moments taken under the same model and the additive constant dropped.
pub fn expected_loglik(model: &FactorModel, panel: &ReturnsPanel) -> Result<f64> {
    let post = posterior(model.lambda(), model.psi(), panel.values())?;
    let sumsq = row_sum_squares(panel.values());
    q_value(model.lambda(), model.psi(), &sumsq, panel.n_days(), &post.moments)
}

fn marginal_from_chol(chol: &Cholesky<f64, Dyn>, x: &DMatrix<f64>) -> f64 {
    let (n, p) = x.shape();
    let solved = chol.solve(x);
    let quad = solved.component_mul(x).sum();
    -0.5 * (p as f64 * (n as f64 * std::f64::consts::TAU.ln() + log_det(chol)) + quad)
}

/// Marginal log-likelihood from the moments of the same model. Uses
/// `Σ⁻¹ = Ψ⁻¹ − Ψ⁻¹Λβ`, so `Σ_i X_iᵀΣ⁻¹X_i = Σ_j (Σ_i X_ji² − (ΛAᵀ)_jj) / ψ_j`.
fn marginal_from_moments(
    chol: &Cholesky<f64, Dyn>,
    lambda: &DMatrix<f64>,
    psi: &DVector<f64>,
    sumsq: &DVector<f64>,
    p: usize,
    cross_sum: &DMatrix<f64>,
) -> f64 {
    let n = lambda.nrows();
    let quad: f64 = (0..n)
        .map(|j| {
            let explained: f64 = lambda
                .row(j)
                .iter()
                .zip(cross_sum.row(j).iter())
                .map(|(l, a)| l * a)
                .sum();
            (sumsq[j] - explained) / psi[j]
        })
        .sum();
    -0.5 * (p as f64 * (n as f64 * std::f64::consts::TAU.ln() + log_det(chol)) + quad)
}

/// Exact log-likelihood of the panel under `N(0, ΛΛᵀ + Ψ)`.
pub fn marginal_loglik(model: &FactorModel, panel: &ReturnsPanel) -> Result<f64> {
    check_shapes(model.lambda(), model.psi(), panel.values())?;
    let sigma = model.implied_covariance();
    let chol = spd_factor(&sigma, "implied covariance Ψ+ΛΛᵀ")?;
    Ok(marginal_from_chol(&chol, panel.values()))
}

/// Starting loadings and unique variances.
pub fn initialize(
    panel: &ReturnsPanel,
    mask: &LoadingMask,
    config: &FitConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let x = panel.values();
    let (n, p) = x.shape();
    let m = mask.n_factors();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    let normal = Normal::new(0.0, config.init_scale)
        .map_err(|e| Error::InvalidArgument(format!("init_scale: {e}")))?;

    let mut lambda = DMatrix::<f64>::zeros(n, m);
    for j in 0..n {
        for k in 0..m {
            let draw = normal.sample(&mut rng);
            if mask.allows(j, k) {
                lambda[(j, k)] = draw;
            }
        }
    }

    if config.init == InitStrategy::SectorPca && mask.layout() == MaskLayout::Sector {
        for k in 0..mask.n_sector_factors() {
            let members = mask.column_support(k);
            if members.is_empty() {
                continue;
            }
            if let Some(loadings) = leading_component(&x.select_rows(&members)) {
                for (&j, v) in members.iter().zip(loadings.iter()) {
                    lambda[(j, k)] = *v;
                }
            }
        }
    }

    let psi = DVector::from_fn(n, |j, _| {
        let row = x.row(j);
        let mean = row.sum() / p as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64;
        var.max(PSI_FLOOR)
    });
    Ok((lambda, psi))
}

/// Leading eigenvector of the members' second-moment matrix, scaled by
/// the square root of its excess over the mean remaining eigenvalue.
fn leading_component(rows: &DMatrix<f64>) -> Option<DVector<f64>> {
    let (s, p) = rows.shape();
    let cov = rows * rows.transpose() / p as f64;
    let eig = SymmetricEigen::new(cov);
    let (top, &top_val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let noise = if s > 1 {
        (eig.eigenvalues.sum() - top_val) / (s - 1) as f64
    } else {
        0.5 * top_val
    };
    let excess = top_val - noise;
    if excess.is_nan() || excess <= 0.0 {
        return None;
    }
    let mut v = eig.eigenvectors.column(top).into_owned() * excess.sqrt();
    if v.sum() < 0.0 {
        v.neg_mut();
    }
    Some(v)
}

/// Fit a factor model by EM with the row-constrained loading update.
pub fn fit(
    panel: &ReturnsPanel,
    mask: &LoadingMask,
    config: &FitConfig,
) -> Result<(FactorModel, FitTrace)> {
    fit_with(panel, mask, config, LoadingUpdate::Constrained)
}

/// [`fit`] with an explicit choice of loading update.
pub fn fit_with(
    panel: &ReturnsPanel,
    mask: &LoadingMask,
    config: &FitConfig,
    update: LoadingUpdate,
) -> Result<(FactorModel, FitTrace)> {
    fit_impl(panel, mask, config, update, true)
}

/// [`fit`] on a panel that was not demeaned; its rows are taken to have
/// zero mean as they stand.
pub fn fit_uncentered(
    panel: &ReturnsPanel,
    mask: &LoadingMask,
    config: &FitConfig,
) -> Result<(FactorModel, FitTrace)> {
    fit_impl(panel, mask, config, LoadingUpdate::Constrained, false)
}

fn fit_impl(
    panel: &ReturnsPanel,
    mask: &LoadingMask,
    config: &FitConfig,
    update: LoadingUpdate,
    require_centered: bool,
) -> Result<(FactorModel, FitTrace)> {
    config.validate()?;
    if require_centered && !panel.is_demeaned() {
        return Err(Error::InvalidArgument(
            "panel must be demeaned before fitting".into(),
        ));
    }
    let (n, p) = panel.values().shape();
    if n == 0 || p < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1 stock and 2 observations, got {n} x {p}"
        )));
    }
    if mask.n_stocks() != n {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} rows, panel has {n}",
            mask.n_stocks()
        )));
    }
    if update == LoadingUpdate::Unconstrained && !mask.is_all_true() {
        return Err(Error::InvalidArgument(
            "unconstrained loading update requires an all-true mask".into(),
        ));
    }

    let x = panel.values();
    let sumsq = row_sum_squares(x);
    let (mut lambda, mut psi) = initialize(panel, mask, config)?;
    let at = |iteration: usize| move |e: Error| Error::AtIteration {
        iteration,
        source: Box::new(e),
    };
    let mut post = posterior(&lambda, &psi, x).map_err(at(0))?;

    let mut trace = FitTrace::default();
    for it in 1..=config.max_iterations {
        lambda = match update {
            LoadingUpdate::Constrained => m_step_constrained(&post.moments, mask),
            LoadingUpdate::Unconstrained => m_step_unconstrained(&post.moments),
        }
        .map_err(at(it))?;
        psi = psi_update(&sumsq, p, &post.moments.cross_sum, &lambda).map_err(at(it))?;
        post = posterior(&lambda, &psi, x).map_err(at(it))?;

        let q = q_value(&lambda, &psi, &sumsq, p, &post.moments).map_err(at(it))?;
        let prev = trace.loglik_per_iter.last().copied();
        trace.loglik_per_iter.push(q);
        trace.marginal_loglik_per_iter.push(marginal_from_moments(
            &post.sigma_chol,
            &lambda,
            &psi,
            &sumsq,
            p,
            &post.moments.cross_sum,
        ));
        trace.iterations_run = it;

        if let (Some(tol), Some(prev)) = (config.rel_tol, prev) {
            if (q - prev).abs() <= tol * prev.abs() {
                trace.converged_by_tol = true;
                break;
            }
        }
    }

    let model = FactorModel::new(panel.stock_ids().to_vec(), lambda, psi, mask.clone())?;
    Ok((model, trace))
}
