mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sector_factor::diagnostics::{sector_histogram, sign_coherence, threshold_components, Component};
use sector_factor::em::{
    e_step, expected_loglik, m_step_constrained, m_step_psi, m_step_unconstrained, marginal_loglik,
    posterior_weights,
};
use sector_factor::model::{FactorModel, LoadingMask, PosteriorMoments, ReturnsPanel, PSI_FLOOR};

#[test]
fn implied_covariance_matches_triple_loop() {
    for seed in 0..20 {
        let inst = small_instance(seed);
        let got = inst.model.implied_covariance();
        let want = implied_cov_oracle(inst.model.lambda(), inst.model.psi());
        assert!(rel_frob(&got, &want) <= 1e-12, "seed {seed}");
        assert_eq!(got, got.transpose());
    }
}

#[test]
fn random_4x13_implied_covariance() {
    let mut r = rng(4);
    let lambda = DMatrix::from_fn(4, 13, |_, _| normal(&mut r));
    let psi = DVector::from_fn(4, |j, _| 0.5 + j as f64);
    let model = FactorModel::new(ids(4), lambda.clone(), psi.clone(), LoadingMask::dense(4, 13).unwrap()).unwrap();
    assert!(rel_frob(&model.implied_covariance(), &implied_cov_oracle(&lambda, &psi)) <= 1e-12);
}

#[test]
fn e_step_matches_per_observation_oracle() {
    for seed in 0..20 {
        let inst = small_instance(seed);
        let got = e_step(&inst.model, &inst.panel).unwrap();
        let want = e_step_oracle(inst.model.lambda(), inst.model.psi(), inst.panel.values());
        assert!(rel_frob(&got.ef, &want.ef) <= 1e-9, "ef seed {seed}");
        assert!(rel_frob(&got.eff_sum, &want.eff_sum) <= 1e-9, "B seed {seed}");
        assert!(rel_frob(&got.cross_sum, &want.cross_sum) <= 1e-9, "A seed {seed}");
    }
}

#[test]
fn e_step_random_5x13_p7() {
    let mut r = rng(57);
    let lambda = DMatrix::from_fn(5, 13, |_, _| normal(&mut r));
    let psi = DVector::from_fn(5, |_, _| 0.2 + normal(&mut r).abs());
    let x = DMatrix::from_fn(5, 7, |_, _| normal(&mut r));
    let model = FactorModel::new(ids(5), lambda.clone(), psi.clone(), LoadingMask::dense(5, 13).unwrap()).unwrap();
    let panel = ReturnsPanel::with_default_dates(ids(5), x.clone()).unwrap();
    let got = e_step(&model, &panel).unwrap();
    let want = e_step_oracle(&lambda, &psi, &x);
    assert!(rel_frob(&got.ef, &want.ef) <= 1e-9);
    assert!(rel_frob(&got.eff_sum, &want.eff_sum) <= 1e-9);
    // B is positive definite
    assert!(got.eff_sum.clone().cholesky().is_some());
}

#[test]
fn unconstrained_m_step_matches_inverse_oracle() {
    for seed in 0..20 {
        let (a, b) = random_moments(100 + seed, 6, 13);
        let moments = PosteriorMoments {
            ef: DMatrix::zeros(13, 1),
            eff_sum: b.clone(),
            cross_sum: a.clone(),
        };
        let got = m_step_unconstrained(&moments).unwrap();
        assert!(rel_frob(&got, &unconstrained_oracle(&a, &b)) <= 1e-10, "seed {seed}");
        let residual = rel_frob(&(&got * &b), &a);
        assert!(residual <= 1e-8);
    }
}

#[test]
fn constrained_m_step_matches_row_oracle() {
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let n = 8;
        let m = 12 + (seed as usize % 4);
        let stock_ids = ids(n);
        let sectors = random_sectors(&mut r, &stock_ids);
        let mask = LoadingMask::sector(&sectors, &stock_ids, m).unwrap();
        let (a, b) = random_moments(300 + seed, n, m);
        let moments = PosteriorMoments {
            ef: DMatrix::zeros(m, 1),
            eff_sum: b.clone(),
            cross_sum: a.clone(),
        };
        let got = m_step_constrained(&moments, &mask).unwrap();
        let want = constrained_oracle(&a, &b, &mask);
        assert!(rel_frob(&got, &want) <= 1e-10, "seed {seed}");
        for j in 0..n {
            for k in 0..m {
                if !mask.allows(j, k) {
                    assert_eq!(got[(j, k)].to_bits(), 0);
                }
            }
        }
    }
}

#[test]
fn constrained_reduces_to_unconstrained_with_dense_mask() {
    for seed in 0..20 {
        let (a, b) = random_moments(400 + seed, 7, 13);
        let moments = PosteriorMoments {
            ef: DMatrix::zeros(13, 1),
            eff_sum: b,
            cross_sum: a,
        };
        let dense = LoadingMask::dense(7, 13).unwrap();
        let c = m_step_constrained(&moments, &dense).unwrap();
        let u = m_step_unconstrained(&moments).unwrap();
        assert!(rel_frob(&c, &u) <= 1e-10);
    }
}

#[test]
fn psi_update_matches_elementwise_oracle() {
    for seed in 0..20 {
        let inst = small_instance(500 + seed);
        let moments = e_step(&inst.model, &inst.panel).unwrap();
        let mut r = rng(seed);
        let lambda_new = inst.model.lambda().map(|v| v * (1.0 + 0.1 * normal(&mut r)));
        let got = m_step_psi(&inst.panel, &moments, &lambda_new).unwrap();
        let want = psi_oracle(inst.panel.values(), &moments.cross_sum, &lambda_new, PSI_FLOOR);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "seed {seed}: {g} vs {w}");
            assert!(*g > 0.0);
        }
    }
}

#[test]
fn expected_loglik_matches_term_by_term_oracle() {
    for seed in 0..20 {
        let inst = small_instance(600 + seed);
        let got = expected_loglik(&inst.model, &inst.panel).unwrap();
        let want = q_oracle(inst.model.lambda(), inst.model.psi(), inst.panel.values());
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn marginal_loglik_matches_dense_gaussian_density() {
    for seed in 0..10 {
        let inst = small_instance(700 + seed);
        let sigma = implied_cov_oracle(inst.model.lambda(), inst.model.psi());
        let inv = gj_inverse(&sigma);
        let det = sigma.determinant();
        let x = inst.panel.values();
        let (n, p) = x.shape();
        let mut want = -0.5 * p as f64 * (n as f64 * std::f64::consts::TAU.ln() + det.ln());
        for i in 0..p {
            let xi = x.column(i);
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    s += xi[a] * inv[(a, b)] * xi[b];
                }
            }
            want -= 0.5 * s;
        }
        let got = marginal_loglik(&inst.model, &inst.panel).unwrap();
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "seed {seed}");
    }
}

#[test]
fn threshold_matches_linear_scan() {
    for seed in 0..20 {
        let mut r = rng(800 + seed);
        let n = 1 + seed as usize % 8;
        let column: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let stock_ids = ids(n);
        let got = threshold_components(&column, &stock_ids, 0.10).unwrap();
        let mut got_idx: Vec<usize> = got
            .iter()
            .map(|c| stock_ids.iter().position(|s| *s == c.stock_id).unwrap())
            .collect();
        // descending magnitude
        assert!(got.windows(2).all(|w| w[0].loading.abs() >= w[1].loading.abs()));
        got_idx.sort();
        assert_eq!(got_idx, threshold_oracle(&column, 0.10));
    }
}

#[test]
fn e_step_scale_equivariance() {
    for seed in 0..10 {
        let inst = small_instance(900 + seed);
        let c = 3.7;
        let scaled = FactorModel::new(
            inst.model.stock_ids().to_vec(),
            inst.model.lambda() * c,
            inst.model.psi() * (c * c),
            inst.model.mask().clone(),
        )
        .unwrap();
        let panel = ReturnsPanel::with_default_dates(
            inst.panel.stock_ids().to_vec(),
            inst.panel.values() * c,
        )
        .unwrap();
        let a = e_step(&inst.model, &inst.panel).unwrap();
        let b = e_step(&scaled, &panel).unwrap();
        assert!(rel_frob(&b.ef, &a.ef) <= 1e-10);
        let beta = posterior_weights(&inst.model).unwrap();
        let beta_scaled = posterior_weights(&scaled).unwrap();
        assert!(rel_frob(&(beta_scaled * c), &beta) <= 1e-10);
    }
}

fn comps(values: &[f64]) -> Vec<Component> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| Component {
            stock_id: format!("S{i:03}"),
            loading: *v,
        })
        .collect()
}

proptest! {
    #[test]
    fn sign_flip_keeps_coherence(values in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        prop_assume!(values.iter().any(|v| *v != 0.0));
        let (c, s) = sign_coherence(&comps(&values)).unwrap();
        let flipped: Vec<f64> = values.iter().map(|v| -v).collect();
        let (cf, sf) = sign_coherence(&comps(&flipped)).unwrap();
        prop_assert_eq!(c, cf);
        prop_assert_eq!(s.map(|x| x.flipped()), sf);
        prop_assert!((0.5..=1.0).contains(&c));
    }

    #[test]
    fn raising_threshold_never_grows_selection(
        values in prop::collection::vec(-5.0f64..5.0, 1..30),
        t1 in 0.01f64..1.0,
        t2 in 0.01f64..1.0,
    ) {
        prop_assume!(values.iter().any(|v| *v != 0.0));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let stock_ids = ids(values.len());
        let a = threshold_components(&values, &stock_ids, lo).unwrap();
        let b = threshold_components(&values, &stock_ids, hi).unwrap();
        prop_assert!(b.len() <= a.len());
        for c in &b {
            prop_assert!(a.iter().any(|x| x.stock_id == c.stock_id));
        }
    }

    #[test]
    fn histogram_ignores_stock_order(seed in 0u64..1000, n in 1usize..25) {
        let mut r = rng(seed);
        let stock_ids = ids(n);
        let sectors = random_sectors(&mut r, &stock_ids);
        let selected = comps(&vec![1.0; n]);
        let mut reversed = selected.clone();
        reversed.reverse();
        let a = sector_histogram(&selected, &sectors).unwrap();
        let b = sector_histogram(&reversed, &sectors).unwrap();
        prop_assert_eq!(a.values().sum::<usize>(), n);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mask_rows_have_market_block_plus_at_most_one_sector(seed in 0u64..1000, n in 1usize..20, extra in 0usize..4) {
        let mut r = rng(seed);
        let stock_ids = ids(n);
        let sectors = random_sectors(&mut r, &stock_ids);
        let m = 12 + extra;
        let mask = LoadingMask::sector(&sectors, &stock_ids, m).unwrap();
        let again = LoadingMask::sector(&sectors, &stock_ids, m).unwrap();
        prop_assert_eq!(&mask, &again);
        for j in 0..n {
            let count = mask.row_support(j).len();
            prop_assert!(count == m - 11 || count == m - 10);
        }
    }

    #[test]
    fn implied_covariance_oracle_property(seed in 0u64..10_000) {
        let inst = small_instance(seed);
        let got = inst.model.implied_covariance();
        prop_assert!(rel_frob(&got, &implied_cov_oracle(inst.model.lambda(), inst.model.psi())) <= 1e-12);
    }
}
