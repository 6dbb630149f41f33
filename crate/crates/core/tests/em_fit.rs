mod common;

use common::*;
use sector_factor::em::{fit, fit_uncentered, fit_with, FitConfig, InitStrategy, LoadingUpdate};
use sector_factor::linalg::relative_frobenius;
use sector_factor::model::{LoadingMask, ReturnsPanel};
use sector_factor::pipeline::demean;
use sector_factor::synth::{sample_model, sample_panel, SynthSpec};
use sector_factor::Error;

fn small_spec(seed: u64, p: usize) -> SynthSpec {
    let mut n_per_sector = [0; 11];
    n_per_sector[0] = 5;
    n_per_sector[5] = 4;
    n_per_sector[7] = 4;
    SynthSpec {
        n_per_sector,
        n_unclassified: 2,
        p,
        seed,
        ..SynthSpec::default()
    }
}

fn synthetic(seed: u64, p: usize) -> (SynthSpec, ReturnsPanel, LoadingMask) {
    let spec = small_spec(seed, p);
    let truth = sample_model(&spec).unwrap();
    let panel = demean(&sample_panel(&truth, p, seed).unwrap());
    let mask = LoadingMask::sector(&spec.sector_map(), &spec.stock_ids(), spec.m).unwrap();
    (spec, panel, mask)
}

fn marginal_never_decreases(marg: &[f64]) -> bool {
    marg.windows(2).all(|w| w[1] >= w[0] - 1e-7 * w[0].abs().max(1.0))
}

#[test]
fn marginal_loglik_is_nondecreasing() {
    for seed in 0..5 {
        let (_, panel, mask) = synthetic(seed, 300);
        let dense = LoadingMask::dense(panel.n_stocks(), 13).unwrap();
        for (mask, init) in [
            (&mask, InitStrategy::SectorPca),
            (&mask, InitStrategy::Random),
            (&dense, InitStrategy::Random),
        ] {
            let config = FitConfig {
                seed,
                init,
                ..FitConfig::default()
            };
            let (_, trace) = fit(&panel, mask, &config).unwrap();
            assert_eq!(trace.loglik_per_iter.len(), 100);
            assert_eq!(trace.marginal_loglik_per_iter.len(), 100);
            assert!(marginal_never_decreases(&trace.marginal_loglik_per_iter), "seed {seed} {init:?}");
        }
    }
}

#[test]
fn q_is_nondecreasing_on_dense_fits() {
    for seed in 0..5 {
        let (_, panel, _) = synthetic(seed, 300);
        let dense = LoadingMask::dense(panel.n_stocks(), 13).unwrap();
        let config = FitConfig {
            seed,
            ..FitConfig::default()
        };
        let (_, trace) = fit(&panel, &dense, &config).unwrap();
        assert_eq!(trace.first_decrease(1e-7), None, "seed {seed}");
    }
}

// Q at each iterate is not a Lyapunov function for EM; this instance
// shows a dip while the marginal keeps rising.
#[test]
fn q_can_dip_while_marginal_rises() {
    let (_, panel, mask) = synthetic(1, 300);
    let config = FitConfig {
        seed: 1,
        ..FitConfig::default()
    };
    let (_, trace) = fit(&panel, &mask, &config).unwrap();
    assert!(trace.first_decrease(1e-7).is_some());
    assert!(marginal_never_decreases(&trace.marginal_loglik_per_iter));
}

#[test]
fn masked_entries_stay_exactly_zero() {
    let (_, panel, mask) = synthetic(9, 250);
    let (model, _) = fit(&panel, &mask, &FitConfig::default()).unwrap();
    let lambda = model.lambda();
    for j in 0..lambda.nrows() {
        for k in 0..lambda.ncols() {
            if !mask.allows(j, k) {
                assert_eq!(lambda[(j, k)].to_bits(), 0, "({j}, {k})");
            }
        }
    }
    assert_eq!(model.mask(), &mask);
}

#[test]
fn dense_mask_reduces_to_unconstrained_fit() {
    let (_, panel, _) = synthetic(2, 200);
    let dense = LoadingMask::dense(panel.n_stocks(), 13).unwrap();
    let config = FitConfig {
        max_iterations: 30,
        ..FitConfig::default()
    };
    let (c, tc) = fit_with(&panel, &dense, &config, LoadingUpdate::Constrained).unwrap();
    let (u, tu) = fit_with(&panel, &dense, &config, LoadingUpdate::Unconstrained).unwrap();
    assert!(relative_frobenius(c.lambda(), u.lambda()) <= 1e-8);
    let last_c = tc.final_loglik().unwrap();
    let last_u = tu.final_loglik().unwrap();
    assert!((last_c - last_u).abs() <= 1e-10 * last_u.abs());
}

#[test]
fn unconstrained_update_rejects_sparse_mask() {
    let (_, panel, mask) = synthetic(2, 100);
    let err = fit_with(&panel, &mask, &FitConfig::default(), LoadingUpdate::Unconstrained).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
}

#[test]
fn tolerance_stops_early() {
    let (_, panel, mask) = synthetic(4, 300);
    let config = FitConfig {
        max_iterations: 500,
        rel_tol: Some(1e-6),
        ..FitConfig::default()
    };
    let (_, trace) = fit(&panel, &mask, &config).unwrap();
    assert!(trace.converged_by_tol);
    assert!(trace.iterations_run < 500);
    assert_eq!(trace.loglik_per_iter.len(), trace.iterations_run);
}

#[test]
fn fit_requires_demeaned_panel_unless_asked() {
    let spec = small_spec(1, 100);
    let truth = sample_model(&spec).unwrap();
    let raw = sample_panel(&truth, 100, 1).unwrap();
    let mask = LoadingMask::sector(&spec.sector_map(), &spec.stock_ids(), 13).unwrap();
    let config = FitConfig {
        max_iterations: 5,
        ..FitConfig::default()
    };
    assert!(fit(&raw, &mask, &config).is_err());
    assert!(fit_uncentered(&raw, &mask, &config).is_ok());
}

#[test]
fn identical_across_thread_counts() {
    let (_, panel, mask) = synthetic(6, 400);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&panel, &mask, &FitConfig::default()).unwrap())
    };
    let (a, ta) = run(1);
    let (b, tb) = run(4);
    assert_eq!(a.lambda(), b.lambda());
    assert_eq!(a.psi(), b.psi());
    assert_eq!(ta, tb);
}

#[test]
fn same_seed_same_fit_and_different_seed_differs() {
    let (_, panel, mask) = synthetic(7, 200);
    let config = FitConfig {
        max_iterations: 20,
        init: InitStrategy::Random,
        ..FitConfig::default()
    };
    let (a, _) = fit(&panel, &mask, &config).unwrap();
    let (b, _) = fit(&panel, &mask, &config).unwrap();
    assert_eq!(a.lambda(), b.lambda());
    let other = FitConfig { seed: 1, ..config };
    let (c, _) = fit(&panel, &mask, &other).unwrap();
    assert_ne!(a.lambda(), c.lambda());
}

#[test]
fn recovers_truth_covariance_on_long_panel() {
    let (spec, panel, mask) = synthetic(3, 4000);
    let truth = sample_model(&spec).unwrap();
    let (model, _) = fit(&panel, &mask, &FitConfig::default()).unwrap();
    let err = relative_frobenius(&model.implied_covariance(), &truth.implied_covariance());
    assert!(err < 0.15, "relative error {err}");
}

#[test]
fn single_stock_fit_runs() {
    let mut r = rng(1);
    let x = nalgebra::DMatrix::from_fn(1, 50, |_, _| normal(&mut r));
    let panel = demean(&ReturnsPanel::with_default_dates(ids(1), x).unwrap());
    let mask = LoadingMask::dense(1, 2).unwrap();
    let (model, trace) = fit(&panel, &mask, &FitConfig::default()).unwrap();
    assert!(model.psi()[0] > 0.0);
    assert_eq!(trace.first_decrease(1e-7), None);
}
