//! Draw a sector model, sample five years of returns and refit it by EM.
//!
//! cargo run --release --example fit_sector_model

use sector_factor::linalg::relative_frobenius;
use sector_factor::pipeline::demean;
use sector_factor::synth::{sample_model, sample_panel, SynthSpec};
use sector_factor::{fit, FitConfig, LoadingMask};

fn main() -> sector_factor::Result<()> {
    let spec = SynthSpec {
        p: 1250,
        seed: 42,
        ..SynthSpec::default()
    };
    let truth = sample_model(&spec)?;
    let panel = demean(&sample_panel(&truth, spec.p, spec.seed)?);
    let mask = LoadingMask::sector(&spec.sector_map(), &spec.stock_ids(), spec.m)?;

    let (model, trace) = fit(&panel, &mask, &FitConfig::default())?;

    println!("{} stocks, {} days, {} factors", panel.n_stocks(), panel.n_days(), model.n_factors());
    for (i, (q, l)) in trace
        .loglik_per_iter
        .iter()
        .zip(&trace.marginal_loglik_per_iter)
        .enumerate()
        .filter(|(i, _)| i % 20 == 0 || *i + 1 == trace.iterations_run)
    {
        println!("iter {:>3}  Q {q:>14.4}  log-lik {l:>14.4}", i + 1);
    }

    let err = relative_frobenius(&model.implied_covariance(), &truth.implied_covariance());
    let x = panel.values();
    let sample = (x * x.transpose()) / panel.n_days() as f64;
    let sample_err = relative_frobenius(&sample, &truth.implied_covariance());
    println!("relative covariance error: EM {err:.4}, sample covariance {sample_err:.4}");
    Ok(())
}
