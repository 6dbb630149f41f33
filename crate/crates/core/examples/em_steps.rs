//! Drive EM by hand with the individual steps, printing the expected
//! complete-data log-likelihood next to the exact marginal one.
//!
//! cargo run --release --example em_steps

use sector_factor::em::{
    e_step, expected_loglik, initialize, m_step_constrained, m_step_psi, marginal_loglik,
};
use sector_factor::pipeline::demean;
use sector_factor::synth::{sample_model, sample_panel, SynthSpec};
use sector_factor::{FactorModel, FitConfig, LoadingMask};

fn main() -> sector_factor::Result<()> {
    let spec = SynthSpec {
        p: 500,
        seed: 11,
        ..SynthSpec::default()
    };
    let truth = sample_model(&spec)?;
    let panel = demean(&sample_panel(&truth, spec.p, spec.seed)?);
    let ids = spec.stock_ids();
    let mask = LoadingMask::sector(&spec.sector_map(), &ids, spec.m)?;

    let (lambda, psi) = initialize(&panel, &mask, &FitConfig::default())?;
    let mut model = FactorModel::new(ids.clone(), lambda, psi, mask.clone())?;
    for it in 1..=25 {
        let moments = e_step(&model, &panel)?;
        let lambda = m_step_constrained(&moments, &mask)?;
        let psi = m_step_psi(&panel, &moments, &lambda)?;
        model = FactorModel::new(ids.clone(), lambda, psi, mask.clone())?;
        println!(
            "{it:>3}  Q {:>12.4}  log-lik {:>12.4}",
            expected_loglik(&model, &panel)?,
            marginal_loglik(&model, &panel)?
        );
    }
    Ok(())
}
