//! Fit the classic dense model and the sector model to the same panel and
//! compare how coherent the signs of their leading components are.
//!
//! cargo run --release --example compare_standard_vs_sector

use sector_factor::diagnostics::{full_report, CoherenceScope, FactorReport};
use sector_factor::pipeline::demean;
use sector_factor::synth::{sample_model, sample_panel, SynthSpec};
use sector_factor::{fit, FitConfig, LoadingMask};

fn summarize(title: &str, reports: &[FactorReport]) {
    println!("{title}");
    for r in reports.iter().filter(|r| r.sign_coherence.is_some()) {
        println!(
            "  {:>3} {:<28} selected {:>2}  coherence {:.3}",
            r.factor_index,
            r.label,
            r.selected_components.len(),
            r.sign_coherence.unwrap()
        );
    }
}

fn main() -> sector_factor::Result<()> {
    let spec = SynthSpec {
        p: 2000,
        seed: 7,
        ..SynthSpec::default()
    };
    let truth = sample_model(&spec)?;
    let panel = demean(&sample_panel(&truth, spec.p, spec.seed)?);
    let sectors = spec.sector_map();
    let config = FitConfig::default();

    let sector_mask = LoadingMask::sector(&sectors, &spec.stock_ids(), spec.m)?;
    let dense_mask = LoadingMask::dense(spec.n_stocks(), spec.m)?;
    let (sector_model, _) = fit(&panel, &sector_mask, &config)?;
    let (standard_model, _) = fit(&panel, &dense_mask, &config)?;

    let scope = CoherenceScope::Thresholded;
    summarize("sector model", &full_report(&sector_model, &sectors, 0.10, scope)?);
    summarize("standard model", &full_report(&standard_model, &sectors, 0.10, scope)?);
    Ok(())
}
