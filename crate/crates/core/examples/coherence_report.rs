//! Component selection and sign coherence on a hand-written loading column,
//! then a full report on a generated model.
//!
//! cargo run --example coherence_report

use sector_factor::diagnostics::{
    full_report, sector_histogram, sign_coherence, threshold_components, CoherenceScope, ReportDocument,
};
use sector_factor::synth::{sample_model, SynthSpec};
use sector_factor::{Membership, Sector, SectorMap};

fn main() -> sector_factor::Result<()> {
    let ids: Vec<String> = ["BA", "DAL", "UNP", "FDX", "WMT", "XOM"].map(String::from).to_vec();
    let column = [0.82, 0.75, 0.05, 0.64, -0.09, -0.70];
    let transport = Membership::Sector(Sector::from_code(7).unwrap());
    let sectors = SectorMap::from_pairs([
        ("BA", transport),
        ("DAL", transport),
        ("UNP", transport),
        ("FDX", transport),
        ("WMT", Membership::Sector(Sector::from_code(4).unwrap())),
        ("XOM", Membership::Sector(Sector::from_code(10).unwrap())),
    ]);

    let selected = threshold_components(&column, &ids, 0.10)?;
    for c in &selected {
        println!("{:>4} {:+.2}", c.stock_id, c.loading);
    }
    let (coherence, sign) = sign_coherence(&selected)?;
    println!("coherence {coherence:.3}, dominant sign {sign:?}");
    for (membership, count) in sector_histogram(&selected, &sectors)? {
        println!("  sector {membership}: {count}");
    }

    let spec = SynthSpec {
        sector_sign_coherent: false,
        ..SynthSpec::default()
    };
    let model = sample_model(&spec)?;
    let scope = CoherenceScope::AllNonzero;
    let doc = ReportDocument::new(0.10, scope, full_report(&model, &spec.sector_map(), 0.10, scope)?);
    print!("{}", doc.to_text());
    Ok(())
}
