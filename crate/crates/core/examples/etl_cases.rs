//! Raw events to a winsorized case matrix with train/valid/test splits.

use efshap::etl::{self, CodeMaps, EtlConfig};
use efshap::synth::{self, CohortConfig};

fn main() -> efshap::Result<()> {
    let store = synth::generate_cohort(&CohortConfig {
        n_patients: 800,
        ..CohortConfig::default()
    })?;
    let config = EtlConfig {
        min_code_count: 25,
        ..EtlConfig::default()
    };
    let out = etl::run_etl(&store, &CodeMaps::builtin(), &config)?;
    let r = &out.report;
    println!(
        "{} raw events, {} unmapped, {} rare removed",
        r.raw_events, r.unmapped_events, r.rare_events_removed
    );
    println!("{} echo reports -> {} independent cases", r.echo_reports, r.n_cases);
    for (cat, n) in &r.features_per_category {
        println!("  {cat:<5} {n} features");
    }
    println!("splits {:?}", r.split_sizes);

    for b in out.bounds.features.iter().take(5) {
        println!("  {:<22} clipped to [{:.1}, {:.1}]", b.name, b.min, b.max);
    }

    let first = &out.cases.case_ids()[0];
    println!("first case: patient {} on {}, EF {:.1}", first.patient_id, first.echo_date, out.cases.labels()[0]);

    if let Some(dir) = std::env::args().nth(1) {
        etl::write_etl_output(&out, dir.as_ref(), Some(config.split.seed))?;
        println!("case directory written to {dir}");
    }
    Ok(())
}
