//! Generate a small synthetic cohort and write the raw event tables.
//!
//! ```text
//! cargo run --example synth_cohort -- /tmp/raw
//! ```

use efshap::dataset::Category;
use efshap::synth::{self, CohortConfig};

fn main() -> efshap::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("efshap-raw"), Into::into);
    let config = CohortConfig {
        n_patients: 500,
        seed: 42,
        ..CohortConfig::default()
    };
    let cohort = synth::generate_cohort_with_truth(&config)?;
    let store = &cohort.store;

    for c in Category::ALL {
        println!("{:<5} {:>7} events", c.prefix(), store.table(c).len());
    }
    println!("echo  {:>7} reports", store.echo_reports.len());

    // The latent covariates behind patient 1.
    let p = cohort.truth.patient(1).expect("patient 1");
    for (name, v) in cohort.truth.covariate_names.iter().zip(&p.covariates).take(6) {
        println!("patient 1 {name} = {v:.1}");
    }

    let manifest = synth::write_raw_tables(store, &out)?;
    println!("wrote {} files to {}", manifest.row_counts.len(), out.display());
    Ok(())
}
