//! Train boosted trees on synthetic cases and report test metrics and
//! coverage importance.

use efshap::etl::{self, CodeMaps, EtlConfig};
use efshap::gbt::{self, Hyperparams};
use efshap::synth::{self, CohortConfig};

fn main() -> efshap::Result<()> {
    let store = synth::generate_cohort(&CohortConfig {
        n_patients: 2000,
        ..CohortConfig::default()
    })?;
    let etl = etl::run_etl(&store, &CodeMaps::builtin(), &EtlConfig::default())?;
    let train = etl.cases.select(&etl.splits.train);
    let test = etl.cases.select(&etl.splits.test);

    let hp = Hyperparams {
        n_trees: 150,
        max_depth: 3,
        eta: 0.1,
        ..Hyperparams::default()
    };
    let model = gbt::train(&train, &hp)?;
    let report = gbt::evaluate(&model, &test)?;
    println!(
        "{} trees, test rmse {:.2}, r2 {:.3} on {} cases",
        model.trees.len(),
        report.rmse,
        report.r2.unwrap_or(f64::NAN),
        report.n
    );

    println!("coverage importance (>= 1%):");
    for c in gbt::ranked_coverage(&model, &test, 0.01)?.iter().take(12) {
        println!("  {:<28} {:.3}", c.name, c.coverage);
    }

    let pred = model.predict_row(test.row(0))?;
    println!("case 0: predicted {pred:.1}, observed {:.1}", test.labels()[0]);
    Ok(())
}
