//! Coordinate-descent grid search with 5-fold cross-validated RMSE.

use efshap::etl::{self, CodeMaps, EtlConfig};
use efshap::gbt::{self, Grid, Hyperparams, TuneConfig};
use efshap::synth::{self, CohortConfig};

fn main() -> efshap::Result<()> {
    let store = synth::generate_cohort(&CohortConfig {
        n_patients: 1200,
        ..CohortConfig::default()
    })?;
    let etl = etl::run_etl(&store, &CodeMaps::builtin(), &EtlConfig::default())?;
    let train = etl.cases.select(&etl.splits.train);

    let config = TuneConfig {
        grid: Grid {
            n_trees: Some(vec![40.0, 80.0, 160.0]),
            max_depth: Some(vec![2.0, 3.0, 4.0]),
            eta: Some(vec![0.05, 0.1, 0.3]),
            ..Grid::default()
        },
        folds: 5,
        base: Hyperparams::default(),
        ..TuneConfig::default()
    };
    let report = gbt::tune(&train, &config)?;
    for t in &report.trials {
        let params: Vec<String> = t.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<40} cv rmse {:.3}", params.join(" "), t.cv_rmse);
    }
    let b = &report.best;
    println!(
        "best after {} sweeps: n_trees {}, max_depth {}, eta {} (cv rmse {:.3})",
        report.sweeps, b.n_trees, b.max_depth, b.eta, report.cv_rmse
    );

    let model = gbt::train(&train, b)?;
    let test = gbt::evaluate(&model, &etl.cases.select(&etl.splits.test))?;
    println!("test rmse {:.3}", test.rmse);
    Ok(())
}
