//! Exact SHAP values for a hand-written tree, checked against brute-force
//! subset enumeration, then on a trained model.

use efshap::dataset::{Category, FeatureCatalog, FeatureKind};
use efshap::gbt::{self, GbtModel, Hyperparams, Node, Tree};
use efshap::shap::{self, shapley_oracle, tree_shap};
use efshap::synth::{self, CohortConfig};
use efshap::etl::{self, CodeMaps, EtlConfig};

fn main() -> efshap::Result<()> {
    // age < 65 ? (sys < 120 ? 50 : 58) : 42, missing age goes right.
    let tree = Tree {
        nodes: vec![
            Node::Split { feature_id: 0, threshold: 65.0, default_left: false, left: 1, right: 2, cover: 100.0 },
            Node::Split { feature_id: 1, threshold: 120.0, default_left: true, left: 3, right: 4, cover: 60.0 },
            Node::Leaf { weight: -8.0, cover: 40.0 },
            Node::Leaf { weight: 0.0, cover: 30.0 },
            Node::Leaf { weight: 8.0, cover: 30.0 },
        ],
    };
    let catalog = FeatureCatalog::from_codes([
        (Category::Demo, "AGE", FeatureKind::Numeric),
        (Category::Vl, "BP_SYSTOLIC", FeatureKind::Numeric),
    ])?;
    let model = GbtModel::new(50.0, vec![tree], &catalog);
    println!("base value {:.3}", shap::base_value(&model));
    for row in [[Some(50.0), Some(130.0)], [Some(70.0), Some(110.0)], [None, Some(130.0)]] {
        let e = tree_shap(&model, &row)?;
        let brute = shapley_oracle(&model, &row)?;
        println!(
            "row {row:?}: prediction {:.2} = {:.2} + {:.3} + {:.3} (oracle {:.3}, {:.3})",
            model.predict_row(&row)?,
            e.base_value,
            e.values[0],
            e.values[1],
            brute[0],
            brute[1]
        );
    }

    let store = synth::generate_cohort(&CohortConfig {
        n_patients: 1500,
        ..CohortConfig::default()
    })?;
    let out = etl::run_etl(&store, &CodeMaps::builtin(), &EtlConfig::default())?;
    let train = out.cases.select(&out.splits.train);
    let test = out.cases.select(&out.splits.test);
    let model = gbt::train(&train, &Hyperparams { n_trees: 100, max_depth: 3, ..Hyperparams::default() })?;
    let s = shap::explain_dataset(&model, &test)?;
    let summary = shap::summarize(&s, &test, 8)?;
    println!("mean |SHAP| on {} test cases:", s.n_cases());
    for f in summary.top(8) {
        println!("  {:<28} {:.3}", f.name, f.mean_abs_shap);
    }
    if let Some(j) = test.catalog().index_of("DEMO_GENDER") {
        for (level, mean) in shap::mean_shap_by_value(&s, &test, j) {
            println!("  gender {level}: mean SHAP {mean:+.2}");
        }
    }
    Ok(())
}
