//! Render every figure kind from a small pipeline run.

use efshap::pipeline::{self, PipelineConfig, Stage};
use efshap::viz::{self, PlotInputs, PlotKind, PlotSpec};

fn main() -> efshap::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("efshap-plots"), Into::into);
    let mut config = PipelineConfig::full(7);
    config.stages.retain(|s| !matches!(s, Stage::Tune(_) | Stage::Plot(_)));
    for s in &mut config.stages {
        match s {
            Stage::Synth(x) => x.config.n_patients = 1000,
            Stage::Train(x) => x.use_tuned = false,
            _ => {}
        }
    }
    pipeline::run_pipeline(&config, &root)?;

    let inputs = PlotInputs {
        cases: Some(root.join(pipeline::CASES_DIR)),
        shap: Some(root.join(pipeline::SHAP_DIR)),
        model: Some(root.join(pipeline::MODEL_FILE)),
        embed: Some(root.join(pipeline::EmbedSpace::Shap.default_file())),
    };
    let jobs = [
        ("scatter.svg", PlotKind::PredScatter, None),
        ("coverage.svg", PlotKind::ImportanceBars, None),
        ("beeswarm.svg", PlotKind::Beeswarm, None),
        ("gender.svg", PlotKind::Dependence, Some("DEMO_GENDER")),
        ("systolic.svg", PlotKind::Dependence, Some("VL_BP_SYSTOLIC")),
        ("tsne.svg", PlotKind::Embedding, None),
    ];
    for (file, kind, feature) in jobs {
        let spec = PlotSpec {
            kind,
            inputs: inputs.clone(),
            feature: feature.map(String::from),
            top_k: 15,
            ..PlotSpec::default()
        };
        let out = root.join(file);
        viz::render_to_file(&spec, &out)?;
        println!("{}", out.display());
    }
    Ok(())
}
