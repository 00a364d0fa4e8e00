//! Every stage end to end, with a manifest of checksums.
//!
//! ```text
//! cargo run --release --example full_pipeline -- /tmp/run 2000
//! ```

use efshap::pipeline::{self, PipelineConfig, Stage};
use efshap::util;

fn main() -> efshap::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("efshap-run"), Into::into);
    let n_patients: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);

    let mut config = PipelineConfig::full(7);
    for s in &mut config.stages {
        if let Stage::Synth(x) = s {
            x.config.n_patients = n_patients;
        }
    }
    let manifest = util::with_threads(util::threads_from_env(None), || pipeline::run_pipeline(&config, &root))??;

    for rec in &manifest.stages {
        println!(
            "{:<8} {:>6} ms  {} inputs, {} outputs",
            rec.stage,
            rec.wall_time_ms,
            rec.inputs.len(),
            rec.outputs.len()
        );
    }
    let report: serde_json::Value = util::read_json(&root.join(pipeline::REPORT_FILE))?;
    println!("test rmse {} r2 {}", report["rmse"], report["r2"]);
    println!("artifacts in {}", root.display());
    Ok(())
}
