use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use efshap::dataset::SplitName;
use efshap::embed::TsneConfig;
use efshap::etl::{CodeMaps, EtlConfig};
use efshap::gbt::{Hyperparams, TuneConfig};
use efshap::pipeline::{self, EmbedSpace, PipelineConfig};
use efshap::synth::CohortConfig;
use efshap::viz::{self, PlotInputs, PlotKind, PlotSpec};
use efshap::{util, Error, Result};

#[derive(Parser)]
#[command(name = "efshap", version, about = "Interpretable EF regression: synth, ETL, boosting, TreeSHAP, t-SNE, plots")]
struct Cli {
    /// Worker threads (falls back to EFSHAP_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as raw event tables.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn raw tables into a case directory.
    Etl {
        #[arg(long)]
        raw: PathBuf,
        /// Mapping-table directory; built-in tables when omitted.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split.
    Train {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coordinate-descent grid search with k-fold CV on the training split.
    Tune {
        #[arg(long)]
        cases: PathBuf,
        /// Tuning config: grid, folds, max_sweeps, seed, base parameters.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the best parameters as a params file.
        #[arg(long)]
        params_out: Option<PathBuf>,
    },
    /// RMSE and R2 of a model on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
    /// TreeSHAP values for one split.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
    /// t-SNE of SHAP rows or raw feature rows.
    Embed {
        /// SHAP directory (space shap) or case directory (space raw).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "shap")]
        space: EmbedSpace,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_points: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an SVG figure.
    Plot(PlotArgs),
    /// Run a whole pipeline and write manifest.json.
    Run {
        /// Pipeline config; every stage with defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the built-in code mapping tables.
    Maps {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write default config files for every stage.
    Defaults {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlotArgs {
    /// Full plot spec as JSON; the flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    kind: Option<PlotKind>,
    #[arg(long)]
    shap: Option<PathBuf>,
    #[arg(long)]
    cases: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    embed: Option<PathBuf>,
    #[arg(long)]
    split: Option<SplitName>,
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    color_by: Option<String>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), util::read_json)
}

fn plot_spec(a: PlotArgs) -> Result<(PlotSpec, PathBuf)> {
    let mut s: PlotSpec = load_or_default(a.spec.as_deref())?;
    if a.spec.is_none() && a.kind.is_none() {
        return Err(Error::Config("plot needs --kind or --spec".into()));
    }
    let inputs = PlotInputs {
        cases: a.cases.or(s.inputs.cases),
        shap: a.shap.or(s.inputs.shap),
        model: a.model.or(s.inputs.model),
        embed: a.embed.or(s.inputs.embed),
    };
    s.inputs = inputs;
    s.kind = a.kind.unwrap_or(s.kind);
    s.split = a.split.unwrap_or(s.split);
    s.feature = a.feature.or(s.feature);
    s.color_by = a.color_by.or(s.color_by);
    s.top_k = a.top.unwrap_or(s.top_k);
    s.width = a.width.unwrap_or(s.width);
    s.height = a.height.unwrap_or(s.height);
    s.seed = a.seed.unwrap_or(s.seed);
    s.jitter = a.jitter.unwrap_or(s.jitter);
    Ok((s, a.out))
}

fn print_json<T: serde::Serialize>(v: &T) {
    print!("{}", String::from_utf8_lossy(&util::to_json_bytes(v)));
}

fn write_defaults(dir: &Path) -> Result<()> {
    util::create_dir(dir)?;
    util::write_json(&dir.join("cohort.json"), &CohortConfig::default())?;
    util::write_json(&dir.join("etl.json"), &EtlConfig::default())?;
    util::write_json(&dir.join("hp.json"), &Hyperparams::default())?;
    util::write_json(&dir.join("grid.json"), &pipeline_tune_config())?;
    util::write_json(&dir.join("tsne.json"), &TsneConfig::default())?;
    util::write_json(&dir.join("pipeline.json"), &PipelineConfig::full(7))
}

fn pipeline_tune_config() -> TuneConfig {
    PipelineConfig::full(0)
        .stages
        .into_iter()
        .find_map(|s| match s {
            pipeline::Stage::Tune(t) => Some(t.config),
            _ => None,
        })
        .unwrap_or_default()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut c: CohortConfig = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            print_json(&pipeline::synth_stage(&c, &out)?);
        }
        Command::Etl { raw, maps, config, out } => {
            let c: EtlConfig = load_or_default(config.as_deref())?;
            print_json(&pipeline::etl_stage(&raw, maps.as_deref(), &c, &out)?);
        }
        Command::Train { cases, params, out } => {
            let hp = match params {
                Some(p) => Hyperparams::from_file(&p)?,
                None => Hyperparams::default(),
            };
            let model = pipeline::train_stage(&cases, &hp, &out)?;
            println!("trained {} trees on {} features", model.trees.len(), model.n_features);
        }
        Command::Tune { cases, grid, out, params_out } => {
            let c = TuneConfig::from_file(&grid)?;
            let r = pipeline::tune_stage(&cases, &c, &out)?;
            if let Some(p) = params_out {
                util::write_json(&p, &r.best)?;
            }
            println!("best cv rmse {:.4} after {} sweeps, {} trials", r.cv_rmse, r.sweeps, r.trials.len());
        }
        Command::Eval { model, cases, split, out } => {
            print_json(&pipeline::eval_stage(&model, &cases, split, &out)?);
        }
        Command::Explain { model, cases, split, out } => {
            print_json(&pipeline::explain_stage(&model, &cases, split, &out)?);
        }
        Command::Embed { input, space, split, config, max_points, out } => {
            let c: TsneConfig = load_or_default(config.as_deref())?;
            let (_, report) = pipeline::embed_stage(&input, space, split, max_points, &c, &out)?;
            print_json(&report);
        }
        Command::Plot(a) => {
            let (spec, out) = plot_spec(a)?;
            viz::render_to_file(&spec, &out)?;
        }
        Command::Run { config, out, seed } => {
            let mut c = match config {
                Some(p) => PipelineConfig::from_file(&p)?,
                None => PipelineConfig::full(7),
            };
            if seed.is_some() {
                c.seed = seed;
            }
            let m = pipeline::run_pipeline(&c, &out)?;
            println!("{} stages completed; manifest at {}", m.stages.len(), out.join(pipeline::RUN_MANIFEST_FILE).display());
        }
        Command::Maps { out } => CodeMaps::builtin().write_dir(&out)?,
        Command::Defaults { out } => write_defaults(&out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = util::threads_from_env(cli.threads);
    match util::with_threads(threads, || execute(cli.command)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
