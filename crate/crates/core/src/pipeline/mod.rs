//! Stage functions shared by the CLI and the pipeline runner, and the run
//! manifest that ties their artifacts together.
//!
//! A run directory has a fixed layout: `raw/`, `cases/`, `tune_report.json`,
//! `model.json`, `report.json`, `shap/`, `embed_shap.csv`, `embed_raw.csv`,
//! `plots/` and `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, SplitName};
use crate::embed::{self, Embedding2D, InputSpace, TsneConfig};
use crate::error::{Error, Result};
use crate::etl::{self, CodeMaps, EtlConfig, EtlReport};
use crate::gbt::{self, EvalReport, GbtModel, Grid, Hyperparams, TuneConfig, TuneReport};
use crate::shap::{self, ShapMeta};
use crate::synth::{self, CohortConfig, RawManifest};
use crate::util;
use crate::viz::{self, PlotKind, PlotSpec};

pub const RUN_MANIFEST_FILE: &str = "manifest.json";
pub const RAW_DIR: &str = "raw";
pub const CASES_DIR: &str = "cases";
pub const MODEL_FILE: &str = "model.json";
pub const TUNE_REPORT_FILE: &str = "tune_report.json";
pub const REPORT_FILE: &str = "report.json";
pub const SHAP_DIR: &str = "shap";
pub const PLOTS_DIR: &str = "plots";
pub const RUN_FORMAT_VERSION: u32 = 1;

const SUBSET_STREAM: u64 = 0x5355_4253;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSpace {
    Shap,
    Raw,
}

impl EmbedSpace {
    pub fn input_space(self) -> InputSpace {
        match self {
            EmbedSpace::Shap => InputSpace::ShapValues,
            EmbedSpace::Raw => InputSpace::RawFeatures,
        }
    }

    pub fn default_file(self) -> &'static str {
        match self {
            EmbedSpace::Shap => "embed_shap.csv",
            EmbedSpace::Raw => "embed_raw.csv",
        }
    }
}

impl std::str::FromStr for EmbedSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shap" => Ok(EmbedSpace::Shap),
            "raw" => Ok(EmbedSpace::Raw),
            _ => Err(Error::Config(format!("unknown embedding space `{s}` (shap|raw)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthStage {
    pub config: CohortConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtlStage {
    /// Directory with the two mapping tables; the built-in tables when absent.
    pub maps: Option<PathBuf>,
    pub config: EtlConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneStage {
    pub config: TuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStage {
    pub params: Hyperparams,
    /// Train with the best parameters of `tune_report.json` when present.
    pub use_tuned: bool,
}

impl Default for TrainStage {
    fn default() -> Self {
        TrainStage {
            params: Hyperparams::default(),
            use_tuned: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitStage {
    pub split: SplitName,
}

impl Default for SplitStage {
    fn default() -> Self {
        SplitStage {
            split: SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedStage {
    pub space: EmbedSpace,
    /// Split embedded in raw space; SHAP space embeds the explained split.
    pub split: SplitName,
    /// Seeded subset size; exact t-SNE is quadratic in the number of points.
    pub max_points: Option<usize>,
    pub config: TsneConfig,
    /// Output CSV, relative to the run directory.
    pub out: Option<PathBuf>,
}

impl Default for EmbedStage {
    fn default() -> Self {
        EmbedStage {
            space: EmbedSpace::Shap,
            split: SplitName::Test,
            max_points: Some(1000),
            config: TsneConfig::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotJob {
    /// Output SVG, relative to the run directory.
    pub out: PathBuf,
    pub spec: PlotSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotStage {
    pub plots: Vec<PlotJob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    Synth(SynthStage),
    Etl(EtlStage),
    Tune(TuneStage),
    Train(TrainStage),
    Eval(SplitStage),
    Explain(SplitStage),
    Embed(EmbedStage),
    Plot(PlotStage),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Synth(_) => "synth",
            Stage::Etl(_) => "etl",
            Stage::Tune(_) => "tune",
            Stage::Train(_) => "train",
            Stage::Eval(_) => "eval",
            Stage::Explain(_) => "explain",
            Stage::Embed(_) => "embed",
            Stage::Plot(_) => "plot",
        }
    }

    /// Replaces every seed in the stage config with `seed`.
    pub fn with_seed(&self, seed: u64) -> Stage {
        let mut s = self.clone();
        match &mut s {
            Stage::Synth(c) => c.config.seed = seed,
            Stage::Etl(c) => c.config.split.seed = seed,
            Stage::Tune(c) => {
                c.config.seed = seed;
                c.config.base.seed = seed;
            }
            Stage::Train(c) => c.params.seed = seed,
            Stage::Eval(_) | Stage::Explain(_) => {}
            Stage::Embed(c) => c.config.seed = seed,
            Stage::Plot(c) => c.plots.iter_mut().for_each(|p| p.spec.seed = seed),
        }
        s
    }

    /// The seed that drives the stage's randomness, if any.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Stage::Synth(c) => Some(c.config.seed),
            Stage::Etl(c) => Some(c.config.split.seed),
            Stage::Tune(c) => Some(c.config.seed),
            Stage::Train(c) => Some(c.params.seed),
            Stage::Eval(_) | Stage::Explain(_) => None,
            Stage::Embed(c) => Some(c.config.seed),
            Stage::Plot(c) => c.plots.first().map(|p| p.spec.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Overrides the seed of every stage when set.
    pub seed: Option<u64>,
    pub stages: Vec<Stage>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: 1,
            seed: None,
            stages: Vec::new(),
        }
    }
}

fn plot(out: &str, kind: PlotKind, f: impl FnOnce(&mut PlotSpec)) -> PlotJob {
    let mut spec = PlotSpec {
        kind,
        ..PlotSpec::default()
    };
    f(&mut spec);
    PlotJob {
        out: PathBuf::from(PLOTS_DIR).join(out),
        spec,
    }
}

impl PipelineConfig {
    /// Every stage with default settings and a small tuning grid.
    pub fn full(seed: u64) -> Self {
        let grid = Grid {
            n_trees: Some(vec![50.0, 100.0, 200.0]),
            max_depth: Some(vec![2.0, 3.0, 4.0]),
            eta: Some(vec![0.1, 0.35]),
            ..Grid::default()
        };
        let plots = vec![
            plot("pred_scatter.svg", PlotKind::PredScatter, |_| {}),
            plot("importance.svg", PlotKind::ImportanceBars, |_| {}),
            plot("beeswarm.svg", PlotKind::Beeswarm, |_| {}),
            plot("dependence_gender.svg", PlotKind::Dependence, |s| {
                s.feature = Some("DEMO_GENDER".into());
            }),
            plot("dependence_systolic.svg", PlotKind::Dependence, |s| {
                s.feature = Some("VL_BP_SYSTOLIC".into());
                s.color_by = Some("VL_BP_DIASTOLIC".into());
            }),
            plot("dependence_diastolic.svg", PlotKind::Dependence, |s| {
                s.feature = Some("VL_BP_DIASTOLIC".into());
                s.color_by = Some("VL_BP_SYSTOLIC".into());
            }),
            plot("embed_shap.svg", PlotKind::Embedding, |s| {
                s.inputs.embed = Some(EmbedSpace::Shap.default_file().into());
            }),
            plot("embed_raw.svg", PlotKind::Embedding, |s| {
                s.inputs.embed = Some(EmbedSpace::Raw.default_file().into());
            }),
        ];
        PipelineConfig {
            version: 1,
            seed: Some(seed),
            stages: vec![
                Stage::Synth(SynthStage::default()),
                Stage::Etl(EtlStage::default()),
                Stage::Tune(TuneStage {
                    config: TuneConfig {
                        grid,
                        ..TuneConfig::default()
                    },
                }),
                Stage::Train(TrainStage::default()),
                Stage::Eval(SplitStage::default()),
                Stage::Explain(SplitStage::default()),
                Stage::Embed(EmbedStage::default()),
                Stage::Embed(EmbedStage {
                    space: EmbedSpace::Raw,
                    ..EmbedStage::default()
                }),
                Stage::Plot(PlotStage { plots }),
            ],
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let c: PipelineConfig = util::read_json(path)?;
        if c.version != 1 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                json_path: "version".into(),
                message: format!("unsupported pipeline config version {}", c.version),
            });
        }
        Ok(c)
    }
}

/// One executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Path (relative to the run directory when inside it) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// The effective stage config, seeds included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub stages: Vec<StageRecord>,
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(path, e)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// SHA-256 of every file under `paths`, keyed by path relative to `root`.
pub fn checksums(root: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    files
        .into_iter()
        .map(|f| {
            let key = f
                .strip_prefix(root)
                .unwrap_or(&f)
                .to_string_lossy()
                .replace('\\', "/");
            Ok((key, util::sha256_file(&f)?))
        })
        .collect()
}

pub fn synth_stage(config: &CohortConfig, raw: &Path) -> Result<RawManifest> {
    let store = synth::generate_cohort(config)?;
    synth::write_raw_tables(&store, raw)
}

pub fn etl_stage(raw: &Path, maps: Option<&Path>, config: &EtlConfig, cases: &Path) -> Result<EtlReport> {
    let store = synth::read_raw_tables(raw)?;
    let maps = match maps {
        Some(dir) => CodeMaps::from_dir(dir)?,
        None => CodeMaps::builtin(),
    };
    let out = etl::run_etl(&store, &maps, config)?;
    etl::write_etl_output(&out, cases, Some(config.split.seed))?;
    Ok(out.report)
}

/// Tunes on the training split.
pub fn tune_stage(cases: &Path, config: &TuneConfig, out: &Path) -> Result<TuneReport> {
    let train = dataset::load_split(cases, SplitName::Train)?;
    let report = gbt::tune(&train, config)?;
    util::write_json(out, &report)?;
    Ok(report)
}

/// Trains on the training split.
pub fn train_stage(cases: &Path, hp: &Hyperparams, out: &Path) -> Result<GbtModel> {
    let train = dataset::load_split(cases, SplitName::Train)?;
    let model = gbt::train(&train, hp)?;
    model.save(out)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub split: SplitName,
    #[serde(flatten)]
    pub report: EvalReport,
}

pub fn eval_stage(model: &Path, cases: &Path, split: SplitName, out: &Path) -> Result<EvalReport> {
    let model = GbtModel::load(model)?;
    let data = dataset::load_split(cases, split)?;
    let report = gbt::evaluate(&model, &data)?;
    util::write_json(
        out,
        &EvalFile {
            split,
            report: report.clone(),
        },
    )?;
    Ok(report)
}

pub fn explain_stage(model: &Path, cases: &Path, split: SplitName, out: &Path) -> Result<ShapMeta> {
    let model = GbtModel::load(model)?;
    let data = dataset::load_split(cases, split)?;
    let s = shap::explain_dataset(&model, &data)?;
    shap::write_shap_dir(&s, out)
}

/// Sorted seeded subset of `0..n` of size `max` (everything when `n <= max`).
pub fn subset_indices(n: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(k) if k < n => {
            let mut idx = index::sample(&mut util::stream_rng(seed, SUBSET_STREAM), n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Written next to the embedding CSV with a `.json` extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub input_space: InputSpace,
    pub n_points: usize,
    pub perplexity: f64,
    pub final_kl: f64,
    /// Mean |EF difference| to the 10 nearest embedding neighbours.
    pub knn10_label_gap: f64,
}

/// Embeds a SHAP directory (`space = shap`) or one split of a case
/// directory (`space = raw`).
pub fn embed_stage(
    input: &Path,
    space: EmbedSpace,
    split: SplitName,
    max_points: Option<usize>,
    config: &TsneConfig,
    out: &Path,
) -> Result<(Embedding2D, EmbedReport)> {
    let (ids, labels, points) = match space {
        EmbedSpace::Shap => {
            let s = shap::read_shap_dir(input)?;
            (s.case_ids, s.labels, s.values)
        }
        EmbedSpace::Raw => {
            let train = dataset::load_split(input, SplitName::Train)?;
            let data = dataset::load_split(input, split)?;
            let points = embed::prepare_raw(&train, &data)?;
            (data.case_ids().to_vec(), data.labels().to_vec(), points)
        }
    };
    let keep = subset_indices(points.len(), max_points, config.seed);
    let ids: Vec<_> = keep.iter().map(|&i| ids[i]).collect();
    let labels: Vec<f64> = keep.iter().map(|&i| labels[i]).collect();
    let points: Vec<Vec<f64>> = keep.iter().map(|&i| points[i].clone()).collect();
    let emb = embed::tsne(&points, config, space.input_space())?;
    embed::write_embedding_csv(out, &ids, &emb, &labels)?;
    let report = EmbedReport {
        input_space: emb.input_space,
        n_points: points.len(),
        perplexity: emb.perplexity,
        final_kl: emb.final_kl,
        knn10_label_gap: embed::knn_label_gap(&emb.coords, &labels, 10)?,
    };
    util::write_json(&out.with_extension("json"), &report)?;
    Ok((emb, report))
}

fn under(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Fills absent plot inputs with the run-directory defaults the kind needs
/// and resolves relative paths against `root`.
pub fn resolve_plot_spec(root: &Path, spec: &PlotSpec) -> PlotSpec {
    let mut s = spec.clone();
    let i = &mut s.inputs;
    let default = |slot: &mut Option<PathBuf>, name: &str| {
        *slot = Some(under(root, slot.as_deref().unwrap_or(Path::new(name))));
    };
    match s.kind {
        PlotKind::PredScatter | PlotKind::ImportanceBars => {
            default(&mut i.model, MODEL_FILE);
            default(&mut i.cases, CASES_DIR);
        }
        PlotKind::Beeswarm | PlotKind::Dependence => {
            default(&mut i.shap, SHAP_DIR);
            default(&mut i.cases, CASES_DIR);
        }
        PlotKind::Embedding => {
            default(&mut i.embed, EmbedSpace::Shap.default_file());
            if s.color_by.as_deref().is_some_and(|c| c != "label") {
                default(&mut i.cases, CASES_DIR);
            }
        }
    }
    s
}

fn plot_inputs(spec: &PlotSpec) -> Vec<PathBuf> {
    let i = &spec.inputs;
    [&i.cases, &i.shap, &i.model, &i.embed]
        .into_iter()
        .flatten()
        .cloned()
        .collect()
}

/// Runs one stage inside `root`, returning its input and output paths.
fn run_stage(root: &Path, stage: &Stage) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    let raw = root.join(RAW_DIR);
    let cases = root.join(CASES_DIR);
    let model = root.join(MODEL_FILE);
    let shap_dir = root.join(SHAP_DIR);
    match stage {
        Stage::Synth(c) => {
            synth_stage(&c.config, &raw)?;
            Ok((vec![], vec![raw]))
        }
        Stage::Etl(c) => {
            let maps = c.maps.as_deref().map(|m| under(root, m));
            etl_stage(&raw, maps.as_deref(), &c.config, &cases)?;
            Ok((std::iter::once(raw).chain(maps).collect(), vec![cases]))
        }
        Stage::Tune(c) => {
            let out = root.join(TUNE_REPORT_FILE);
            tune_stage(&cases, &c.config, &out)?;
            Ok((vec![cases], vec![out]))
        }
        Stage::Train(c) => {
            let tuned = root.join(TUNE_REPORT_FILE);
            let mut inputs = vec![cases.clone()];
            let hp = if c.use_tuned && tuned.exists() {
                let report: TuneReport = util::read_json(&tuned)?;
                inputs.push(tuned);
                Hyperparams {
                    seed: c.params.seed,
                    ..report.best
                }
            } else {
                c.params.clone()
            };
            train_stage(&cases, &hp, &model)?;
            Ok((inputs, vec![model]))
        }
        Stage::Eval(c) => {
            let out = root.join(REPORT_FILE);
            eval_stage(&model, &cases, c.split, &out)?;
            Ok((vec![model, cases], vec![out]))
        }
        Stage::Explain(c) => {
            explain_stage(&model, &cases, c.split, &shap_dir)?;
            Ok((vec![model, cases], vec![shap_dir]))
        }
        Stage::Embed(c) => {
            let out = under(root, c.out.as_deref().unwrap_or(Path::new(c.space.default_file())));
            let input = match c.space {
                EmbedSpace::Shap => shap_dir,
                EmbedSpace::Raw => cases,
            };
            embed_stage(&input, c.space, c.split, c.max_points, &c.config, &out)?;
            Ok((vec![input], vec![out.clone(), out.with_extension("json")]))
        }
        Stage::Plot(c) => {
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            for job in &c.plots {
                let spec = resolve_plot_spec(root, &job.spec);
                let out = under(root, &job.out);
                if let Some(parent) = out.parent() {
                    util::create_dir(parent)?;
                }
                viz::render_to_file(&spec, &out)?;
                inputs.extend(plot_inputs(&spec));
                outputs.push(out);
            }
            inputs.sort();
            inputs.dedup();
            Ok((inputs, outputs))
        }
    }
}

/// Runs the stages in order inside `root`, rewriting `manifest.json` after
/// every completed stage. A failing stage aborts the run with
/// [`Error::Stage`]; artifacts of earlier stages are left as they are.
pub fn run_pipeline(config: &PipelineConfig, root: &Path) -> Result<RunManifest> {
    util::create_dir(root)?;
    let mut manifest = RunManifest {
        format_version: RUN_FORMAT_VERSION,
        stages: Vec::new(),
    };
    for stage in &config.stages {
        let stage = match config.seed {
            Some(s) => stage.with_seed(s),
            None => stage.clone(),
        };
        let name = stage.name();
        log::info!("stage {name}");
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let start = Instant::now();
        let (inputs, outputs) = run_stage(root, &stage).map_err(wrap)?;
        let elapsed = start.elapsed();
        let stage_json = serde_json::to_value(&stage).expect("stage config serializes");
        manifest.stages.push(StageRecord {
            stage: name.to_string(),
            inputs: checksums(root, &inputs).map_err(wrap)?,
            outputs: checksums(root, &outputs).map_err(wrap)?,
            config: stage_json.get(name).cloned().unwrap_or(stage_json),
            seed: stage.seed(),
            wall_time_ms: elapsed.as_millis() as u64,
        });
        util::write_json(&root.join(RUN_MANIFEST_FILE), &manifest)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_is_sorted_and_seeded() {
        let a = subset_indices(100, Some(10), 3);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subset_indices(100, Some(10), 3));
        assert_ne!(a, subset_indices(100, Some(10), 4));
        assert_eq!(subset_indices(5, Some(10), 0), vec![0, 1, 2, 3, 4]);
        assert_eq!(subset_indices(5, None, 0).len(), 5);
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let c = PipelineConfig::full(11);
        for s in &c.stages {
            let s = s.with_seed(11);
            if let Some(seed) = s.seed() {
                assert_eq!(seed, 11, "{}", s.name());
            }
        }
    }

    #[test]
    fn schema_errors_carry_json_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        std::fs::write(
            &p,
            r#"{"version":1,"stages":[{"synth":{}},{"etl":{"config":{"winsor_lo":"x"}}}]}"#,
        )
        .unwrap();
        match PipelineConfig::from_file(&p) {
            Err(Error::Schema { json_path, .. }) => assert_eq!(json_path, "stages[1].etl.config.winsor_lo"),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, r#"{"stages":[{"fit":{}}]}"#).unwrap();
        assert!(matches!(PipelineConfig::from_file(&p), Err(Error::Schema { .. })));
    }

    #[test]
    fn full_config_round_trips() {
        let c = PipelineConfig::full(7);
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
