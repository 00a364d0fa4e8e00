//! Deterministic SVG figures: prediction scatter, importance bars, SHAP
//! beeswarm, dependence scatter and embedding scatter.
//!
//! Every data point becomes exactly one `<circle class="pt">` element, bars
//! are `<rect class="bar">`. Colors and tick rules are documented in
//! `docs/plots.md`.

pub mod svg;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, CaseMatrix, Cell, SplitName};
use crate::embed::{self, EmbeddedPoint};
use crate::error::{Error, Result};
use crate::gbt::{self, GbtModel};
use crate::shap::{self, FeaturePoints, ShapMatrix, ShapSummary};
use crate::util;

use svg::{Scale, Svg, BAR_COLOR, INK, MISSING_COLOR};

const JITTER_STREAM: u64 = 0x5649_5a4a;
const POINT_RADIUS: f64 = 2.5;
/// Fraction of a beeswarm row occupied by jitter.
const ROW_SPREAD: f64 = 0.7;
/// Features with at most this many distinct values are jittered in
/// dependence plots.
const DISCRETE_LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    PredScatter,
    ImportanceBars,
    Beeswarm,
    Dependence,
    Embedding,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::Config(format!("unknown plot kind `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotInputs {
    /// Case directory written by the ETL stage.
    pub cases: Option<PathBuf>,
    /// SHAP directory written by the explain stage.
    pub shap: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// `embed.csv` written by the embed stage.
    pub embed: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub inputs: PlotInputs,
    /// Split used by `pred_scatter` and `importance_bars`.
    pub split: SplitName,
    /// Feature plotted by `dependence`.
    pub feature: Option<String>,
    /// A feature name, or `label` for the EF label.
    pub color_by: Option<String>,
    pub top_k: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Horizontal jitter of discrete dependence features, as a fraction of
    /// the gap between neighbouring levels.
    pub jitter: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            kind: PlotKind::Beeswarm,
            inputs: PlotInputs::default(),
            split: SplitName::Test,
            feature: None,
            color_by: None,
            top_k: 20,
            width: 800,
            height: 600,
            seed: 0,
            jitter: 0.3,
        }
    }
}

impl PlotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 200 || self.height < 150 {
            return Err(Error::Config(format!(
                "plot size {}x{} is below the 200x150 minimum",
                self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter {} outside [0, 1]", self.jitter)));
        }
        if self.kind == PlotKind::Dependence && self.feature.is_none() {
            return Err(Error::Config("dependence plot needs `feature`".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub title: String,
}

impl Frame {
    pub fn new(width: u32, height: u32, title: impl Into<String>) -> Self {
        Frame {
            width,
            height,
            title: title.into(),
        }
    }

    fn area(&self, left: f64, right: f64) -> [f64; 4] {
        [left, 40.0, f64::from(self.width) - right, f64::from(self.height) - 60.0]
    }

    fn begin(&self) -> Svg {
        let mut s = Svg::new(self.width, self.height);
        s.text(f64::from(self.width) / 2.0, 22.0, "middle", 14, &self.title);
        s
    }
}

/// Normalizes a column to `[0, 1]` by its observed range.
fn color_scale(values: &[Cell]) -> impl Fn(Cell) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    move |v: Cell| match v {
        None => MISSING_COLOR.to_string(),
        Some(v) if hi > lo => svg::ramp((v - lo) / (hi - lo)),
        Some(_) => svg::ramp(0.5),
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Contract(format!(
            "input `{what}` has {got} rows, expected {expected}"
        )));
    }
    Ok(())
}

/// Predicted versus observed EF with the identity line.
pub fn pred_scatter(pred: &[f64], actual: &[f64], frame: &Frame) -> Result<String> {
    check_len("predictions", pred.len(), actual.len())?;
    let area = frame.area(70.0, 30.0);
    let both = pred.iter().chain(actual).copied();
    let xs = Scale::fit(both.clone(), area[0], area[2]);
    let ys = Scale::fit(both, area[3], area[1]);
    let mut s = frame.begin();
    s.axes(&xs, &ys, area, "Observed EF (%)", "Predicted EF (%)");
    let (lo, hi) = (xs.d0.max(ys.d0), xs.d1.min(ys.d1));
    s.line(xs.map(lo), ys.map(lo), xs.map(hi), ys.map(hi), INK, "identity");
    if pred.len() >= 2 {
        let r = gbt::eval_predictions(pred, actual)?;
        let r2 = r.r2.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        s.text(area[0] + 8.0, area[1] + 14.0, "start", 11, &format!("RMSE {:.4}  R2 {r2}", r.rmse));
    }
    for (p, a) in pred.iter().zip(actual) {
        s.point(xs.map(*a), ys.map(*p), POINT_RADIUS, BAR_COLOR);
    }
    Ok(s.finish(&frame.title))
}

/// Horizontal bars, longest first as given.
pub fn importance_bars(items: &[(String, f64)], xlabel: &str, frame: &Frame) -> String {
    let area = frame.area(200.0, 30.0);
    let max = items.iter().map(|i| i.1).fold(0.0, f64::max);
    let xs = Scale {
        d0: 0.0,
        d1: if max > 0.0 { max * 1.05 } else { 1.0 },
        r0: area[0],
        r1: area[2],
    };
    let mut s = frame.begin();
    s.x_axis(&xs, area, xlabel);
    s.line(area[0], area[1], area[0], area[3], INK, "axis");
    let rowh = (area[3] - area[1]) / items.len().max(1) as f64;
    for (i, (name, v)) in items.iter().enumerate() {
        let y = area[1] + i as f64 * rowh;
        s.bar(area[0], y + rowh * 0.15, xs.map(*v) - area[0], rowh * 0.7, BAR_COLOR);
        s.text(area[0] - 6.0, y + rowh / 2.0 + 3.0, "end", 10, name);
    }
    s.finish(&frame.title)
}

/// SHAP summary plot: one row per feature of `summary.points` in ranking
/// order, x = SHAP value, color = feature value.
pub fn beeswarm(summary: &ShapSummary, frame: &Frame, seed: u64) -> Result<String> {
    for (i, p) in summary.points.iter().enumerate() {
        if summary.ranking.get(i).map(|r| r.feature_id) != Some(p.feature_id) {
            return Err(Error::Contract(format!(
                "input `summary` points row {i} (`{}`) is out of ranking order",
                p.name
            )));
        }
    }
    let area = frame.area(200.0, 70.0);
    let xs = Scale::fit(
        summary.points.iter().flat_map(|p| p.pairs.iter().map(|q| q.1)).chain([0.0]),
        area[0],
        area[2],
    );
    let mut s = frame.begin();
    s.x_axis(&xs, area, "SHAP value (EF %)");
    s.line(area[0], area[1], area[0], area[3], INK, "axis");
    s.line(xs.map(0.0), area[1], xs.map(0.0), area[3], INK, "zero");
    s.ramp_legend(area[2] + 16.0, area[1] + 20.0, area[3] - 20.0, "Feature value");
    let k = summary.points.len();
    let rowh = (area[3] - area[1]) / k.max(1) as f64;
    for (i, fp) in summary.points.iter().enumerate() {
        let cy = area[1] + (i as f64 + 0.5) * rowh;
        s.text(area[0] - 6.0, cy + 3.0, "end", 10, &fp.name);
        let values: Vec<Cell> = fp.pairs.iter().map(|p| p.0).collect();
        let color = color_scale(&values);
        let mut rng = util::stream_rng(seed, JITTER_STREAM ^ fp.feature_id as u64);
        for (v, phi) in &fp.pairs {
            let dy = rng.random_range(-0.5..0.5) * rowh * ROW_SPREAD;
            s.point(xs.map(*phi), cy + dy, POINT_RADIUS, &color(*v));
        }
    }
    Ok(s.finish(&frame.title))
}

/// SHAP value of one feature against its value. Missing feature values sit
/// in a separate band left of the axis. Discrete features (few distinct
/// levels) are jittered horizontally by `jitter` times the smallest level gap.
pub fn dependence(
    points: &FeaturePoints,
    color_by: Option<(&str, &[Cell])>,
    frame: &Frame,
    jitter: f64,
    seed: u64,
) -> Result<String> {
    if let Some((name, c)) = color_by {
        check_len(&format!("color_by ({name})"), c.len(), points.pairs.len())?;
    }
    let mut levels: Vec<f64> = points.pairs.iter().filter_map(|p| p.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let discrete = levels.len() <= DISCRETE_LEVELS;
    let gap = levels
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let spread = if discrete && gap.is_finite() { jitter * gap } else { 0.0 };
    let has_missing = points.pairs.iter().any(|p| p.0.is_none());
    let area = frame.area(if has_missing { 120.0 } else { 70.0 }, 70.0);
    let xs = Scale::fit(
        levels.iter().flat_map(|v| [v - spread / 2.0, v + spread / 2.0]),
        area[0],
        area[2],
    );
    let ys = Scale::fit(points.pairs.iter().map(|p| p.1).chain([0.0]), area[3], area[1]);
    let mut s = frame.begin();
    s.axes(&xs, &ys, area, &points.name, &format!("SHAP value for {}", points.name));
    let missing_x = area[0] - 30.0;
    if has_missing {
        s.text(missing_x, area[3] + 16.0, "middle", 10, "missing");
    }
    let color: Box<dyn Fn(usize) -> String> = match color_by {
        Some((name, c)) => {
            s.ramp_legend(area[2] + 16.0, area[1] + 20.0, area[3] - 20.0, name);
            let scale = color_scale(c);
            Box::new(move |i| scale(c[i]))
        }
        None => Box::new(|_| BAR_COLOR.to_string()),
    };
    let mut rng = util::stream_rng(seed, JITTER_STREAM ^ points.feature_id as u64);
    for (i, (v, phi)) in points.pairs.iter().enumerate() {
        let x = match v {
            Some(v) if spread > 0.0 => xs.map(v + rng.random_range(-0.5..0.5) * spread),
            Some(v) => xs.map(*v),
            None => missing_x,
        };
        s.point(x, ys.map(*phi), POINT_RADIUS, &color(i));
    }
    Ok(s.finish(&frame.title))
}

/// 2-D embedding colored by `values` on the ramp.
pub fn embedding(coords: &[[f64; 2]], values: &[Cell], legend: &str, frame: &Frame) -> Result<String> {
    check_len("color values", values.len(), coords.len())?;
    let area = frame.area(70.0, 70.0);
    let xs = Scale::fit(coords.iter().map(|c| c[0]), area[0], area[2]);
    let ys = Scale::fit(coords.iter().map(|c| c[1]), area[3], area[1]);
    let mut s = frame.begin();
    s.axes(&xs, &ys, area, "t-SNE 1", "t-SNE 2");
    s.ramp_legend(area[2] + 16.0, area[1] + 20.0, area[3] - 20.0, legend);
    let color = color_scale(values);
    for (c, v) in coords.iter().zip(values) {
        s.point(xs.map(c[0]), ys.map(c[1]), POINT_RADIUS, &color(*v));
    }
    Ok(s.finish(&frame.title))
}

fn need<'a>(kind: PlotKind, name: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| {
        Error::Contract(format!("plot kind `{kind:?}` needs input `{name}`"))
    })
}

/// Rows of `cases` in the order of `ids`.
fn align_cases(cases: &CaseMatrix, ids: &[dataset::CaseId], against: &str) -> Result<CaseMatrix> {
    let index: HashMap<_, _> = cases.case_ids().iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let rows = ids
        .iter()
        .map(|id| {
            index.get(id).copied().ok_or_else(|| {
                Error::Contract(format!(
                    "input `cases` has no case {} required by input `{against}`",
                    embed::case_label(id)
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cases.select(&rows))
}

fn load_aligned(spec: &PlotSpec) -> Result<(ShapMatrix, CaseMatrix)> {
    let shap = shap::read_shap_dir(need(spec.kind, "shap", &spec.inputs.shap)?)?;
    let cases = dataset::read_case_dir(need(spec.kind, "cases", &spec.inputs.cases)?)?;
    if cases.catalog().fingerprint() != shap.catalog_fingerprint {
        return Err(Error::Contract(
            "input `cases` was built with a different feature catalog than input `shap`".into(),
        ));
    }
    let aligned = align_cases(&cases, &shap.case_ids, "shap")?;
    Ok((shap, aligned))
}

fn feature_column(data: &CaseMatrix, name: &str) -> Result<Vec<Cell>> {
    if name == "label" {
        return Ok(data.labels().iter().map(|v| Some(*v)).collect());
    }
    let j = data
        .catalog()
        .index_of(name)
        .ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))?;
    Ok(data.column(j))
}

/// Loads the inputs named by `spec` and renders the figure.
pub fn render(spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    let frame = |title: String| Frame::new(spec.width, spec.height, title);
    match spec.kind {
        PlotKind::PredScatter => {
            let model = GbtModel::load(need(spec.kind, "model", &spec.inputs.model)?)?;
            let data = dataset::load_split(need(spec.kind, "cases", &spec.inputs.cases)?, spec.split)?;
            let pred = model.predict(&data)?;
            pred_scatter(&pred, data.labels(), &frame(format!("Predicted vs observed EF ({})", spec.split)))
        }
        PlotKind::ImportanceBars => {
            if let Some(m) = &spec.inputs.model {
                let model = GbtModel::load(m)?;
                let data = dataset::load_split(need(spec.kind, "cases", &spec.inputs.cases)?, spec.split)?;
                let items: Vec<(String, f64)> = gbt::ranked_coverage(&model, &data, 0.0)?
                    .into_iter()
                    .take(spec.top_k)
                    .map(|f| (f.name, f.coverage))
                    .collect();
                Ok(importance_bars(&items, "Coverage", &frame("Feature importance (coverage)".into())))
            } else {
                let shap = shap::read_shap_dir(need(spec.kind, "model` or `shap", &spec.inputs.shap)?)?;
                let n = shap.n_cases().max(1) as f64;
                let mut items: Vec<(usize, String, f64)> = (0..shap.n_features())
                    .map(|j| {
                        let v = shap.values.iter().map(|r| r[j].abs()).sum::<f64>() / n;
                        (j, shap.feature_names[j].clone(), v)
                    })
                    .collect();
                items.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
                let items: Vec<(String, f64)> =
                    items.into_iter().take(spec.top_k).map(|i| (i.1, i.2)).collect();
                Ok(importance_bars(&items, "mean |SHAP|", &frame("Feature importance (mean |SHAP|)".into())))
            }
        }
        PlotKind::Beeswarm => {
            let (shap, data) = load_aligned(spec)?;
            let summary = shap::summarize(&shap, &data, spec.top_k)?;
            beeswarm(&summary, &frame("SHAP summary".into()), spec.seed)
        }
        PlotKind::Dependence => {
            let (shap, data) = load_aligned(spec)?;
            let name = spec.feature.as_deref().unwrap_or_default();
            let j = data
                .catalog()
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))?;
            let points = FeaturePoints {
                feature_id: j,
                name: name.to_string(),
                pairs: data.column(j).into_iter().zip(shap.column(j)).collect(),
            };
            let color = spec
                .color_by
                .as_deref()
                .map(|c| feature_column(&data, c).map(|v| (c, v)))
                .transpose()?;
            dependence(
                &points,
                color.as_ref().map(|(c, v)| (*c, v.as_slice())),
                &frame(format!("SHAP dependence: {name}")),
                spec.jitter,
                spec.seed,
            )
        }
        PlotKind::Embedding => {
            let path = need(spec.kind, "embed", &spec.inputs.embed)?;
            let pts = embed::read_embedding_csv(path)?;
            let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
            let by = spec.color_by.as_deref().unwrap_or("label");
            let values = embedding_colors(spec, &pts, by)?;
            let legend = if by == "label" { "EF (%)" } else { by };
            embedding(&coords, &values, legend, &frame(format!("t-SNE embedding colored by {legend}")))
        }
    }
}

fn embedding_colors(spec: &PlotSpec, pts: &[EmbeddedPoint], by: &str) -> Result<Vec<Cell>> {
    if by == "label" {
        return Ok(pts.iter().map(|p| Some(p.label_ef)).collect());
    }
    let cases = dataset::read_case_dir(need(spec.kind, "cases", &spec.inputs.cases)?)?;
    let j = cases
        .catalog()
        .index_of(by)
        .ok_or_else(|| Error::Config(format!("unknown feature `{by}`")))?;
    let index: HashMap<String, usize> = cases
        .case_ids()
        .iter()
        .enumerate()
        .map(|(i, c)| (embed::case_label(c), i))
        .collect();
    pts.iter()
        .map(|p| {
            index.get(&p.case_id).map(|i| cases.row(*i)[j]).ok_or_else(|| {
                Error::Contract(format!(
                    "input `cases` has no case {} required by input `embed`",
                    p.case_id
                ))
            })
        })
        .collect()
}

pub fn render_to_file(spec: &PlotSpec, out: &Path) -> Result<()> {
    util::write_bytes(out, render(spec)?.as_bytes())
}
