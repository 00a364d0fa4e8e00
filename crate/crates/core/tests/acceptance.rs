//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{matrix, random_model, random_row};
use efshap::dataset::{Cell, SplitName};
use efshap::embed::{
    compute_affinities, kl_and_gradient, knn_label_gap, read_embedding_csv, silhouette, tsne,
    InputSpace, TsneConfig,
};
use efshap::gbt::{coordinate_descent, train, GbtModel, Hyperparams, Node};
use efshap::pipeline::{self, checksums, PipelineConfig};
use efshap::shap::{explain_dataset, read_shap_dir, shapley_oracle, tree_shap};
use efshap::util;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Default-configuration run shared by the planted-effect criteria.
struct DefaultRun {
    _dir: tempfile::TempDir,
    root: PathBuf,
    seconds: f64,
}

impl DefaultRun {
    fn new() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(e2s)?;
        let root = dir.path().to_path_buf();
        let t = Instant::now();
        pipeline::run_pipeline(&PipelineConfig::full(7), &root).map_err(e2s)?;
        Ok(DefaultRun {
            _dir: dir,
            root,
            seconds: t.elapsed().as_secs_f64(),
        })
    }
}

fn shap_oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let m = rng.random_range(1..=10);
        let model = random_model(&mut rng, m, 5, 3);
        for _ in 0..10 {
            let row = random_row(&mut rng, m);
            let fast = tree_shap(&model, &row).map_err(e2s)?.values;
            let slow = shapley_oracle(&model, &row).map_err(e2s)?;
            let scale = model.predict_row(&row).map_err(e2s)?.abs().max(1.0);
            for (a, b) in fast.iter().zip(&slow) {
                let rel = (a - b).abs() / scale;
                worst = worst.max(rel);
                ensure(rel <= 1e-9, || format!("model {k}: {a} vs oracle {b}"))?;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("1000 cases, max scaled diff {worst:.1e}, {secs:.2}s"))
}

fn local_accuracy(run: &DefaultRun) -> Outcome {
    let model = GbtModel::load(&run.root.join(pipeline::MODEL_FILE)).map_err(e2s)?;
    let test = efshap::dataset::load_split(&run.root.join(pipeline::CASES_DIR), SplitName::Test).map_err(e2s)?;
    let shap = read_shap_dir(&run.root.join(pipeline::SHAP_DIR)).map_err(e2s)?;
    ensure(test.n_cases() >= 1000, || format!("test split has {} cases", test.n_cases()))?;
    ensure(shap.n_cases() == test.n_cases(), || "shap rows differ from test split".into())?;
    let mut worst = 0.0f64;
    for (i, row) in test.rows().iter().enumerate() {
        ensure(shap.case_ids[i] == test.case_ids()[i], || format!("row {i} case id mismatch"))?;
        let pred = model.predict_row(row).map_err(e2s)?;
        let err = (shap.base_value + shap.values[i].iter().sum::<f64>() - pred).abs();
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("case {i}: residual {err:e}"))?;
    }
    Ok(format!("{} test cases, max residual {worst:.1e}", test.n_cases()))
}

fn closed_form_leaves() -> Outcome {
    let x = [0.0, 0.0, 0.0, 1.0, 1.0];
    let y = [30.0, 30.0, 30.0, 60.0, 60.0];
    let data = matrix(x.iter().map(|v| vec![Some(*v)]).collect(), y.to_vec());
    let soft = |g: f64, a: f64| g.signum() * (g.abs() - a).max(0.0);
    let mut checked = 0;
    for (lambda, alpha) in [(0.0, 0.0), (0.5, 0.0), (2.0, 0.0), (1.0, 3.0)] {
        let hp = Hyperparams {
            n_trees: 1,
            max_depth: 1,
            eta: 1.0,
            min_child_weight: 0.0,
            subsample: 1.0,
            reg_lambda: lambda,
            reg_alpha: alpha,
            gamma: 0.0,
            ..Hyperparams::default()
        };
        let model = train(&data, &hp).map_err(e2s)?;
        let base = y.iter().sum::<f64>() / 5.0;
        ensure((model.base_score - base).abs() <= 1e-12, || "base score is not the label mean".into())?;
        let tree = model.trees.first().ok_or("no tree grown")?;
        let (left, right) = match tree.nodes[0] {
            Node::Split { feature_id: 0, left, right, .. } => (left, right),
            _ => return Err("root is not a split on x".into()),
        };
        // Hand computation: g_i = base - y_i, h_i = 1.
        for (child, side) in [(left, 0.0), (right, 1.0)] {
            let members: Vec<f64> = x.iter().zip(&y).filter(|(xi, _)| **xi == side).map(|(_, yi)| *yi).collect();
            let g: f64 = members.iter().map(|yi| base - yi).sum();
            let h = members.len() as f64;
            let want = -soft(g, alpha) / (h + lambda);
            match tree.nodes[child] {
                Node::Leaf { weight, .. } => ensure((weight - want).abs() <= 1e-12, || {
                    format!("lambda {lambda} alpha {alpha}: leaf {weight} vs {want}")
                })?,
                _ => return Err("child is not a leaf".into()),
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} leaf weights across 4 (lambda, alpha) settings"))
}

fn overfit_interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let rows: Vec<Vec<Cell>> = (0..50)
        .map(|_| (0..5).map(|_| Some(rng.random_range(0.0..1.0))).collect())
        .collect();
    let labels: Vec<f64> = rows
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|c| c.unwrap()).collect();
            25.0 + 20.0 * v[0] - 15.0 * v[1] * v[2] + 10.0 * v[3].powi(2)
        })
        .collect();
    let data = matrix(rows, labels);
    let hp = Hyperparams {
        n_trees: 1,
        max_depth: 30,
        eta: 1.0,
        min_child_weight: 0.0,
        subsample: 1.0,
        col_sample_by_tree: 1.0,
        col_sample_by_level: 1.0,
        reg_lambda: 0.0,
        reg_alpha: 0.0,
        gamma: 0.0,
        ..Hyperparams::default()
    };
    let model = train(&data, &hp).map_err(e2s)?;
    let pred = model.predict(&data).map_err(e2s)?;
    let worst = pred.iter().zip(data.labels()).map(|(p, y)| (p - y).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("max training error {worst:e}"))?;
    Ok(format!("50 cases, max error {worst:.1e}"))
}

/// SHAP of every case in the default cohort under the default-run model.
fn all_case_shap(run: &DefaultRun) -> Result<(efshap::dataset::CaseMatrix, efshap::shap::ShapMatrix), String> {
    let model = GbtModel::load(&run.root.join(pipeline::MODEL_FILE)).map_err(e2s)?;
    let cases = efshap::dataset::read_case_dir(&run.root.join(pipeline::CASES_DIR)).map_err(e2s)?;
    let shap = explain_dataset(&model, &cases).map_err(e2s)?;
    Ok((cases, shap))
}

fn gender_effect(cases: &efshap::dataset::CaseMatrix, shap: &efshap::shap::ShapMatrix) -> Outcome {
    ensure(cases.n_cases() >= 2000, || format!("only {} cases", cases.n_cases()))?;
    let j = cases.catalog().index_of("DEMO_GENDER").ok_or("no DEMO_GENDER feature")?;
    let mut groups: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for (row, phi) in cases.rows().iter().zip(&shap.values) {
        if let Some(v) = row[j] {
            let g = groups.entry(v as u8).or_default();
            g.0 += phi[j];
            g.1 += 1;
        }
    }
    let mean = |k: u8| groups.get(&k).map(|(s, n)| s / *n as f64).ok_or(format!("no cases with gender {k}"));
    let female = efshap::synth::FEMALE as u8;
    let (f, m) = (mean(female)?, mean(1 - female)?);
    let gap = f - m;
    ensure(gap > 0.0 && (gap - 5.0).abs() <= 0.25 * 5.0, || format!("female - male = {gap:.3}"))?;
    Ok(format!("{} cases, female {f:+.2}, male {m:+.2}, gap {gap:.2}", cases.n_cases()))
}

fn blood_pressure_signs(cases: &efshap::dataset::CaseMatrix, shap: &efshap::shap::ShapMatrix) -> Outcome {
    let r = |name: &str| -> Result<(f64, usize), String> {
        let j = cases.catalog().index_of(name).ok_or(format!("no {name} feature"))?;
        let (x, s): (Vec<f64>, Vec<f64>) = cases
            .rows()
            .iter()
            .zip(&shap.values)
            .filter_map(|(row, phi)| row[j].map(|v| (v, phi[j])))
            .unzip();
        Ok((pearson(&x, &s), x.len()))
    };
    let (sys, n_sys) = r("VL_BP_SYSTOLIC")?;
    let (dia, n_dia) = r("VL_BP_DIASTOLIC")?;
    ensure(sys >= 0.3, || format!("systolic r = {sys:.3}"))?;
    ensure(dia <= -0.3, || format!("diastolic r = {dia:.3}"))?;
    Ok(format!("systolic r {sys:+.3} (n={n_sys}), diastolic r {dia:+.3} (n={n_dia})"))
}

fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let p = compute_affinities(&pts, 5.0).expect("feasible perplexity");
    let y: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, g) = kl_and_gradient(&p, &y, 1.0);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..y.len() {
        let mut plus = y.clone();
        let mut minus = y.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (kl_and_gradient(&p, &plus, 1.0).0 - kl_and_gradient(&p, &minus, 1.0).0) / (2.0 * h);
        worst = worst.max((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-6));
    }
    worst
}

fn tsne_gradient() -> Outcome {
    let t = Instant::now();
    let worst = (0..5).map(|s| gradient_check(1007 + s)).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("5 configurations, max relative error {worst:.1e}, {secs:.2}s"))
}

fn tsne_clusters() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let c = i % 2;
        pts.push((0..10).map(|k| normal.sample(&mut rng) + if k == 0 { 10.0 * c as f64 } else { 0.0 }).collect::<Vec<f64>>());
        labels.push(c);
    }
    let e = tsne(&pts, &TsneConfig::default(), InputSpace::RawFeatures).map_err(e2s)?;
    let s = silhouette(&e.coords, &labels).map_err(e2s)?;
    ensure(s >= 0.5, || format!("silhouette {s:.3}"))?;
    Ok(format!("N=200, D=10, silhouette {s:.3}"))
}

fn knn_gap(path: &Path) -> Result<(f64, usize), String> {
    let pts = read_embedding_csv(path).map_err(e2s)?;
    let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
    let labels: Vec<f64> = pts.iter().map(|p| p.label_ef).collect();
    Ok((knn_label_gap(&coords, &labels, 10).map_err(e2s)?, pts.len()))
}

fn shap_vs_raw(run: &DefaultRun) -> Outcome {
    let shap_csv = run.root.join(pipeline::EmbedSpace::Shap.default_file());
    let raw_csv = run.root.join(pipeline::EmbedSpace::Raw.default_file());
    let ids = |p: &Path| -> Result<Vec<String>, String> {
        Ok(read_embedding_csv(p).map_err(e2s)?.into_iter().map(|e| e.case_id).collect())
    };
    ensure(ids(&shap_csv)? == ids(&raw_csv)?, || "embeddings cover different cases".into())?;
    let (s, n) = knn_gap(&shap_csv)?;
    let (r, _) = knn_gap(&raw_csv)?;
    ensure(s < r, || format!("shap gap {s:.3} >= raw gap {r:.3}"))?;
    Ok(format!("{n} points, 10-NN EF gap shap {s:.2} < raw {r:.2}"))
}

fn etl_oracles() -> Outcome {
    common::oracles::check_winsor(1010, 1000)?;
    common::oracles::check_rare_filter(1010)?;
    common::oracles::check_build_cases(1010, 200)?;
    Ok("winsorize on 1000 vectors, rare filter at 6 thresholds, cases on 200 timelines".into())
}

fn determinism() -> Outcome {
    let config = common::small_pipeline(11, 400);
    let mut runs = Vec::new();
    let mut dirs = Vec::new();
    for threads in [1, 1, 8, 8] {
        let dir = tempfile::tempdir().map_err(e2s)?;
        util::with_threads(Some(threads), || pipeline::run_pipeline(&config, dir.path()))
            .map_err(e2s)?
            .map_err(e2s)?;
        let mut files = checksums(dir.path(), &[dir.path().to_path_buf()]).map_err(e2s)?;
        files.remove(pipeline::RUN_MANIFEST_FILE).ok_or("no manifest")?;
        let mut m: pipeline::RunManifest =
            util::read_json(&dir.path().join(pipeline::RUN_MANIFEST_FILE)).map_err(e2s)?;
        m.stages.iter_mut().for_each(|s| s.wall_time_ms = 0);
        runs.push((threads, files, m));
        dirs.push(dir);
    }
    let (_, first, m0) = &runs[0];
    for (i, (threads, files, m)) in runs.iter().enumerate().skip(1) {
        ensure(m == m0, || format!("run {i} ({threads} threads): manifest differs"))?;
        for (k, v) in first {
            ensure(files.get(k) == Some(v), || format!("run {i} ({threads} threads): {k} differs"))?;
        }
        ensure(files.len() == first.len(), || format!("run {i}: different file set"))?;
    }
    Ok(format!("4 runs x {} artifacts identical (1, 1, 8, 8 threads)", first.len()))
}

fn separable_tuner() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1012);
    let mut max_sweeps = 0;
    for t in 0..200 {
        let n_axes = rng.random_range(1..=5);
        let tables: Vec<Vec<f64>> = (0..n_axes)
            .map(|_| (0..rng.random_range(1..=6)).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let axes: Vec<Vec<f64>> = tables.iter().map(|t| (0..t.len()).map(|i| i as f64).collect()).collect();
        let f = |p: &[usize]| p.iter().enumerate().map(|(a, &i)| tables[a][i]).sum::<f64>();
        let r = coordinate_descent(&axes, 3, |p| Ok(f(p))).map_err(e2s)?;
        // Exhaustive grid.
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; n_axes];
        loop {
            best = best.min(f(&idx));
            let mut a = 0;
            while a < n_axes {
                idx[a] += 1;
                if idx[a] < tables[a].len() {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == n_axes {
                break;
            }
        }
        ensure(r.score == best, || format!("surface {t}: {} vs grid optimum {best}", r.score))?;
        ensure(r.sweeps <= 3, || format!("surface {t}: {} sweeps", r.sweeps))?;
        max_sweeps = max_sweeps.max(r.sweeps);
    }
    Ok(format!("200 surfaces, max {max_sweeps} sweeps"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why} [{secs:.1}s]");
            }
        }
    };

    let run = DefaultRun::new();
    if let Ok(r) = &run {
        println!("default pipeline finished in {:.1}s", r.seconds);
    }
    let with_run = |f: &dyn Fn(&DefaultRun) -> Outcome| match &run {
        Ok(r) => f(r),
        Err(e) => Err(format!("default pipeline failed: {e}")),
    };
    let full_shap = run.as_ref().map_err(Clone::clone).and_then(all_case_shap);
    let with_shap = |f: &dyn Fn(&efshap::dataset::CaseMatrix, &efshap::shap::ShapMatrix) -> Outcome| match &full_shap {
        Ok((c, s)) => f(c, s),
        Err(e) => Err(e.clone()),
    };

    report(1, "shap oracle equivalence", &mut shap_oracle_equivalence);
    report(2, "local accuracy", &mut || with_run(&local_accuracy));
    report(3, "closed-form leaf weights", &mut closed_form_leaves);
    report(4, "overfit interpolation", &mut overfit_interpolation);
    report(5, "planted gender effect", &mut || with_shap(&gender_effect));
    report(6, "blood-pressure signs", &mut || with_shap(&blood_pressure_signs));
    report(7, "t-SNE gradient check", &mut tsne_gradient);
    report(8, "t-SNE cluster recovery", &mut tsne_clusters);
    report(9, "shap-space vs raw-space neighbours", &mut || with_run(&shap_vs_raw));
    report(10, "ETL oracles", &mut etl_oracles);
    report(11, "pipeline determinism", &mut determinism);
    report(12, "separable tuner surface", &mut separable_tuner);

    if failed > 0 {
        println!("{failed} of 12 criteria failed");
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}
