//! Independent reference implementations for the ETL rules.

use std::collections::{BTreeMap, HashMap};

use chrono::{Duration, NaiveDate};
use efshap::dataset::{Category, Cell, FeatureCatalog, FeatureKind};
use efshap::etl::CodeMaps;
use efshap::synth::{EchoReport, EventRow, EventStore};
use rand::Rng;

/// Nearest-rank clipping with integer percentiles: the bound for `p` is the
/// smallest value `v` with `100 * #{x <= v} >= p * n`.
pub fn winsor_oracle(values: &[f64], lo: u32, hi: u32) -> Vec<f64> {
    let n = values.len();
    let bound = |p: u32| {
        values
            .iter()
            .copied()
            .filter(|v| 100 * values.iter().filter(|x| *x <= v).count() >= p as usize * n)
            .fold(f64::INFINITY, f64::min)
    };
    let (a, b) = (bound(lo), bound(hi));
    values.iter().map(|v| v.max(a).min(b)).collect()
}

/// Events of code-bearing categories whose code occurs more than `min`
/// times in its table, in original order.
pub fn rare_filter_oracle(store: &EventStore, min: u64) -> BTreeMap<Category, Vec<EventRow>> {
    let mut out = BTreeMap::new();
    for c in Category::ALL {
        let rows = store.table(c);
        let mut counts: HashMap<String, u64> = HashMap::new();
        for r in rows {
            *counts.entry(r.code.clone()).or_insert(0) += 1;
        }
        let kept = rows
            .iter()
            .filter(|r| !c.is_code_bearing() || counts[&r.code] > min)
            .cloned()
            .collect();
        out.insert(c, kept);
    }
    out
}

/// Per-event table lookup: mapped events get their target code, unmapped
/// drug and diagnosis events vanish.
pub fn lookup_oracle(store: &EventStore, maps: &CodeMaps) -> BTreeMap<Category, Vec<EventRow>> {
    let mut out = BTreeMap::new();
    for c in Category::ALL {
        let mut rows = Vec::new();
        for r in store.table(c) {
            let target = if c.is_drug() {
                maps.ndc_to_atc.get(&r.code).cloned()
            } else if c.is_diagnosis() {
                maps.icd9_to_icd10.get(&r.code).cloned()
            } else {
                Some(r.code.clone())
            };
            if let Some(code) = target {
                rows.push(EventRow { code, ..r.clone() });
            }
        }
        out.insert(c, rows);
    }
    out
}

/// `(patient, echo date, ef)` of every case by a single greedy pass over the
/// echo reports.
pub fn greedy_cases(echoes: &[EchoReport], independence_days: i64) -> Vec<(u64, NaiveDate, f64)> {
    let mut sorted: Vec<&EchoReport> = echoes.iter().collect();
    sorted.sort_by_key(|e| (e.patient_id, e.date));
    let mut out: Vec<(u64, NaiveDate, f64)> = Vec::new();
    for e in sorted {
        let starts = match out.last() {
            Some(&(pid, d, _)) if pid == e.patient_id => (e.date - d).num_days() > independence_days,
            _ => true,
        };
        if starts {
            out.push((e.patient_id, e.date, e.ef_percent));
        }
    }
    out
}

/// Expected cell of one feature for a case, by scanning the raw table.
pub fn cell_oracle(
    store: &EventStore,
    catalog: &FeatureCatalog,
    feature_id: usize,
    pid: u64,
    echo: NaiveDate,
    window: i64,
) -> Cell {
    let e = catalog.get(feature_id).unwrap();
    let rows: Vec<&EventRow> = store
        .table(e.category)
        .iter()
        .filter(|r| r.patient_id == pid && r.code == e.code())
        .collect();
    if e.category == Category::Demo {
        return rows.iter().find_map(|r| r.value);
    }
    let near: Vec<&&EventRow> = rows
        .iter()
        .filter(|r| (r.date - echo).num_days().abs() <= window)
        .collect();
    match e.kind {
        FeatureKind::Binary => Some(if near.is_empty() { 0.0 } else { 1.0 }),
        FeatureKind::Count => Some(near.len() as f64),
        FeatureKind::Numeric => {
            let mut valued: Vec<&&&EventRow> = near.iter().filter(|r| r.value.is_some()).collect();
            valued.sort_by_key(|r| ((r.date - echo).num_days().abs(), r.date));
            valued.first().and_then(|r| r.value)
        }
    }
}

/// Random patient timelines with close and same-day echoes, valueless
/// measurements and events on both sides of the window edges.
pub fn random_timelines<R: Rng>(rng: &mut R, n_patients: u64) -> EventStore {
    let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let day = |n: i64| d0 + Duration::days(n);
    let mut store = EventStore::new();
    for pid in 1..=n_patients {
        store.table_mut(Category::Demo).push(EventRow {
            patient_id: pid,
            date: d0,
            code: "GENDER".into(),
            value: Some(f64::from(rng.random_range(0..2u32))),
        });
        let n_echo = rng.random_range(1..=6);
        let echo_days: Vec<i64> = (0..n_echo).map(|_| rng.random_range(0..1500)).collect();
        for &d in &echo_days {
            store.echo_reports.push(EchoReport {
                patient_id: pid,
                date: day(d),
                ef_percent: f64::from(rng.random_range(10..80u32)),
            });
        }
        for _ in 0..rng.random_range(0..30) {
            let anchor = echo_days[rng.random_range(0..echo_days.len())];
            let d = day(anchor + rng.random_range(-60..=60));
            let (cat, code, value) = match rng.random_range(0..5) {
                0 => (Category::Vl, "SYS", (!rng.random_bool(0.2)).then(|| rng.random_range(90.0..180.0))),
                1 => (Category::Lb, "NA", Some(rng.random_range(130.0..150.0))),
                2 => (Category::Di, if rng.random_bool(0.5) { "I10" } else { "I50.9" }, None),
                3 => (Category::Md, "C07AB", None),
                _ => (Category::Or, "MR", None),
            };
            store.table_mut(cat).push(EventRow {
                patient_id: pid,
                date: d,
                code: code.into(),
                value,
            });
        }
    }
    store
}

/// Winsorization against [`winsor_oracle`] and for idempotence on
/// `n_vectors` random vectors.
pub fn check_winsor(seed: u64, n_vectors: usize) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for k in 0..n_vectors {
        let n = rng.random_range(1..300);
        // Small integer pool so ties are common.
        let pool = rng.random_range(2..50);
        let v: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..pool)) * rng.random_range(0.5..2.0f64).round())
            .collect();
        let lo = rng.random_range(1..50u32);
        let hi = rng.random_range(51..100u32);
        let got = efshap::etl::winsorize(&v, f64::from(lo), f64::from(hi)).map_err(|e| e.to_string())?;
        let want = winsor_oracle(&v, lo, hi);
        if got != want {
            return Err(format!("vector {k} (n={n}, p={lo}/{hi}): winsorize differs from oracle"));
        }
        let again = efshap::etl::winsorize(&got, f64::from(lo), f64::from(hi)).map_err(|e| e.to_string())?;
        if again != got {
            return Err(format!("vector {k}: winsorize is not idempotent"));
        }
    }
    Ok(())
}

/// Rare-code filtering on a synthetic cohort at several thresholds.
pub fn check_rare_filter(seed: u64) -> Result<(), String> {
    let cfg = efshap::synth::CohortConfig {
        n_patients: 300,
        seed,
        rare_code_fraction: 0.2,
        ..Default::default()
    };
    let store = efshap::synth::generate_cohort(&cfg).map_err(|e| e.to_string())?;
    for min in [0, 1, 3, 10, 50, 200] {
        let got = efshap::etl::filter_rare_codes(&store, min);
        let want = rare_filter_oracle(&store, min);
        for c in Category::ALL {
            if got.table(c) != want[&c].as_slice() {
                return Err(format!("min_count {min}: table {c} differs from counting oracle"));
            }
        }
    }
    Ok(())
}

/// `build_cases` on random timelines: case keys equal the greedy scan and
/// every cell equals a direct table scan.
pub fn check_build_cases(seed: u64, n_patients: u64) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let store = random_timelines(&mut rng, n_patients);
    let rules = efshap::etl::WindowRules {
        window_days: 45,
        independence_days: 180,
        numeric: efshap::etl::NumericAggregation::Nearest,
    };
    let catalog = efshap::etl::build_catalog(&store).map_err(|e| e.to_string())?;
    let m = efshap::etl::build_cases(&store, &rules, &catalog).map_err(|e| e.to_string())?;
    let want = greedy_cases(&store.echo_reports, 180);
    if m.n_cases() != want.len() {
        return Err(format!("{} cases, greedy scan gives {}", m.n_cases(), want.len()));
    }
    for (i, (pid, date, ef)) in want.iter().enumerate() {
        let id = m.case_ids()[i];
        if (id.patient_id, id.echo_date, m.labels()[i]) != (*pid, *date, *ef) {
            return Err(format!("case {i} is {id:?}, greedy scan gives ({pid}, {date})"));
        }
        for j in 0..catalog.len() {
            let want = cell_oracle(&store, &catalog, j, *pid, *date, 45);
            if m.row(i)[j] != want {
                return Err(format!("case {i} feature {j}: {:?} vs oracle {want:?}", m.row(i)[j]));
            }
        }
    }
    Ok(())
}
