use std::collections::BTreeSet;

use efshap::dataset::Category;
use efshap::synth::{self, CohortConfig, EventRow, EventStore, FunctionalForm, PlantedEffect};
use efshap::util;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Ordinary least squares of EF on the planted-effect regressors, one row per
/// echo. Returns `(coef, standard errors)` with the intercept first.
fn ols(cohort: &synth::GeneratedCohort) -> (DVector<f64>, DVector<f64>) {
    let echoes = &cohort.store.echo_reports;
    let k = cohort.truth.patients[0].effect_regressors.len() + 1;
    let x = DMatrix::from_fn(echoes.len(), k, |i, j| {
        if j == 0 {
            1.0
        } else {
            cohort.truth.patient(echoes[i].patient_id).unwrap().effect_regressors[j - 1]
        }
    });
    let y = DVector::from_iterator(echoes.len(), echoes.iter().map(|e| e.ef_percent));
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let beta = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (echoes.len() - k) as f64;
    let se = DVector::from_iterator(k, (0..k).map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt()));
    (beta, se)
}

#[test]
fn planted_effects_are_recovered_by_least_squares() {
    let cfg = CohortConfig {
        n_patients: 4000,
        seed: 19,
        ..CohortConfig::default()
    };
    let cohort = synth::generate_cohort_with_truth(&cfg).unwrap();
    let (beta, se) = ols(&cohort);
    assert!((beta[0] - cfg.base_ef).abs() < 3.0 * se[0], "intercept {} ± {}", beta[0], se[0]);
    for (j, e) in cfg.effects.iter().enumerate() {
        let (b, s) = (beta[j + 1], se[j + 1]);
        assert!(
            (b - e.effect_on_ef).abs() < 3.0 * s,
            "{}: estimated {b:.3} ± {s:.3}, planted {}",
            e.feature_name,
            e.effect_on_ef
        );
    }
}

#[test]
fn custom_effect_set_is_honoured() {
    let cfg = CohortConfig {
        n_patients: 3000,
        seed: 4,
        noise_sd: 4.0,
        effects: vec![
            PlantedEffect::linear("LB_SODIUM", -2.0),
            PlantedEffect {
                feature_name: "MD_C03CA".into(),
                effect_on_ef: 3.0,
                functional_form: FunctionalForm::BinaryShift,
                active_level: None,
            },
        ],
        ..CohortConfig::default()
    };
    let cohort = synth::generate_cohort_with_truth(&cfg).unwrap();
    let (beta, se) = ols(&cohort);
    assert!((beta[1] + 2.0).abs() < 3.0 * se[1], "{} ± {}", beta[1], se[1]);
    assert!((beta[2] - 3.0).abs() < 3.0 * se[2], "{} ± {}", beta[2], se[2]);
}

#[test]
fn unknown_effect_feature_is_rejected() {
    let cfg = CohortConfig {
        effects: vec![PlantedEffect::linear("VL_NOT_A_VITAL", 1.0)],
        ..CohortConfig::default()
    };
    let err = synth::generate_cohort(&cfg).unwrap_err().to_string();
    assert!(err.contains("VL_NOT_A_VITAL"), "{err}");
}

#[test]
fn tables_round_trip_through_csv() {
    let cfg = CohortConfig {
        n_patients: 150,
        ..CohortConfig::default()
    };
    let store = synth::generate_cohort(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_raw_tables(&store, dir.path()).unwrap();
    assert_eq!(manifest.row_counts.len(), Category::ALL.len() + 1);
    for c in Category::ALL {
        let file = synth::table_file(c);
        assert_eq!(manifest.row_counts[&file], store.table(c).len());
        assert_eq!(manifest.checksums[&file], util::sha256_file(&dir.path().join(&file)).unwrap());
    }
    assert_eq!(synth::read_raw_tables(dir.path()).unwrap(), store);
}

#[test]
fn empty_store_gives_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    synth::write_raw_tables(&EventStore::new(), dir.path()).unwrap();
    let mut files: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f.ends_with(".csv"))
        .collect();
    files.sort();
    assert_eq!(files.len(), 10);
    for f in files {
        let text = std::fs::read_to_string(dir.path().join(&f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
    }
}

#[test]
fn single_row_table() {
    let mut store = EventStore::new();
    store.table_mut(Category::Vl).push(EventRow {
        patient_id: 1,
        date: chrono::NaiveDate::from_ymd_opt(2017, 3, 1).unwrap(),
        code: "PULSE".into(),
        value: Some(72.0),
    });
    let dir = tempfile::tempdir().unwrap();
    synth::write_raw_tables(&store, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(synth::table_file(Category::Vl))).unwrap();
    assert_eq!(text, "patient_id,date,code,value\n1,2017-03-01,PULSE,72\n");
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let cfg = CohortConfig {
        n_patients: 200,
        ..CohortConfig::default()
    };
    let one = util::with_threads(Some(1), || synth::generate_cohort(&cfg).unwrap()).unwrap();
    let four = util::with_threads(Some(4), || synth::generate_cohort(&cfg).unwrap()).unwrap();
    assert_eq!(one, four);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_events_respect_config(seed in any::<u64>(), n in 1usize..40) {
        let cfg = CohortConfig { n_patients: n, seed, ..CohortConfig::default() };
        let store = synth::generate_cohort(&cfg).unwrap();
        let with_echo: BTreeSet<u64> = store.echo_reports.iter().map(|e| e.patient_id).collect();
        prop_assert_eq!(with_echo, (1..=n as u64).collect::<BTreeSet<_>>());
        for e in &store.echo_reports {
            prop_assert!(cfg.date_range.contains(e.date));
            prop_assert!((5.0..=85.0).contains(&e.ef_percent));
        }
        for (c, rows) in store.tables() {
            for r in rows {
                prop_assert!(cfg.date_range.contains(r.date), "{c} {}", r.date);
                prop_assert!((1..=n as u64).contains(&r.patient_id));
                if c.is_code_bearing() {
                    prop_assert!(r.value.is_none());
                }
            }
        }
    }
}
