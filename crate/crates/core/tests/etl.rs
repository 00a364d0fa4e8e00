mod common;

use common::oracles::{self, greedy_cases, lookup_oracle};
use efshap::dataset::{Category, FeatureKind, SplitName};
use efshap::etl::{self, CodeMaps, EtlConfig};
use efshap::synth::{self, CohortConfig};
use proptest::prelude::*;

#[test]
fn winsorize_matches_nearest_rank_oracle() {
    oracles::check_winsor(11, 1000).unwrap();
}

#[test]
fn rare_filter_matches_counting_oracle() {
    oracles::check_rare_filter(5).unwrap();
}

#[test]
fn build_cases_matches_scan_oracles() {
    oracles::check_build_cases(21, 200).unwrap();
}

#[test]
fn normalization_matches_lookup_oracle() {
    let store = synth::generate_cohort(&CohortConfig {
        n_patients: 200,
        ..CohortConfig::default()
    })
    .unwrap();
    let full = CodeMaps::builtin();
    // Drop every third row of each table.
    let partial = CodeMaps {
        ndc_to_atc: full.ndc_to_atc.iter().step_by(3).map(|(a, b)| (a.clone(), b.clone())).collect(),
        icd9_to_icd10: full.icd9_to_icd10.iter().step_by(3).map(|(a, b)| (a.clone(), b.clone())).collect(),
    };
    for maps in [full, partial, CodeMaps::default()] {
        let (got, report) = etl::normalize_codes(&store, &maps);
        let want = lookup_oracle(&store, &maps);
        let mut dropped = 0;
        for c in Category::ALL {
            assert_eq!(got.table(c), want[&c].as_slice(), "{c}");
            dropped += store.table(c).len() - want[&c].len();
        }
        assert_eq!(report.total_events, dropped);
    }
}

#[test]
fn end_to_end_case_count_and_leakage_free_bounds() {
    let store = synth::generate_cohort(&CohortConfig {
        n_patients: 500,
        ..CohortConfig::default()
    })
    .unwrap();
    let config = EtlConfig {
        min_code_count: 30,
        ..EtlConfig::default()
    };
    let out = etl::run_etl(&store, &CodeMaps::builtin(), &config).unwrap();
    let want = greedy_cases(&store.echo_reports, config.independence_days);
    assert_eq!(out.cases.n_cases(), want.len());
    assert_eq!(out.report.n_cases, want.len());
    let sizes: usize = out.splits.train.len() + out.splits.valid.len() + out.splits.test.len();
    assert_eq!(sizes, want.len());

    // Train rows already sit inside their bounds; held-out rows are clipped
    // to the same bounds.
    for b in &out.bounds.features {
        for (i, row) in out.cases.rows().iter().enumerate() {
            if let Some(v) = row[b.feature_id] {
                assert!(v >= b.min && v <= b.max, "case {i} {}", b.name);
            }
        }
    }
    let numeric: Vec<usize> = out
        .cases
        .catalog()
        .entries()
        .iter()
        .filter(|e| e.kind == FeatureKind::Numeric)
        .map(|e| e.feature_id)
        .collect();
    let bounded: Vec<usize> = out.bounds.features.iter().map(|b| b.feature_id).collect();
    assert_eq!(bounded, numeric);

    let dir = tempfile::tempdir().unwrap();
    etl::write_etl_output(&out, dir.path(), Some(1)).unwrap();
    assert_eq!(etl::read_bounds(dir.path()).unwrap(), out.bounds);
    let test = efshap::dataset::load_split(dir.path(), SplitName::Test).unwrap();
    assert_eq!(test.n_cases(), out.splits.test.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selected_echoes_are_independent(days in prop::collection::vec(0i64..2000, 1..20),
                                       indep in 1i64..400) {
        let base = chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let mut dates: Vec<_> = days.iter().map(|d| base + chrono::Duration::days(*d)).collect();
        dates.sort();
        let picked = etl::select_case_dates(&dates, indep);
        prop_assert_eq!(picked.first().copied(), Some(0));
        for w in picked.windows(2) {
            prop_assert!((dates[w[1]] - dates[w[0]]).num_days() > indep);
        }
        // Each skipped echo is within `indep` days of the last picked one before it.
        for i in 0..dates.len() {
            if !picked.contains(&i) {
                let prev = picked.iter().rev().find(|&&p| p < i).copied().unwrap();
                prop_assert!((dates[i] - dates[prev]).num_days() <= indep);
            }
        }
    }

    #[test]
    fn rare_filter_never_increases_counts(seed in 0u64..1000, min in 0u64..40) {
        let store = synth::generate_cohort(&CohortConfig { n_patients: 40, seed, ..CohortConfig::default() }).unwrap();
        let before = etl::code_counts(&store);
        let after = etl::code_counts(&etl::filter_rare_codes(&store, min));
        for (k, n) in &after {
            prop_assert!(*n > min);
            prop_assert_eq!(Some(n), before.get(k));
        }
    }
}
