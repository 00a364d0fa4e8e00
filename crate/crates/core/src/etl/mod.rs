//! Raw event tables to a case matrix: code normalization, rare-code
//! filtering, windowed case construction, splitting and winsorization.

mod cases;
mod codes;
mod winsor;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cases::{build_catalog, build_cases, select_case_dates, NumericAggregation, WindowRules};
pub use codes::{
    code_counts, filter_rare_codes, normalize_codes, CodeMaps, UnmappedReport, ICD9_TO_ICD10_FILE,
    NDC_TO_ATC_FILE,
};
pub use winsor::{nearest_rank, percentile_bounds, winsorize, FeatureBounds, WinsorBounds};

use crate::dataset::{self, CaseMatrix, SplitIndices, SplitSpec};
use crate::error::{Error, Result};
use crate::synth::EventStore;
use crate::util;

pub const BOUNDS_FILE: &str = "bounds.json";
pub const UNMAPPED_FILE: &str = "unmapped.json";
pub const ETL_REPORT_FILE: &str = "etl_report.json";

fn default_version() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtlConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Codes must occur strictly more often than this to be kept.
    pub min_code_count: u64,
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    pub window_days: i64,
    pub independence_days: i64,
    pub numeric_aggregation: NumericAggregation,
    pub split: SplitSpec,
}

impl Default for EtlConfig {
    fn default() -> Self {
        EtlConfig {
            version: 1,
            min_code_count: 100,
            winsor_lo: 1.0,
            winsor_hi: 99.0,
            window_days: 45,
            independence_days: 180,
            numeric_aggregation: NumericAggregation::Nearest,
            split: SplitSpec {
                seed: 7,
                ..SplitSpec::default()
            },
        }
    }
}

impl EtlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.winsor_lo > 0.0 && self.winsor_hi < 100.0 && self.winsor_lo < self.winsor_hi) {
            return Err(Error::Config(format!(
                "winsor percentiles must satisfy 0 < lo < hi < 100, got ({}, {})",
                self.winsor_lo, self.winsor_hi
            )));
        }
        if self.window_days <= 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if self.independence_days < self.window_days {
            return Err(Error::Config(
                "independence_days must be at least window_days".into(),
            ));
        }
        self.split.validate()
    }

    pub fn window_rules(&self) -> WindowRules {
        WindowRules {
            window_days: self.window_days,
            independence_days: self.independence_days,
            numeric: self.numeric_aggregation,
        }
    }
}

/// Counts of what each ETL step kept or removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtlReport {
    pub raw_events: usize,
    pub unmapped_events: usize,
    pub rare_events_removed: usize,
    pub echo_reports: usize,
    pub n_cases: usize,
    pub n_features: usize,
    pub features_per_category: BTreeMap<String, usize>,
    pub split_sizes: BTreeMap<String, usize>,
}

pub struct EtlOutput {
    /// All cases, winsorized with bounds fit on the training rows.
    pub cases: CaseMatrix,
    pub splits: SplitIndices,
    pub bounds: WinsorBounds,
    pub unmapped: UnmappedReport,
    pub report: EtlReport,
}

pub fn run_etl(store: &EventStore, maps: &CodeMaps, config: &EtlConfig) -> Result<EtlOutput> {
    config.validate()?;
    let (normalized, unmapped) = normalize_codes(store, maps);
    let filtered = filter_rare_codes(&normalized, config.min_code_count);
    let catalog = build_catalog(&filtered)?;
    let mut cases = build_cases(&filtered, &config.window_rules(), &catalog)?;
    let splits = dataset::split_indices(cases.case_ids(), &config.split)?;
    let bounds = WinsorBounds::fit(
        &cases.select(&splits.train),
        config.winsor_lo,
        config.winsor_hi,
    )?;
    bounds.apply(&mut cases)?;

    let mut features_per_category = BTreeMap::new();
    for e in catalog.entries() {
        *features_per_category
            .entry(e.category.prefix().to_string())
            .or_default() += 1;
    }
    let report = EtlReport {
        raw_events: store.n_events(),
        unmapped_events: unmapped.total_events,
        rare_events_removed: normalized.n_events() - filtered.n_events(),
        echo_reports: store.echo_reports.len(),
        n_cases: cases.n_cases(),
        n_features: cases.n_features(),
        features_per_category,
        split_sizes: [
            ("train".to_string(), splits.train.len()),
            ("valid".to_string(), splits.valid.len()),
            ("test".to_string(), splits.test.len()),
        ]
        .into(),
    };
    log::info!(
        "etl: {} cases x {} features ({} unmapped events, {} rare events dropped)",
        report.n_cases,
        report.n_features,
        report.unmapped_events,
        report.rare_events_removed
    );
    Ok(EtlOutput {
        cases,
        splits,
        bounds,
        unmapped,
        report,
    })
}

/// Writes the case directory plus `splits.json`, `bounds.json`,
/// `unmapped.json` and `etl_report.json`.
pub fn write_etl_output(out: &EtlOutput, dir: &Path, seed: Option<u64>) -> Result<()> {
    dataset::write_case_dir(&out.cases, dir, seed)?;
    dataset::write_splits(dir, &out.splits)?;
    util::write_json(&dir.join(BOUNDS_FILE), &out.bounds)?;
    util::write_json(&dir.join(UNMAPPED_FILE), &out.unmapped)?;
    util::write_json(&dir.join(ETL_REPORT_FILE), &out.report)
}

pub fn read_bounds(dir: &Path) -> Result<WinsorBounds> {
    util::read_json(&dir.join(BOUNDS_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, CohortConfig};

    #[test]
    fn config_validation() {
        assert!(EtlConfig::default().validate().is_ok());
        let bad = EtlConfig {
            independence_days: 10,
            ..EtlConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = EtlConfig {
            winsor_lo: 99.0,
            winsor_hi: 1.0,
            ..EtlConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg: EtlConfig = serde_json::from_str(r#"{"min_code_count": 5}"#).unwrap();
        assert_eq!(cfg.window_days, 45);
        assert!(serde_json::from_str::<EtlConfig>(r#"{"window": 5}"#).is_err());
    }

    #[test]
    fn small_cohort_end_to_end() {
        let store = generate_cohort(&CohortConfig {
            n_patients: 150,
            ..CohortConfig::default()
        })
        .unwrap();
        let cfg = EtlConfig {
            min_code_count: 5,
            ..EtlConfig::default()
        };
        let out = run_etl(&store, &CodeMaps::builtin(), &cfg).unwrap();
        assert!(out.cases.n_cases() > 150);
        assert!(out.cases.catalog().index_of("DEMO_GENDER").is_some());
        assert!(out.unmapped.total_events > 0);
        let n = out.splits.train.len() + out.splits.valid.len() + out.splits.test.len();
        assert_eq!(n, out.cases.n_cases());
        for b in &out.bounds.features {
            for v in out.cases.column(b.feature_id).into_iter().flatten() {
                assert!(v >= b.min && v <= b.max);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        write_etl_output(&out, dir.path(), Some(7)).unwrap();
        assert_eq!(dataset::read_case_dir(dir.path()).unwrap(), out.cases);
        assert_eq!(read_bounds(dir.path()).unwrap(), out.bounds);
    }
}
