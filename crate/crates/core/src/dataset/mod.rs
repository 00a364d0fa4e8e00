//! Core data model: feature catalog, case matrix with explicit missingness,
//! severity bands and deterministic splitting.

mod io;

pub use io::{
    load_split, read_case_dir, read_splits, write_case_dir, write_splits, CaseManifest,
    CASES_FILE, CATALOG_FILE, MANIFEST_FILE, SPLITS_FILE,
};

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// The nine raw event-table categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Demo,
    Vl,
    Lb,
    Md,
    Mf,
    Mo,
    Or,
    Pl,
    Di,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Demo,
        Category::Vl,
        Category::Lb,
        Category::Md,
        Category::Mf,
        Category::Mo,
        Category::Or,
        Category::Pl,
        Category::Di,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Category::Demo => "DEMO",
            Category::Vl => "VL",
            Category::Lb => "LB",
            Category::Md => "MD",
            Category::Mf => "MF",
            Category::Mo => "MO",
            Category::Or => "OR",
            Category::Pl => "PL",
            Category::Di => "DI",
        }
    }

    /// Categories whose events carry drug or diagnosis codes.
    pub fn is_code_bearing(self) -> bool {
        matches!(
            self,
            Category::Md | Category::Mf | Category::Mo | Category::Pl | Category::Di
        )
    }

    pub fn is_drug(self) -> bool {
        matches!(self, Category::Md | Category::Mf | Category::Mo)
    }

    pub fn is_diagnosis(self) -> bool {
        matches!(self, Category::Pl | Category::Di)
    }

    /// Feature kind produced by window aggregation for codes of this category.
    /// Demographics are decided per code from the observed values.
    pub fn aggregated_kind(self) -> FeatureKind {
        match self {
            Category::Vl | Category::Lb | Category::Demo => FeatureKind::Numeric,
            Category::Md | Category::Mf | Category::Mo => FeatureKind::Count,
            Category::Or | Category::Pl | Category::Di => FeatureKind::Binary,
        }
    }

    pub fn feature_name(self, code: &str) -> String {
        format!("{}_{}", self.prefix(), code)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.prefix().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Binary,
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub feature_id: usize,
    pub name: String,
    pub category: Category,
    pub kind: FeatureKind,
}

impl FeatureEntry {
    /// The name with its category prefix removed.
    pub fn code(&self) -> &str {
        &self.name[self.category.prefix().len() + 1..]
    }
}

/// Ordered list of features; ids are dense `0..M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct FeatureCatalog {
    entries: Vec<FeatureEntry>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    entries: Vec<FeatureEntry>,
}

impl TryFrom<CatalogRepr> for FeatureCatalog {
    type Error = Error;
    fn try_from(r: CatalogRepr) -> Result<Self> {
        FeatureCatalog::new(r.entries)
    }
}

impl From<FeatureCatalog> for CatalogRepr {
    fn from(c: FeatureCatalog) -> Self {
        CatalogRepr { entries: c.entries }
    }
}

impl FeatureCatalog {
    pub fn new(entries: Vec<FeatureEntry>) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.feature_id != i {
                return Err(Error::Contract(format!(
                    "feature ids must be dense: entry {i} has id {}",
                    e.feature_id
                )));
            }
            let own = format!("{}_", e.category.prefix());
            let Some(rest) = e.name.strip_prefix(&own) else {
                return Err(Error::Contract(format!(
                    "feature `{}` lacks its category prefix `{own}`",
                    e.name
                )));
            };
            if rest.is_empty()
                || Category::ALL
                    .iter()
                    .any(|c| rest.starts_with(&format!("{}_", c.prefix())))
            {
                return Err(Error::Contract(format!(
                    "feature `{}` must carry exactly one category prefix",
                    e.name
                )));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::Contract(format!("duplicate feature `{}`", e.name)));
            }
        }
        Ok(FeatureCatalog { entries })
    }

    /// Builds a catalog from `(category, code, kind)` triples in the given order.
    pub fn from_codes<'a>(
        specs: impl IntoIterator<Item = (Category, &'a str, FeatureKind)>,
    ) -> Result<Self> {
        let entries = specs
            .into_iter()
            .enumerate()
            .map(|(i, (category, code, kind))| FeatureEntry {
                feature_id: i,
                name: category.feature_name(code),
                category,
                kind,
            })
            .collect();
        FeatureCatalog::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn get(&self, feature_id: usize) -> Option<&FeatureEntry> {
        self.entries.get(feature_id)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// SHA-256 over the canonical JSON form; ties models and SHAP outputs to
    /// the catalog they were computed against.
    pub fn fingerprint(&self) -> String {
        util::sha256_hex(&serde_json::to_vec(self).expect("catalog serializes"))
    }
}

/// Identifies a case: one echo report of one patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseId {
    pub patient_id: u64,
    pub echo_date: NaiveDate,
}

/// A feature cell: `None` is MISSING.
pub type Cell = Option<f64>;

/// Cases by features, with EF labels in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMatrix {
    catalog: FeatureCatalog,
    rows: Vec<Vec<Cell>>,
    labels: Vec<f64>,
    case_ids: Vec<CaseId>,
}

impl CaseMatrix {
    pub fn new(
        catalog: FeatureCatalog,
        rows: Vec<Vec<Cell>>,
        labels: Vec<f64>,
        case_ids: Vec<CaseId>,
    ) -> Result<Self> {
        if rows.len() != labels.len() || rows.len() != case_ids.len() {
            return Err(Error::Contract(format!(
                "case matrix has {} rows, {} labels and {} case ids",
                rows.len(),
                labels.len(),
                case_ids.len()
            )));
        }
        let width = catalog.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Contract(format!(
                    "row {i} has {} cells, catalog has {width} features",
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|c| matches!(c, Some(v) if !v.is_finite())) {
                return Err(Error::Contract(format!("row {i}, feature {j}: non-finite value")));
            }
        }
        if let Some(i) = labels
            .iter()
            .position(|y| !y.is_finite() || !(0.0..=100.0).contains(y))
        {
            return Err(Error::Contract(format!(
                "label {} of case {i} outside [0, 100]",
                labels[i]
            )));
        }
        let mut seen = HashSet::with_capacity(case_ids.len());
        if let Some(dup) = case_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Contract(format!(
                "duplicate case id ({}, {})",
                dup.patient_id, dup.echo_date
            )));
        }
        Ok(CaseMatrix {
            catalog,
            rows,
            labels,
            case_ids,
        })
    }

    pub fn empty(catalog: FeatureCatalog) -> Self {
        CaseMatrix {
            catalog,
            rows: Vec::new(),
            labels: Vec::new(),
            case_ids: Vec::new(),
        }
    }

    pub fn catalog(&self) -> &FeatureCatalog {
        &self.catalog
    }

    pub fn n_cases(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.catalog.len()
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cell] {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn case_ids(&self) -> &[CaseId] {
        &self.case_ids
    }

    pub fn column(&self, feature_id: usize) -> Vec<Cell> {
        self.rows.iter().map(|r| r[feature_id]).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> CaseMatrix {
        CaseMatrix {
            catalog: self.catalog.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            case_ids: indices.iter().map(|&i| self.case_ids[i]).collect(),
        }
    }

    /// Applies `f` to every non-missing cell of `feature_id`.
    pub(crate) fn map_column(&mut self, feature_id: usize, f: impl Fn(f64) -> f64) {
        for row in &mut self.rows {
            if let Some(v) = row[feature_id] {
                row[feature_id] = Some(f(v));
            }
        }
    }
}

/// Heart-function bands by EF percent. Boundaries belong to the higher band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityBand {
    Severe,
    Mild,
    Slight,
    Normal,
}

impl SeverityBand {
    pub const ALL: [SeverityBand; 4] = [
        SeverityBand::Severe,
        SeverityBand::Mild,
        SeverityBand::Slight,
        SeverityBand::Normal,
    ];

    /// Half-open `[lo, hi)` range in percent; `Normal` is closed at 100.
    pub fn ef_range(self) -> (f64, f64) {
        match self {
            SeverityBand::Severe => (0.0, 35.0),
            SeverityBand::Mild => (35.0, 40.0),
            SeverityBand::Slight => (40.0, 50.0),
            SeverityBand::Normal => (50.0, 100.0),
        }
    }
}

pub fn band_of(ef: f64) -> Result<SeverityBand> {
    if !(0.0..=100.0).contains(&ef) {
        return Err(Error::Domain(format!("EF {ef} outside [0, 100]")));
    }
    Ok(if ef < 35.0 {
        SeverityBand::Severe
    } else if ef < 40.0 {
        SeverityBand::Mild
    } else if ef < 50.0 {
        SeverityBand::Slight
    } else {
        SeverityBand::Normal
    })
}

fn default_train() -> f64 {
    0.7
}
fn default_valid() -> f64 {
    0.2
}
fn default_test() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_train")]
    pub train_fraction: f64,
    #[serde(default = "default_valid")]
    pub valid_fraction: f64,
    #[serde(default = "default_test")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep all cases of a patient in the same split.
    #[serde(default)]
    pub group_by_patient: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: default_train(),
            valid_fraction: default_valid(),
            test_fraction: default_test(),
            seed: 0,
            group_by_patient: false,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, valid: f64, test: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction: train,
            valid_fraction: valid,
            test_fraction: test,
            seed,
            group_by_patient: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(format!(
                "split fractions must lie in (0, 1), got {fr:?}"
            )));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
    All,
}

impl FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "valid" | "validation" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
            SplitName::All => "all",
        })
    }
}

/// Row indices of each partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub group_by_patient: bool,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, name: SplitName) -> Option<&[usize]> {
        match name {
            SplitName::Train => Some(&self.train),
            SplitName::Valid => Some(&self.valid),
            SplitName::Test => Some(&self.test),
            SplitName::All => None,
        }
    }
}

const SPLIT_STREAM: u64 = 0x5350_4c49_54;

fn target_size(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 1e-9).floor() as usize
}

/// Assigns case indices to train/valid/test. Valid and test receive
/// `floor(n * f)` cases; the remainder goes to train.
pub fn split_indices(case_ids: &[CaseId], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let n = case_ids.len();
    if n < 3 {
        return Err(Error::Contract(format!("cannot split {n} cases (need at least 3)")));
    }
    let n_valid = target_size(n, spec.valid_fraction);
    let n_test = target_size(n, spec.test_fraction);
    let mut rng = util::stream_rng(spec.seed, SPLIT_STREAM);

    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    if spec.group_by_patient {
        let patients: BTreeSet<u64> = case_ids.iter().map(|c| c.patient_id).collect();
        let mut patients: Vec<u64> = patients.into_iter().collect();
        patients.shuffle(&mut rng);
        let mut by_patient: std::collections::HashMap<u64, Vec<usize>> = Default::default();
        for (i, c) in case_ids.iter().enumerate() {
            by_patient.entry(c.patient_id).or_default().push(i);
        }
        for p in patients {
            let idx = &by_patient[&p];
            let dest = if valid.len() < n_valid {
                &mut valid
            } else if test.len() < n_test {
                &mut test
            } else {
                &mut train
            };
            dest.extend_from_slice(idx);
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        valid.extend_from_slice(&perm[..n_valid]);
        test.extend_from_slice(&perm[n_valid..n_valid + n_test]);
        train.extend_from_slice(&perm[n_valid + n_test..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        seed: spec.seed,
        group_by_patient: spec.group_by_patient,
        train,
        valid,
        test,
    })
}

/// Splits a case matrix into (train, valid, test).
pub fn split_dataset(
    m: &CaseMatrix,
    spec: &SplitSpec,
) -> Result<(CaseMatrix, CaseMatrix, CaseMatrix)> {
    let idx = split_indices(m.case_ids(), spec)?;
    Ok((m.select(&idx.train), m.select(&idx.valid), m.select(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<CaseId> {
        (0..n)
            .map(|i| CaseId {
                patient_id: (i / 2) as u64,
                echo_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
                    + chrono::Days::new((i % 2) as u64 * 200),
            })
            .collect()
    }

    fn matrix(n: usize) -> CaseMatrix {
        let catalog =
            FeatureCatalog::from_codes([(Category::Vl, "BMI", FeatureKind::Numeric)]).unwrap();
        let rows = (0..n).map(|i| vec![Some(i as f64)]).collect();
        let labels = (0..n).map(|i| (i % 100) as f64).collect();
        CaseMatrix::new(catalog, rows, labels, ids(n)).unwrap()
    }

    #[test]
    fn bands_follow_table_with_upward_boundaries() {
        assert_eq!(band_of(60.0).unwrap(), SeverityBand::Normal);
        assert_eq!(band_of(50.0).unwrap(), SeverityBand::Normal);
        assert_eq!(band_of(40.0).unwrap(), SeverityBand::Slight);
        assert_eq!(band_of(35.0).unwrap(), SeverityBand::Mild);
        assert_eq!(band_of(34.999).unwrap(), SeverityBand::Severe);
        assert_eq!(band_of(0.0).unwrap(), SeverityBand::Severe);
        assert_eq!(band_of(100.0).unwrap(), SeverityBand::Normal);
        assert!(matches!(band_of(-0.1), Err(Error::Domain(_))));
        assert!(matches!(band_of(100.5), Err(Error::Domain(_))));
        assert!(band_of(f64::NAN).is_err());
    }

    #[test]
    fn band_ranges_contain_their_members() {
        for b in SeverityBand::ALL {
            let (lo, hi) = b.ef_range();
            assert_eq!(band_of(lo).unwrap(), b);
            if hi < 100.0 {
                assert_ne!(band_of(hi).unwrap(), b);
            }
        }
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split_dataset(&matrix(10), &SplitSpec::new(0.7, 0.2, 0.1, 1)).unwrap();
        assert_eq!((a.n_cases(), b.n_cases(), c.n_cases()), (7, 2, 1));
        let third = 1.0 / 3.0;
        let (a, b, c) =
            split_dataset(&matrix(3), &SplitSpec::new(third, third, third, 9)).unwrap();
        assert_eq!((a.n_cases(), b.n_cases(), c.n_cases()), (1, 1, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let m = matrix(50);
        let spec = SplitSpec::new(0.7, 0.2, 0.1, 42);
        let (a1, _, _) = split_dataset(&m, &spec).unwrap();
        let (a2, _, _) = split_dataset(&m, &spec).unwrap();
        assert_eq!(a1.case_ids(), a2.case_ids());
        let (a3, _, _) = split_dataset(&m, &SplitSpec::new(0.7, 0.2, 0.1, 43)).unwrap();
        assert_ne!(a1.case_ids(), a3.case_ids());
    }

    #[test]
    fn split_rejects_bad_fractions_and_tiny_inputs() {
        let m = matrix(10);
        assert!(matches!(
            split_dataset(&m, &SplitSpec::new(0.7, 0.2, 0.2, 1)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            split_dataset(&matrix(2), &SplitSpec::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn grouped_split_keeps_patients_together() {
        let m = matrix(40);
        let spec = SplitSpec {
            group_by_patient: true,
            ..SplitSpec::new(0.5, 0.25, 0.25, 3)
        };
        let idx = split_indices(m.case_ids(), &spec).unwrap();
        let pid = |v: &[usize]| -> BTreeSet<u64> {
            v.iter().map(|&i| m.case_ids()[i].patient_id).collect()
        };
        let (tr, va, te) = (pid(&idx.train), pid(&idx.valid), pid(&idx.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(idx.train.len() + idx.valid.len() + idx.test.len(), 40);
    }

    #[test]
    fn catalog_validation() {
        let ok = FeatureCatalog::from_codes([
            (Category::Demo, "GENDER", FeatureKind::Binary),
            (Category::Or, "MITRAL REGURGITATION", FeatureKind::Binary),
        ])
        .unwrap();
        assert_eq!(ok.get(1).unwrap().code(), "MITRAL REGURGITATION");
        assert_eq!(ok.index_of("DEMO_GENDER"), Some(0));

        let bad_prefix = FeatureEntry {
            feature_id: 0,
            name: "VL_BMI".into(),
            category: Category::Lb,
            kind: FeatureKind::Numeric,
        };
        assert!(FeatureCatalog::new(vec![bad_prefix]).is_err());
        assert!(FeatureCatalog::from_codes([(Category::Lb, "DI_X", FeatureKind::Numeric)]).is_err());
        let gap = FeatureEntry {
            feature_id: 1,
            name: "VL_BMI".into(),
            category: Category::Vl,
            kind: FeatureKind::Numeric,
        };
        assert!(FeatureCatalog::new(vec![gap]).is_err());
        assert!(FeatureCatalog::from_codes([
            (Category::Vl, "BMI", FeatureKind::Numeric),
            (Category::Vl, "BMI", FeatureKind::Numeric)
        ])
        .is_err());
    }

    #[test]
    fn case_matrix_rejects_invalid_cells() {
        let catalog =
            FeatureCatalog::from_codes([(Category::Vl, "BMI", FeatureKind::Numeric)]).unwrap();
        let id = ids(1);
        assert!(CaseMatrix::new(catalog.clone(), vec![vec![Some(f64::NAN)]], vec![50.0], id.clone()).is_err());
        assert!(CaseMatrix::new(catalog.clone(), vec![vec![None]], vec![101.0], id.clone()).is_err());
        assert!(CaseMatrix::new(catalog.clone(), vec![vec![None, None]], vec![50.0], id.clone()).is_err());
        let dup = vec![id[0], id[0]];
        assert!(CaseMatrix::new(catalog.clone(), vec![vec![None], vec![None]], vec![1.0, 2.0], dup).is_err());
        assert!(CaseMatrix::new(catalog, vec![vec![None]], vec![50.0], id).is_ok());
    }
}
