//! On-disk case directories: `catalog.json`, `cases.csv` and `manifest.json`,
//! plus an optional `splits.json`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CaseId, CaseMatrix, FeatureCatalog, SplitIndices, SplitName};
use crate::error::{Error, Result};
use crate::util;

pub const CATALOG_FILE: &str = "catalog.json";
pub const CASES_FILE: &str = "cases.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS_FILE: &str = "splits.json";

const DATE_FMT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub format_version: u32,
    pub n_cases: usize,
    pub n_features: usize,
    pub n_missing: usize,
    pub catalog_fingerprint: String,
    /// File name to SHA-256.
    pub checksums: BTreeMap<String, String>,
    /// Seed of the run that produced the cases, when known.
    pub seed: Option<u64>,
}

fn cases_csv(m: &CaseMatrix) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["patient_id".to_string(), "echo_date".to_string()];
    header.extend(m.catalog().names().map(str::to_string));
    header.push("label".into());
    w.write_record(&header).expect("in-memory csv");
    for i in 0..m.n_cases() {
        let id = m.case_ids()[i];
        let mut rec = Vec::with_capacity(m.n_features() + 3);
        rec.push(id.patient_id.to_string());
        rec.push(id.echo_date.format(DATE_FMT).to_string());
        rec.extend(
            m.row(i)
                .iter()
                .map(|c| c.map(util::fmt_f64).unwrap_or_default()),
        );
        rec.push(util::fmt_f64(m.labels()[i]));
        w.write_record(&rec).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Writes `m` into `dir` and returns the manifest that was written.
pub fn write_case_dir(m: &CaseMatrix, dir: &Path, seed: Option<u64>) -> Result<CaseManifest> {
    util::create_dir(dir)?;
    let catalog_bytes = util::to_json_bytes(m.catalog());
    let cases_bytes = cases_csv(m);
    util::write_bytes(&dir.join(CATALOG_FILE), &catalog_bytes)?;
    util::write_bytes(&dir.join(CASES_FILE), &cases_bytes)?;
    let mut checksums = BTreeMap::new();
    checksums.insert(CATALOG_FILE.to_string(), util::sha256_hex(&catalog_bytes));
    checksums.insert(CASES_FILE.to_string(), util::sha256_hex(&cases_bytes));
    let manifest = CaseManifest {
        format_version: 1,
        n_cases: m.n_cases(),
        n_features: m.n_features(),
        n_missing: m.n_missing(),
        catalog_fingerprint: m.catalog().fingerprint(),
        checksums,
        seed,
    };
    util::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn parse_cell(path: &Path, line: u64, field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: bad number `{field}`")))?;
    Ok(Some(v))
}

/// Reads a case directory written by [`write_case_dir`], verifying checksums
/// when a manifest is present.
pub fn read_case_dir(dir: &Path) -> Result<CaseMatrix> {
    let catalog_path = dir.join(CATALOG_FILE);
    let cases_path = dir.join(CASES_FILE);
    let catalog: FeatureCatalog = util::read_json(&catalog_path)?;

    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest: CaseManifest = util::read_json(&manifest_path)?;
        for (file, expected) in &manifest.checksums {
            let actual = util::sha256_file(&dir.join(file))?;
            if &actual != expected {
                return Err(Error::parse(
                    dir.join(file),
                    format!("checksum mismatch (manifest {expected}, file {actual})"),
                ));
            }
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&cases_path)
        .map_err(|e| Error::csv(&cases_path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(&cases_path, e))?.clone();
    let m = catalog.len();
    let expected: Vec<&str> = ["patient_id", "echo_date"]
        .into_iter()
        .chain(catalog.names())
        .chain(["label"])
        .collect();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(
            &cases_path,
            "header does not match catalog.json feature order",
        ));
    }

    let (mut rows, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(&cases_path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let patient_id: u64 = rec[0]
            .parse()
            .map_err(|_| Error::parse(&cases_path, format!("line {line}: bad patient_id")))?;
        let echo_date = NaiveDate::parse_from_str(&rec[1], DATE_FMT)
            .map_err(|_| Error::parse(&cases_path, format!("line {line}: bad echo_date")))?;
        let row = (0..m)
            .map(|j| parse_cell(&cases_path, line, &rec[j + 2]))
            .collect::<Result<Vec<_>>>()?;
        let label = parse_cell(&cases_path, line, &rec[m + 2])?
            .ok_or_else(|| Error::parse(&cases_path, format!("line {line}: missing label")))?;
        rows.push(row);
        labels.push(label);
        ids.push(CaseId {
            patient_id,
            echo_date,
        });
    }
    CaseMatrix::new(catalog, rows, labels, ids)
}

pub fn write_splits(dir: &Path, splits: &SplitIndices) -> Result<()> {
    util::write_json(&dir.join(SPLITS_FILE), splits)
}

pub fn read_splits(dir: &Path) -> Result<SplitIndices> {
    util::read_json(&dir.join(SPLITS_FILE))
}

/// Loads one partition of a case directory (`All` needs no `splits.json`).
pub fn load_split(dir: &Path, split: SplitName) -> Result<CaseMatrix> {
    let all = read_case_dir(dir)?;
    match split {
        SplitName::All => Ok(all),
        name => {
            let splits = read_splits(dir)?;
            let idx = splits.get(name).expect("named split");
            if let Some(&bad) = idx.iter().find(|&&i| i >= all.n_cases()) {
                return Err(Error::parse(
                    dir.join(SPLITS_FILE),
                    format!("index {bad} out of range for {} cases", all.n_cases()),
                ));
            }
            Ok(all.select(idx))
        }
    }
}
