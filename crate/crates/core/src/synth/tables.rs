//! Raw event tables and their CSV form.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::util;

pub const ECHO_FILE: &str = "echo.csv";
pub const RAW_MANIFEST_FILE: &str = "raw_manifest.json";
const DATE_FMT: &str = "%Y-%m-%d";

/// One row of a raw event table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub patient_id: u64,
    pub date: NaiveDate,
    pub code: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoReport {
    pub patient_id: u64,
    pub date: NaiveDate,
    pub ef_percent: f64,
}

/// The nine event tables plus echocardiogram reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStore {
    tables: BTreeMap<Category, Vec<EventRow>>,
    pub echo_reports: Vec<EchoReport>,
}

impl Default for EventStore {
    fn default() -> Self {
        EventStore {
            tables: Category::ALL.into_iter().map(|c| (c, Vec::new())).collect(),
            echo_reports: Vec::new(),
        }
    }
}

impl EventStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(&self, category: Category) -> &[EventRow] {
        &self.tables[&category]
    }

    pub fn table_mut(&mut self, category: Category) -> &mut Vec<EventRow> {
        self.tables.get_mut(&category).expect("all categories present")
    }

    pub fn tables(&self) -> impl Iterator<Item = (Category, &[EventRow])> {
        self.tables.iter().map(|(c, t)| (*c, t.as_slice()))
    }

    pub fn n_events(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }
}

pub fn table_file(category: Category) -> String {
    format!("{}.csv", category.prefix().to_ascii_lowercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawManifest {
    pub format_version: u32,
    pub row_counts: BTreeMap<String, usize>,
    pub checksums: BTreeMap<String, String>,
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn table_csv(rows: &[EventRow]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["patient_id", "date", "code", "value"])
        .expect("in-memory csv");
    for r in rows {
        w.write_record([
            r.patient_id.to_string(),
            r.date.format(DATE_FMT).to_string(),
            r.code.clone(),
            r.value.map(util::fmt_f64).unwrap_or_default(),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn echo_csv(rows: &[EchoReport]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["patient_id", "date", "ef_percent"])
        .expect("in-memory csv");
    for r in rows {
        w.write_record([
            r.patient_id.to_string(),
            r.date.format(DATE_FMT).to_string(),
            util::fmt_f64(r.ef_percent),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Writes the nine tables and `echo.csv` into `dir`, plus a manifest with
/// row counts and checksums.
pub fn write_raw_tables(store: &EventStore, dir: &Path) -> Result<RawManifest> {
    util::create_dir(dir)?;
    let mut row_counts = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    let mut emit = |name: String, bytes: Vec<u8>, rows: usize| -> Result<()> {
        util::write_bytes(&dir.join(&name), &bytes)?;
        checksums.insert(name.clone(), util::sha256_hex(&bytes));
        row_counts.insert(name, rows);
        Ok(())
    };
    for (category, rows) in store.tables() {
        emit(table_file(category), table_csv(rows), rows.len())?;
    }
    emit(
        ECHO_FILE.to_string(),
        echo_csv(&store.echo_reports),
        store.echo_reports.len(),
    )?;
    let manifest = RawManifest {
        format_version: 1,
        row_counts,
        checksums,
    };
    util::write_json(&dir.join(RAW_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let got = rdr.headers().map_err(|e| Error::csv(path, e))?;
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            path,
            format!("expected header {}", header.join(",")),
        ));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, format!("line {line}: bad {what}")))
}

fn date_field(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<NaiveDate> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    rec.get(i)
        .and_then(|s| NaiveDate::parse_from_str(s, DATE_FMT).ok())
        .ok_or_else(|| Error::parse(path, format!("line {line}: bad date")))
}

/// Reads tables written by [`write_raw_tables`].
pub fn read_raw_tables(dir: &Path) -> Result<EventStore> {
    let mut store = EventStore::new();
    for category in Category::ALL {
        let path = dir.join(table_file(category));
        let mut rdr = reader(&path, &["patient_id", "date", "code", "value"])?;
        let table = store.table_mut(category);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(&path, e))?;
            let value = match rec.get(3) {
                None | Some("") => None,
                Some(_) => Some(field::<f64>(&path, &rec, 3, "value")?),
            };
            table.push(EventRow {
                patient_id: field(&path, &rec, 0, "patient_id")?,
                date: date_field(&path, &rec, 1)?,
                code: rec.get(2).unwrap_or_default().to_string(),
                value,
            });
        }
    }
    let path = dir.join(ECHO_FILE);
    let mut rdr = reader(&path, &["patient_id", "date", "ef_percent"])?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(&path, e))?;
        store.echo_reports.push(EchoReport {
            patient_id: field(&path, &rec, 0, "patient_id")?,
            date: date_field(&path, &rec, 1)?,
            ef_percent: field(&path, &rec, 2, "ef_percent")?,
        });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_writes_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_raw_tables(&EventStore::new(), dir.path()).unwrap();
        assert_eq!(manifest.row_counts.len(), 10);
        for c in Category::ALL {
            let text = std::fs::read_to_string(dir.path().join(table_file(c))).unwrap();
            assert_eq!(text, "patient_id,date,code,value\n");
        }
        assert_eq!(read_raw_tables(dir.path()).unwrap(), EventStore::new());
    }

    #[test]
    fn single_vitals_row() {
        let mut store = EventStore::new();
        store.table_mut(Category::Vl).push(EventRow {
            patient_id: 1,
            date: NaiveDate::from_ymd_opt(2016, 2, 29).unwrap(),
            code: "BMI".into(),
            value: Some(27.25),
        });
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_raw_tables(&store, dir.path()).unwrap();
        assert_eq!(manifest.row_counts["vl.csv"], 1);
        let text = std::fs::read_to_string(dir.path().join("vl.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_raw_tables(dir.path()).unwrap(), store);
    }

    #[test]
    fn bad_header_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        write_raw_tables(&EventStore::new(), dir.path()).unwrap();
        std::fs::write(dir.path().join("lb.csv"), "pid,date,code,value\n").unwrap();
        let err = read_raw_tables(dir.path()).unwrap_err().to_string();
        assert!(err.contains("lb.csv"), "{err}");
    }
}
