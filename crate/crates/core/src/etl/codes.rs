//! Code normalization (NDC→ATC, ICD-9→ICD-10) and rare-code filtering.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::synth::EventStore;
use crate::util;

pub const NDC_TO_ATC_FILE: &str = "ndc_to_atc.tsv";
pub const ICD9_TO_ICD10_FILE: &str = "icd9_to_icd10.tsv";

const BUILTIN_NDC_TO_ATC: &str = include_str!("../../fixtures/maps/ndc_to_atc.tsv");
const BUILTIN_ICD9_TO_ICD10: &str = include_str!("../../fixtures/maps/icd9_to_icd10.tsv");

/// Exact lookup tables. Codes already in the target system appear as
/// identity rows; a code missing from its table is unmapped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeMaps {
    pub ndc_to_atc: BTreeMap<String, String>,
    pub icd9_to_icd10: BTreeMap<String, String>,
}

fn parse_tsv(origin: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == "source\ttarget" => {}
        _ => return Err(Error::parse(origin, "expected header `source<TAB>target`")),
    }
    for (i, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (src, dst) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, format!("line {}: expected two columns", i + 1)))?;
        let (src, dst) = (src.trim().to_string(), dst.trim().to_string());
        if src.is_empty() || dst.is_empty() {
            return Err(Error::parse(origin, format!("line {}: empty code", i + 1)));
        }
        if let Some(prev) = map.get(&src) {
            if prev != &dst {
                return Err(Error::parse(
                    origin,
                    format!("line {}: `{src}` maps to both `{prev}` and `{dst}`", i + 1),
                ));
            }
        }
        map.insert(src, dst);
    }
    Ok(map)
}

fn render_tsv(rows: impl IntoIterator<Item = (String, String)>) -> String {
    let mut out = String::from("source\ttarget\n");
    for (s, t) in rows {
        out.push_str(&s);
        out.push('\t');
        out.push_str(&t);
        out.push('\n');
    }
    out
}

impl CodeMaps {
    /// The mapping fixtures shipped with the crate; they cover every code the
    /// synthetic generator emits except its deliberately unmapped ones.
    pub fn builtin() -> Self {
        CodeMaps {
            ndc_to_atc: parse_tsv(Path::new(NDC_TO_ATC_FILE), BUILTIN_NDC_TO_ATC)
                .expect("builtin fixture parses"),
            icd9_to_icd10: parse_tsv(Path::new(ICD9_TO_ICD10_FILE), BUILTIN_ICD9_TO_ICD10)
                .expect("builtin fixture parses"),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<BTreeMap<String, String>> {
            let path = dir.join(name);
            parse_tsv(&path, &util::read_string(&path)?)
        };
        Ok(CodeMaps {
            ndc_to_atc: load(NDC_TO_ATC_FILE)?,
            icd9_to_icd10: load(ICD9_TO_ICD10_FILE)?,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        util::create_dir(dir)?;
        let render = |m: &BTreeMap<String, String>| {
            render_tsv(m.iter().map(|(a, b)| (a.clone(), b.clone())))
        };
        util::write_bytes(&dir.join(NDC_TO_ATC_FILE), render(&self.ndc_to_atc).as_bytes())?;
        util::write_bytes(
            &dir.join(ICD9_TO_ICD10_FILE),
            render(&self.icd9_to_icd10).as_bytes(),
        )
    }

    /// Lookup for one event category; `None` for categories that are not
    /// normalized.
    pub fn table_for(&self, category: Category) -> Option<&BTreeMap<String, String>> {
        if category.is_drug() {
            Some(&self.ndc_to_atc)
        } else if category.is_diagnosis() {
            Some(&self.icd9_to_icd10)
        } else {
            None
        }
    }
}

/// Codes dropped during normalization, with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmappedReport {
    pub total_events: usize,
    pub codes: BTreeMap<Category, BTreeMap<String, usize>>,
}

/// Replaces drug codes by ATC and diagnosis codes by ICD-10; events whose code
/// has no mapping are dropped and reported.
pub fn normalize_codes(store: &EventStore, maps: &CodeMaps) -> (EventStore, UnmappedReport) {
    let mut out = store.clone();
    let mut report = UnmappedReport::default();
    for category in Category::ALL {
        let Some(table) = maps.table_for(category) else {
            continue;
        };
        let rows = std::mem::take(out.table_mut(category));
        let mut kept = Vec::with_capacity(rows.len());
        for mut row in rows {
            match table.get(&row.code) {
                Some(target) => {
                    row.code.clone_from(target);
                    kept.push(row);
                }
                None => {
                    report.total_events += 1;
                    *report
                        .codes
                        .entry(category)
                        .or_default()
                        .entry(row.code)
                        .or_default() += 1;
                }
            }
        }
        *out.table_mut(category) = kept;
    }
    (out, report)
}

/// Occurrence count of every code in the code-bearing categories.
pub fn code_counts(store: &EventStore) -> BTreeMap<(Category, String), u64> {
    let mut counts = BTreeMap::new();
    for (category, rows) in store.tables() {
        if !category.is_code_bearing() {
            continue;
        }
        for r in rows {
            *counts.entry((category, r.code.clone())).or_default() += 1;
        }
    }
    counts
}

/// Keeps, in code-bearing categories, only codes occurring strictly more
/// than `min_count` times within their category.
pub fn filter_rare_codes(store: &EventStore, min_count: u64) -> EventStore {
    let mut out = store.clone();
    for category in Category::ALL.into_iter().filter(|c| c.is_code_bearing()) {
        let rows = out.table_mut(category);
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for r in rows.iter() {
            *counts.entry(r.code.as_str()).or_default() += 1;
        }
        let keep: std::collections::HashSet<String> = counts
            .into_iter()
            .filter(|&(_, n)| n > min_count)
            .map(|(c, _)| c.to_string())
            .collect();
        rows.retain(|r| keep.contains(&r.code));
    }
    out
}
