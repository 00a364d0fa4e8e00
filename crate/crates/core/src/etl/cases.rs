//! Turning echo reports and surrounding events into cases.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseId, CaseMatrix, Category, Cell, FeatureCatalog, FeatureKind};
use crate::error::Result;
use crate::synth::EventStore;

/// How numeric (vitals, labs) events inside the window become one value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericAggregation {
    /// Measurement closest to the echo date; ties go to the earlier date.
    #[default]
    Nearest,
    Mean,
    /// Most recent measurement in the window.
    Latest,
}

/// Catalog of every code present in `store`: categories in fixed order, codes
/// sorted within a category. Demographic codes whose values are all 0/1 are
/// binary, other demographics numeric.
pub fn build_catalog(store: &EventStore) -> Result<FeatureCatalog> {
    let mut specs: Vec<(Category, String, FeatureKind)> = Vec::new();
    for (category, rows) in store.tables() {
        let codes: BTreeSet<&str> = rows.iter().map(|r| r.code.as_str()).collect();
        for code in codes {
            let kind = if category == Category::Demo {
                let binary = rows
                    .iter()
                    .filter(|r| r.code == code)
                    .filter_map(|r| r.value)
                    .all(|v| v == 0.0 || v == 1.0);
                if binary {
                    FeatureKind::Binary
                } else {
                    FeatureKind::Numeric
                }
            } else {
                category.aggregated_kind()
            };
            specs.push((category, code.to_string(), kind));
        }
    }
    FeatureCatalog::from_codes(specs.iter().map(|(c, s, k)| (*c, s.as_str(), *k)))
}

/// Echo dates that start a case: scanning in date order, a report starts a
/// new case only if it falls more than `independence_days` after the previous
/// case's report.
pub fn select_case_dates(sorted_dates: &[NaiveDate], independence_days: i64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<NaiveDate> = None;
    for (i, &d) in sorted_dates.iter().enumerate() {
        if last.is_none_or(|l| (d - l).num_days() > independence_days) {
            out.push(i);
            last = Some(d);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct WindowRules {
    pub window_days: i64,
    pub independence_days: i64,
    pub numeric: NumericAggregation,
}

struct PatientEvents {
    /// Feature id to `(date, value)` in date order, table order within a date.
    by_feature: BTreeMap<usize, Vec<(NaiveDate, Option<f64>)>>,
    echoes: Vec<(NaiveDate, f64)>,
}

fn aggregate(
    kind: FeatureKind,
    category: Category,
    events: &[(NaiveDate, Option<f64>)],
    echo: NaiveDate,
    rules: &WindowRules,
) -> Cell {
    if category == Category::Demo {
        return events.iter().find_map(|(_, v)| *v);
    }
    let in_window = events
        .iter()
        .filter(|(d, _)| (*d - echo).num_days().abs() <= rules.window_days);
    match kind {
        FeatureKind::Binary => Some(f64::from(u8::from(in_window.count() > 0))),
        FeatureKind::Count => Some(in_window.count() as f64),
        FeatureKind::Numeric => {
            let valued = in_window.filter_map(|(d, v)| v.map(|v| (*d, v)));
            match rules.numeric {
                NumericAggregation::Nearest => valued
                    .fold(None::<(i64, NaiveDate, f64)>, |best, (d, v)| {
                        let dist = (d - echo).num_days().abs();
                        match best {
                            Some((bd, bdate, _)) if (bd, bdate) <= (dist, d) => best,
                            _ => Some((dist, d, v)),
                        }
                    })
                    .map(|(_, _, v)| v),
                NumericAggregation::Latest => valued
                    .fold(None::<(NaiveDate, f64)>, |best, (d, v)| match best {
                        Some((bd, _)) if bd >= d => best,
                        _ => Some((d, v)),
                    })
                    .map(|(_, v)| v),
                NumericAggregation::Mean => {
                    let (n, sum) = valued.fold((0usize, 0.0), |(n, s), (_, v)| (n + 1, s + v));
                    (n > 0).then(|| sum / n as f64)
                }
            }
        }
    }
}

/// Builds one case per selected echo report, rows sorted by
/// `(patient_id, echo_date)`. Features without an event in the window are
/// MISSING for numeric kinds and 0 for binary and count kinds; demographics
/// are copied regardless of date. Codes absent from `catalog` are ignored.
pub fn build_cases(
    store: &EventStore,
    rules: &WindowRules,
    catalog: &FeatureCatalog,
) -> Result<CaseMatrix> {
    let lookup: HashMap<(Category, &str), usize> = catalog
        .entries()
        .iter()
        .map(|e| ((e.category, e.code()), e.feature_id))
        .collect();

    let mut patients: BTreeMap<u64, PatientEvents> = BTreeMap::new();
    for e in &store.echo_reports {
        patients
            .entry(e.patient_id)
            .or_insert_with(|| PatientEvents {
                by_feature: BTreeMap::new(),
                echoes: Vec::new(),
            })
            .echoes
            .push((e.date, e.ef_percent));
    }
    for (category, rows) in store.tables() {
        for r in rows {
            let Some(p) = patients.get_mut(&r.patient_id) else {
                continue;
            };
            if let Some(&f) = lookup.get(&(category, r.code.as_str())) {
                p.by_feature.entry(f).or_default().push((r.date, r.value));
            }
        }
    }

    let entries = catalog.entries();
    let per_patient: Vec<Vec<(CaseId, Vec<Cell>, f64)>> = patients
        .into_par_iter()
        .map(|(pid, mut p)| {
            p.echoes.sort_by_key(|e| e.0);
            for events in p.by_feature.values_mut() {
                events.sort_by_key(|e| e.0);
            }
            let dates: Vec<NaiveDate> = p.echoes.iter().map(|e| e.0).collect();
            select_case_dates(&dates, rules.independence_days)
                .into_iter()
                .map(|i| {
                    let (echo, ef) = p.echoes[i];
                    let row = entries
                        .iter()
                        .map(|e| {
                            let events = p
                                .by_feature
                                .get(&e.feature_id)
                                .map(Vec::as_slice)
                                .unwrap_or(&[]);
                            aggregate(e.kind, e.category, events, echo, rules)
                        })
                        .collect();
                    (
                        CaseId {
                            patient_id: pid,
                            echo_date: echo,
                        },
                        row,
                        ef,
                    )
                })
                .collect()
        })
        .collect();

    let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (id, row, ef) in per_patient.into_iter().flatten() {
        ids.push(id);
        rows.push(row);
        labels.push(ef);
    }
    CaseMatrix::new(catalog.clone(), rows, labels, ids)
}
