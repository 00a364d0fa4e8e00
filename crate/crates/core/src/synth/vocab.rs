//! Code vocabulary used by the generator, and the mapping fixtures derived
//! from it. Drug and diagnosis codes are real ATC level-4 and ICD-10 codes;
//! the NDC codes and the long-tail pools are synthetic.

pub(crate) struct DxCode {
    pub icd10: &'static str,
    pub icd9: Option<&'static str>,
    pub prevalence: f64,
}

pub(crate) const DIAGNOSES: &[DxCode] = &[
    DxCode { icd10: "I25.5", icd9: Some("414.8"), prevalence: 0.18 },
    DxCode { icd10: "I42.8", icd9: Some("425.4"), prevalence: 0.08 },
    DxCode { icd10: "I42.9", icd9: Some("425.9"), prevalence: 0.12 },
    DxCode { icd10: "I10", icd9: Some("401.9"), prevalence: 0.60 },
    DxCode { icd10: "E11.9", icd9: Some("250.00"), prevalence: 0.35 },
    DxCode { icd10: "N18.3", icd9: Some("585.3"), prevalence: 0.20 },
    DxCode { icd10: "I48.91", icd9: Some("427.31"), prevalence: 0.30 },
    DxCode { icd10: "J44.9", icd9: Some("496"), prevalence: 0.18 },
    DxCode { icd10: "I50.9", icd9: Some("428.0"), prevalence: 0.50 },
];

pub(crate) struct DrugCode {
    pub atc: &'static str,
    pub ndc: &'static [&'static str],
    pub prevalence: f64,
}

pub(crate) const DRUGS: &[DrugCode] = &[
    DrugCode { atc: "C03CA", ndc: &["99001-0101-01", "99001-0101-02"], prevalence: 0.55 },
    DrugCode { atc: "C07AB", ndc: &["99001-0102-01"], prevalence: 0.50 },
    DrugCode { atc: "C07AG", ndc: &["99001-0103-01"], prevalence: 0.20 },
    DrugCode { atc: "C09AA", ndc: &["99001-0104-01", "99001-0104-05"], prevalence: 0.35 },
    DrugCode { atc: "C09CA", ndc: &["99001-0105-01"], prevalence: 0.20 },
    DrugCode { atc: "B01AC", ndc: &["99001-0106-01"], prevalence: 0.45 },
    DrugCode { atc: "C10AA", ndc: &["99001-0107-01", "99001-0107-03"], prevalence: 0.55 },
    DrugCode { atc: "C03DA", ndc: &["99001-0108-01"], prevalence: 0.25 },
    DrugCode { atc: "C01AA", ndc: &["99001-0109-01"], prevalence: 0.10 },
];

pub(crate) const ORDER_RESULTS: &[(&str, f64)] = &[
    ("MITRAL REGURGITATION", 0.35),
    ("AORTIC STENOSIS", 0.12),
    ("TRICUSPID REGURGITATION", 0.25),
    ("LEFT ATRIAL ENLARGEMENT", 0.30),
];

/// Gaussian covariate: code, mean, sd, lower clamp, upper clamp, measurement sd.
pub(crate) struct Measure {
    pub code: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub noise: f64,
}

pub(crate) const VITALS: &[Measure] = &[
    Measure { code: "BP_SYSTOLIC", mean: 128.0, sd: 18.0, lo: 70.0, hi: 220.0, noise: 4.0 },
    Measure { code: "BP_DIASTOLIC", mean: 74.0, sd: 11.0, lo: 35.0, hi: 130.0, noise: 3.0 },
    Measure { code: "BMI", mean: 29.0, sd: 6.0, lo: 15.0, hi: 60.0, noise: 0.5 },
    Measure { code: "PULSE", mean: 78.0, sd: 12.0, lo: 35.0, hi: 160.0, noise: 5.0 },
];

pub(crate) const LABS: &[Measure] = &[
    Measure { code: "CREATININE", mean: 1.3, sd: 0.4, lo: 0.3, hi: 8.0, noise: 0.1 },
    Measure { code: "SODIUM", mean: 138.0, sd: 3.5, lo: 120.0, hi: 155.0, noise: 1.0 },
    Measure { code: "HEMOGLOBIN", mean: 12.4, sd: 1.9, lo: 6.0, hi: 19.0, noise: 0.4 },
    Measure { code: "POTASSIUM", mean: 4.3, sd: 0.5, lo: 2.5, hi: 7.0, noise: 0.15 },
];

pub(crate) const AGE: Measure =
    Measure { code: "AGE", mean: 70.0, sd: 11.0, lo: 25.0, hi: 100.0, noise: 0.0 };

/// Size of each synthetic long-tail pool.
pub(crate) const TAIL_POOL: usize = 500;

/// Long-tail ICD-10-shaped diagnosis code `k`.
pub(crate) fn tail_dx(k: usize) -> String {
    format!("U{:02}.{}", k / 10 % 100, k % 10)
}

/// Long-tail ATC-shaped drug code `k`.
pub(crate) fn tail_drug(k: usize) -> String {
    let letter = (b'A' + (k / 100 % 5) as u8) as char;
    format!("X{:02}A{letter}", k % 100)
}

/// Codes absent from the fixtures, injected so normalization has something
/// to report.
pub(crate) const UNMAPPED_DX: &[&str] = &["V45.81", "799.9"];
pub(crate) const UNMAPPED_DRUG: &[&str] = &["99999-0000-00", "99999-0000-01"];

/// `(source, target)` rows of the NDC→ATC fixture. Target-system codes are
/// listed as identity rows so the table doubles as the accepted vocabulary.
pub fn ndc_to_atc_rows() -> Vec<(String, String)> {
    let mut rows = Vec::new();
    for d in DRUGS {
        rows.push((d.atc.to_string(), d.atc.to_string()));
        for ndc in d.ndc {
            rows.push((ndc.to_string(), d.atc.to_string()));
        }
    }
    for k in 0..TAIL_POOL {
        let c = tail_drug(k);
        rows.push((c.clone(), c));
    }
    rows
}

/// `(source, target)` rows of the ICD-9→ICD-10 fixture, identity rows
/// included.
pub fn icd9_to_icd10_rows() -> Vec<(String, String)> {
    let mut rows = Vec::new();
    for d in DIAGNOSES {
        rows.push((d.icd10.to_string(), d.icd10.to_string()));
        if let Some(icd9) = d.icd9 {
            rows.push((icd9.to_string(), d.icd10.to_string()));
        }
    }
    for k in 0..TAIL_POOL {
        let c = tail_dx(k);
        rows.push((c.clone(), c));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn tail_pools_are_distinct() {
        let dx: HashSet<String> = (0..TAIL_POOL).map(tail_dx).collect();
        let drugs: HashSet<String> = (0..TAIL_POOL).map(tail_drug).collect();
        assert_eq!(dx.len(), TAIL_POOL);
        assert_eq!(drugs.len(), TAIL_POOL);
    }

    #[test]
    fn fixture_rows_are_functions() {
        for rows in [ndc_to_atc_rows(), icd9_to_icd10_rows()] {
            let keys: HashSet<&String> = rows.iter().map(|r| &r.0).collect();
            assert_eq!(keys.len(), rows.len());
        }
    }
}
