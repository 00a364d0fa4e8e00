//! Synthetic heart-failure cohort with planted effects on ejection fraction.
//!
//! Every patient gets latent covariates (gender, age, vitals, labs, diagnosis,
//! drug and order-result flags). Echo reports draw EF from a linear model of
//! those covariates plus Gaussian noise; the event tables record noisy
//! measurements and codes around each echo and at random background dates.
//! Each patient's stream is seeded from `(seed, patient_id)`, so output does
//! not depend on thread count.

mod tables;
pub mod vocab;

pub use tables::{
    read_raw_tables, table_file, write_raw_tables, EchoReport, EventRow, EventStore, RawManifest,
    ECHO_FILE, RAW_MANIFEST_FILE,
};

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::util;
use vocab::{Measure, AGE, DIAGNOSES, DRUGS, LABS, ORDER_RESULTS, VITALS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalForm {
    /// `effect` per standard deviation of a continuous covariate, or per unit
    /// of a 0/1 covariate.
    Linear,
    /// `effect` added when the covariate equals `active_level` (default 1).
    BinaryShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedEffect {
    pub feature_name: String,
    pub effect_on_ef: f64,
    pub functional_form: FunctionalForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_level: Option<f64>,
}

impl PlantedEffect {
    pub fn linear(name: &str, effect: f64) -> Self {
        PlantedEffect {
            feature_name: name.into(),
            effect_on_ef: effect,
            functional_form: FunctionalForm::Linear,
            active_level: None,
        }
    }

    pub fn shift(name: &str, effect: f64, level: Option<f64>) -> Self {
        PlantedEffect {
            feature_name: name.into(),
            effect_on_ef: effect,
            functional_form: FunctionalForm::BinaryShift,
            active_level: level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    fn n_days(&self) -> u64 {
        (self.end - self.start).num_days() as u64
    }
}

/// Female patients are coded 0 and male patients 1 in `DEMO_GENDER`.
pub const FEMALE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub version: u32,
    pub n_patients: usize,
    pub date_range: DateRange,
    #[serde(alias = "effect_spec")]
    pub effects: Vec<PlantedEffect>,
    /// Background events per patient per year, by category.
    pub event_rates: BTreeMap<Category, f64>,
    /// Probability that a vitals or lab measurement has no recorded value.
    pub missing_rate: f64,
    pub seed: u64,
    pub base_ef: f64,
    pub noise_sd: f64,
    /// Mean of the Poisson number of echo reports beyond the first.
    pub extra_echoes_mean: f64,
    /// Fraction of emitted drug/diagnosis codes drawn from the long-tail pool.
    pub rare_code_fraction: f64,
    /// Fraction of vitals/lab values replaced by implausible outliers.
    pub outlier_rate: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let event_rates = [
            (Category::Vl, 2.0),
            (Category::Lb, 1.5),
            (Category::Md, 1.0),
            (Category::Mf, 1.0),
            (Category::Mo, 1.0),
            (Category::Or, 0.3),
            (Category::Pl, 0.5),
            (Category::Di, 1.0),
        ]
        .into_iter()
        .collect();
        CohortConfig {
            version: 1,
            n_patients: 6000,
            date_range: DateRange {
                start: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
                end: NaiveDate::from_ymd_opt(2019, 12, 31).expect("valid date"),
            },
            effects: default_effects(),
            event_rates,
            missing_rate: 0.05,
            seed: 7,
            base_ef: 55.0,
            noise_sd: 8.0,
            extra_echoes_mean: 1.5,
            rare_code_fraction: 0.05,
            outlier_rate: 0.01,
        }
    }
}

/// Default planted effects. Only the gender shift has a magnitude taken from
/// the literature; the rest are chosen for sign recovery.
pub fn default_effects() -> Vec<PlantedEffect> {
    vec![
        PlantedEffect::shift("DEMO_GENDER", 5.0, Some(FEMALE)),
        PlantedEffect::linear("VL_BP_SYSTOLIC", 3.0),
        PlantedEffect::linear("VL_BP_DIASTOLIC", -3.0),
        PlantedEffect::shift("DI_I25.5", -6.0, None),
        PlantedEffect::shift("DI_I42.8", -5.0, None),
        PlantedEffect::shift("DI_I42.9", -5.0, None),
        PlantedEffect::shift("OR_MITRAL REGURGITATION", -4.0, None),
    ]
}

#[derive(Debug, Clone, Copy)]
enum CovKind {
    Gaussian { mean: f64, sd: f64 },
    Binary,
}

/// Latent covariate layout: gender, age, vitals, labs, diagnoses, drugs,
/// order results.
struct Layout;

impl Layout {
    const GENDER: usize = 0;
    const AGE: usize = 1;
    const VITALS: usize = 2;
    const LABS: usize = Self::VITALS + VITALS.len();
    const DX: usize = Self::LABS + LABS.len();
    const DRUGS: usize = Self::DX + DIAGNOSES.len();
    const ORDERS: usize = Self::DRUGS + DRUGS.len();
    const LEN: usize = Self::ORDERS + ORDER_RESULTS.len();

    fn names() -> Vec<String> {
        let mut names = vec!["DEMO_GENDER".to_string(), "DEMO_AGE".to_string()];
        names.extend(VITALS.iter().map(|m| Category::Vl.feature_name(m.code)));
        names.extend(LABS.iter().map(|m| Category::Lb.feature_name(m.code)));
        names.extend(DIAGNOSES.iter().map(|d| Category::Di.feature_name(d.icd10)));
        names.extend(DRUGS.iter().map(|d| Category::Md.feature_name(d.atc)));
        names.extend(ORDER_RESULTS.iter().map(|(o, _)| Category::Or.feature_name(o)));
        names
    }

    fn kind(i: usize) -> CovKind {
        let g = |m: &Measure| CovKind::Gaussian {
            mean: m.mean,
            sd: m.sd,
        };
        match i {
            Self::GENDER => CovKind::Binary,
            Self::AGE => g(&AGE),
            i if i < Self::LABS => g(&VITALS[i - Self::VITALS]),
            i if i < Self::DX => g(&LABS[i - Self::LABS]),
            _ => CovKind::Binary,
        }
    }

    /// Resolves a feature name to its latent covariate. Diagnosis features of
    /// the problem list and drug features of any drug table share the latent
    /// flag.
    fn resolve(name: &str) -> Option<usize> {
        let (prefix, code) = name.split_once('_')?;
        let category: Category = prefix.parse().ok()?;
        match category {
            Category::Demo => match code {
                "GENDER" => Some(Self::GENDER),
                "AGE" => Some(Self::AGE),
                _ => None,
            },
            Category::Vl => VITALS.iter().position(|m| m.code == code).map(|i| Self::VITALS + i),
            Category::Lb => LABS.iter().position(|m| m.code == code).map(|i| Self::LABS + i),
            Category::Di | Category::Pl => {
                DIAGNOSES.iter().position(|d| d.icd10 == code).map(|i| Self::DX + i)
            }
            Category::Md | Category::Mf | Category::Mo => {
                DRUGS.iter().position(|d| d.atc == code).map(|i| Self::DRUGS + i)
            }
            Category::Or => ORDER_RESULTS
                .iter()
                .position(|(o, _)| *o == code)
                .map(|i| Self::ORDERS + i),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ResolvedEffect {
    covariate: usize,
    effect: f64,
    form: FunctionalForm,
    level: f64,
    kind: CovKind,
}

impl ResolvedEffect {
    fn regressor(&self, x: f64) -> f64 {
        match (self.form, self.kind) {
            (FunctionalForm::Linear, CovKind::Gaussian { mean, sd }) => (x - mean) / sd,
            (FunctionalForm::Linear, CovKind::Binary) => x,
            (FunctionalForm::BinaryShift, _) => f64::from(u8::from(x == self.level)),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported cohort config version {}", self.version)));
        }
        if self.date_range.end < self.date_range.start {
            return Err(Error::Config("date_range.end precedes date_range.start".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        for (name, v) in [
            ("rare_code_fraction", self.rare_code_fraction),
            ("outlier_rate", self.outlier_rate),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1)")));
            }
        }
        for (c, r) in &self.event_rates {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(Error::Config(format!("event rate for {c} must be >= 0, got {r}")));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !(self.extra_echoes_mean.is_finite() && self.extra_echoes_mean >= 0.0) {
            return Err(Error::Config("extra_echoes_mean must be >= 0".into()));
        }
        if !self.base_ef.is_finite() {
            return Err(Error::Config("base_ef must be finite".into()));
        }
        self.resolve_effects().map(|_| ())
    }

    fn resolve_effects(&self) -> Result<Vec<ResolvedEffect>> {
        self.effects
            .iter()
            .map(|e| {
                let covariate = Layout::resolve(&e.feature_name).ok_or_else(|| {
                    Error::Config(format!(
                        "planted effect on `{}`: feature is not generated by the cohort",
                        e.feature_name
                    ))
                })?;
                let kind = Layout::kind(covariate);
                if e.functional_form == FunctionalForm::BinaryShift
                    && matches!(kind, CovKind::Gaussian { .. })
                {
                    return Err(Error::Config(format!(
                        "binary_shift on continuous feature `{}`",
                        e.feature_name
                    )));
                }
                if !e.effect_on_ef.is_finite() {
                    return Err(Error::Config(format!("non-finite effect on `{}`", e.feature_name)));
                }
                Ok(ResolvedEffect {
                    covariate,
                    effect: e.effect_on_ef,
                    form: e.functional_form,
                    level: e.active_level.unwrap_or(1.0),
                    kind,
                })
            })
            .collect()
    }
}

/// Ground truth for one patient: latent covariates in [`CohortTruth::covariate_names`]
/// order, and the regressor value of each planted effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: u64,
    pub covariates: Vec<f64>,
    pub effect_regressors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    pub covariate_names: Vec<String>,
    pub patients: Vec<PatientTruth>,
}

impl CohortTruth {
    pub fn patient(&self, patient_id: u64) -> Option<&PatientTruth> {
        // patient ids are 1-based and dense
        self.patients
            .get(patient_id.checked_sub(1)? as usize)
            .filter(|p| p.patient_id == patient_id)
    }

    pub fn covariate(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCohort {
    pub store: EventStore,
    pub truth: CohortTruth,
}

/// Generates the event store only.
pub fn generate_cohort(config: &CohortConfig) -> Result<EventStore> {
    Ok(generate_cohort_with_truth(config)?.store)
}

/// Generates the event store together with each patient's latent covariates.
pub fn generate_cohort_with_truth(config: &CohortConfig) -> Result<GeneratedCohort> {
    config.validate()?;
    let effects = config.resolve_effects()?;
    let patients: Vec<PatientOutput> = (1..=config.n_patients as u64)
        .into_par_iter()
        .map(|pid| generate_patient(config, &effects, pid))
        .collect();

    let mut store = EventStore::new();
    let mut truth = Vec::with_capacity(patients.len());
    for p in patients {
        for (category, row) in p.events {
            store.table_mut(category).push(row);
        }
        store.echo_reports.extend(p.echoes);
        truth.push(p.truth);
    }
    Ok(GeneratedCohort {
        store,
        truth: CohortTruth {
            covariate_names: Layout::names(),
            patients: truth,
        },
    })
}

struct PatientOutput {
    events: Vec<(Category, EventRow)>,
    echoes: Vec<EchoReport>,
    truth: PatientTruth,
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

struct PatientGen<'a> {
    cfg: &'a CohortConfig,
    rng: ChaCha8Rng,
    pid: u64,
    events: Vec<(Category, EventRow)>,
}

impl PatientGen<'_> {
    fn push(&mut self, category: Category, date: NaiveDate, code: String, value: Option<f64>) {
        if self.cfg.date_range.contains(date) {
            self.events.push((
                category,
                EventRow {
                    patient_id: self.pid,
                    date,
                    code,
                    value,
                },
            ));
        }
    }

    fn offset(&mut self, around: NaiveDate, max_days: i64) -> NaiveDate {
        let off = self.rng.random_range(-max_days..=max_days);
        around + chrono::Duration::days(off)
    }

    fn uniform_date(&mut self) -> NaiveDate {
        let n = self.cfg.date_range.n_days();
        self.cfg.date_range.start + Days::new(self.rng.random_range(0..=n))
    }

    fn measurement(&mut self, latent: f64, m: &Measure) -> Option<f64> {
        if self.rng.random_bool(self.cfg.missing_rate) {
            return None;
        }
        let mut v = normal(&mut self.rng, latent, m.noise);
        if self.rng.random_bool(self.cfg.outlier_rate) {
            v *= if self.rng.random_bool(0.5) { 3.0 } else { 0.25 };
        }
        Some(round1(v))
    }

    fn dx_code(&mut self, i: usize) -> String {
        if self.rng.random_bool(self.cfg.rare_code_fraction) {
            return vocab::tail_dx(self.rng.random_range(0..vocab::TAIL_POOL));
        }
        if self.rng.random_bool(0.005) {
            let k = self.rng.random_range(0..vocab::UNMAPPED_DX.len());
            return vocab::UNMAPPED_DX[k].to_string();
        }
        match DIAGNOSES[i].icd9 {
            Some(icd9) if self.rng.random_bool(0.3) => icd9.to_string(),
            _ => DIAGNOSES[i].icd10.to_string(),
        }
    }

    fn drug_code(&mut self, i: usize) -> String {
        if self.rng.random_bool(self.cfg.rare_code_fraction) {
            return vocab::tail_drug(self.rng.random_range(0..vocab::TAIL_POOL));
        }
        if self.rng.random_bool(0.005) {
            let k = self.rng.random_range(0..vocab::UNMAPPED_DRUG.len());
            return vocab::UNMAPPED_DRUG[k].to_string();
        }
        let ndc = DRUGS[i].ndc;
        if !ndc.is_empty() && self.rng.random_bool(0.4) {
            ndc[self.rng.random_range(0..ndc.len())].to_string()
        } else {
            DRUGS[i].atc.to_string()
        }
    }

    fn vitals_visit(&mut self, date: NaiveDate, latent: &[f64]) {
        for (i, m) in VITALS.iter().enumerate() {
            let v = self.measurement(latent[Layout::VITALS + i], m);
            self.push(Category::Vl, date, m.code.to_string(), v);
        }
    }

    fn labs_visit(&mut self, date: NaiveDate, latent: &[f64]) {
        for (i, m) in LABS.iter().enumerate() {
            let v = self.measurement(latent[Layout::LABS + i], m);
            self.push(Category::Lb, date, m.code.to_string(), v);
        }
    }
}

fn flagged(latent: &[f64], start: usize, len: usize) -> Vec<usize> {
    (0..len).filter(|&i| latent[start + i] == 1.0).collect()
}

fn generate_patient(cfg: &CohortConfig, effects: &[ResolvedEffect], pid: u64) -> PatientOutput {
    let mut g = PatientGen {
        cfg,
        rng: util::stream_rng(cfg.seed, pid),
        pid,
        events: Vec::new(),
    };

    let mut latent = vec![0.0; Layout::LEN];
    latent[Layout::GENDER] = if g.rng.random_bool(0.55) { 1.0 } else { FEMALE };
    latent[Layout::AGE] = normal(&mut g.rng, AGE.mean, AGE.sd).clamp(AGE.lo, AGE.hi).round();
    for (i, m) in VITALS.iter().enumerate() {
        latent[Layout::VITALS + i] = normal(&mut g.rng, m.mean, m.sd).clamp(m.lo, m.hi);
    }
    for (i, m) in LABS.iter().enumerate() {
        latent[Layout::LABS + i] = normal(&mut g.rng, m.mean, m.sd).clamp(m.lo, m.hi);
    }
    for (i, d) in DIAGNOSES.iter().enumerate() {
        latent[Layout::DX + i] = f64::from(u8::from(g.rng.random_bool(d.prevalence)));
    }
    for (i, d) in DRUGS.iter().enumerate() {
        latent[Layout::DRUGS + i] = f64::from(u8::from(g.rng.random_bool(d.prevalence)));
    }
    for (i, (_, p)) in ORDER_RESULTS.iter().enumerate() {
        latent[Layout::ORDERS + i] = f64::from(u8::from(g.rng.random_bool(*p)));
    }

    let regressors: Vec<f64> = effects
        .iter()
        .map(|e| e.regressor(latent[e.covariate]))
        .collect();
    let mean_ef = cfg.base_ef
        + effects
            .iter()
            .zip(&regressors)
            .map(|(e, r)| e.effect * r)
            .sum::<f64>();

    let start = cfg.date_range.start;
    g.push(Category::Demo, start, "GENDER".into(), Some(latent[Layout::GENDER]));
    g.push(Category::Demo, start, "AGE".into(), Some(latent[Layout::AGE]));

    let n_echo = 1 + poisson(&mut g.rng, cfg.extra_echoes_mean);
    let mut echo_dates: Vec<NaiveDate> = (0..n_echo).map(|_| g.uniform_date()).collect();
    echo_dates.sort();

    let dx = flagged(&latent, Layout::DX, DIAGNOSES.len());
    let drugs = flagged(&latent, Layout::DRUGS, DRUGS.len());
    let orders = flagged(&latent, Layout::ORDERS, ORDER_RESULTS.len());

    let mut echoes = Vec::with_capacity(n_echo);
    for &echo in &echo_dates {
        let ef = (mean_ef + normal(&mut g.rng, 0.0, cfg.noise_sd)).clamp(5.0, 85.0);
        echoes.push(EchoReport {
            patient_id: pid,
            date: echo,
            ef_percent: ef,
        });

        for _ in 0..g.rng.random_range(1..=3) {
            let d = g.offset(echo, 40);
            g.vitals_visit(d, &latent);
        }
        for _ in 0..g.rng.random_range(1..=2) {
            let d = g.offset(echo, 40);
            g.labs_visit(d, &latent);
        }
        for &i in &dx {
            if g.rng.random_bool(0.9) {
                let (d, code) = (g.offset(echo, 30), g.dx_code(i));
                g.push(Category::Di, d, code, None);
            }
            if g.rng.random_bool(0.5) {
                let (d, code) = (g.offset(echo, 30), g.dx_code(i));
                g.push(Category::Pl, d, code, None);
            }
        }
        for &i in &drugs {
            for (category, mean) in [(Category::Md, 1.5), (Category::Mf, 1.0), (Category::Mo, 0.7)] {
                for _ in 0..poisson(&mut g.rng, mean) {
                    let (d, code) = (g.offset(echo, 45), g.drug_code(i));
                    g.push(category, d, code, None);
                }
            }
        }
        for &i in &orders {
            if g.rng.random_bool(0.85) {
                let d = g.offset(echo, 20);
                g.push(Category::Or, d, ORDER_RESULTS[i].0.to_string(), None);
            }
        }
    }

    let years = cfg.date_range.n_days() as f64 / 365.25;
    for (&category, &rate) in &cfg.event_rates {
        for _ in 0..poisson(&mut g.rng, rate * years) {
            let d = g.uniform_date();
            match category {
                Category::Vl => {
                    let i = g.rng.random_range(0..VITALS.len());
                    let v = g.measurement(latent[Layout::VITALS + i], &VITALS[i]);
                    g.push(category, d, VITALS[i].code.into(), v);
                }
                Category::Lb => {
                    let i = g.rng.random_range(0..LABS.len());
                    let v = g.measurement(latent[Layout::LABS + i], &LABS[i]);
                    g.push(category, d, LABS[i].code.into(), v);
                }
                Category::Di | Category::Pl if !dx.is_empty() => {
                    let i = dx[g.rng.random_range(0..dx.len())];
                    let code = g.dx_code(i);
                    g.push(category, d, code, None);
                }
                Category::Md | Category::Mf | Category::Mo if !drugs.is_empty() => {
                    let i = drugs[g.rng.random_range(0..drugs.len())];
                    let code = g.drug_code(i);
                    g.push(category, d, code, None);
                }
                Category::Or if !orders.is_empty() => {
                    let i = orders[g.rng.random_range(0..orders.len())];
                    g.push(category, d, ORDER_RESULTS[i].0.into(), None);
                }
                _ => {}
            }
        }
    }

    PatientOutput {
        events: g.events,
        echoes,
        truth: PatientTruth {
            patient_id: pid,
            covariates: latent,
            effect_regressors: regressors,
        },
    }
}
