//! Per-patient quantities the estimators consume: smoothed burden, PD fits,
//! treatment flags, and the standardized matching space.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;

use crate::burden::{
    classify_treatment, mean_dose_rates, process_stream, ArtifactReport, BinScheme, BurdenSummary, ProcessedStream,
    Summary, TransitionMatrix, WindowConfig,
};
use crate::cohort::{Cohort, PatientRecord, Standardization};
use crate::error::{Error, Result};
use crate::pkpd::{
    fit_pd_params, population_median_ed50, simulate_concentration, DrugResponse, DrugTable, FitStatus, PdFitOptions,
    PdParams,
};

/// Smooths and windows every patient's stream.
pub fn process_cohort(
    cohort: &Cohort,
    transition: &TransitionMatrix,
    artifacts: &BTreeMap<String, ArtifactReport>,
    window: &WindowConfig,
) -> Result<Vec<ProcessedStream>> {
    cohort
        .patients
        .par_iter()
        .map(|p| process_stream(&p.ea_stream, transition, artifacts.get(&p.id), window))
        .collect()
}

/// Aligned concentration and observed burden-multiplier series for PD
/// fitting.
///
/// The observed multiplier at each step is the step's EA fraction divided by
/// the mean fraction before the first dose, capped at 1. Concentrations are
/// sampled at step midpoints. Returns `None` when there is no usable
/// reference level.
pub fn pd_observations(
    patient: &PatientRecord,
    processed: &ProcessedStream,
    table: &DrugTable,
    window: &WindowConfig,
) -> Result<Option<(BTreeMap<String, Vec<f64>>, Vec<f64>)>> {
    let step_hr = window.step_min / 60.0;
    let first_dose = patient.doses.iter().map(|d| d.start_hr).fold(f64::INFINITY, f64::min);
    let pre: Vec<f64> = processed
        .steps
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as f64 + 1.0) * step_hr <= first_dose)
        .filter_map(|(_, f)| *f)
        .collect();
    let reference = match crate::stats::mean(&pre) {
        Some(m) if m > 0.0 => m,
        _ => processed.steps.iter().flatten().copied().fold(0.0, f64::max),
    };
    if !(reference > 0.0) {
        return Ok(None);
    }
    let (grid, observed): (Vec<f64>, Vec<f64>) = processed
        .steps
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.map(|f| ((i as f64 + 0.5) * step_hr, (f / reference).min(1.0))))
        .unzip();
    if grid.is_empty() {
        return Ok(None);
    }
    let conc = simulate_concentration(&patient.doses, table, &grid)?;
    Ok(Some((conc.values, observed)))
}

fn defaults_for(doses: &[crate::cohort::DoseRecord], table: &DrugTable) -> Result<PdParams> {
    let mut out = PdParams::new();
    for d in doses {
        out.insert(d.drug.clone(), DrugResponse::population_default(table.get(&d.drug)?));
    }
    Ok(out)
}

/// Fits PD parameters for one patient; patients without enough signal keep
/// population defaults flagged as unidentifiable.
pub fn fit_patient_pd(
    patient: &PatientRecord,
    processed: &ProcessedStream,
    table: &DrugTable,
    opts: &PdFitOptions,
    window: &WindowConfig,
) -> Result<PdParams> {
    if patient.doses.is_empty() {
        return Ok(PdParams::new());
    }
    let Some((conc, observed)) = pd_observations(patient, processed, table, window)? else {
        return defaults_for(&patient.doses, table);
    };
    match fit_pd_params(&conc, &observed, table, opts) {
        Ok(p) => Ok(p),
        Err(Error::InsufficientData(msg)) => {
            warn!("patient {}: {msg}; using population defaults", patient.id);
            defaults_for(&patient.doses, table)
        }
        Err(e) => Err(e),
    }
}

pub fn fit_cohort_pd(
    cohort: &Cohort,
    processed: &[ProcessedStream],
    table: &DrugTable,
    opts: &PdFitOptions,
    window: &WindowConfig,
) -> Result<Vec<PdParams>> {
    cohort
        .patients
        .par_iter()
        .zip(processed.par_iter())
        .map(|(p, s)| fit_patient_pd(p, s, table, opts, window))
        .collect()
}

/// Population median ED50 per administered drug, falling back to the drug
/// table default when no patient's fit succeeded.
pub fn population_medians(pd: &[PdParams], table: &DrugTable) -> Result<BTreeMap<String, f64>> {
    let drugs: BTreeSet<&String> = pd.iter().flat_map(|p| p.keys()).collect();
    let mut out = BTreeMap::new();
    for drug in drugs {
        let m = match population_median_ed50(pd, drug) {
            Ok(m) => m,
            Err(Error::InsufficientData(msg)) => {
                warn!("{msg}");
                table.get(drug)?.default_ed50
            }
            Err(e) => return Err(e),
        };
        out.insert(drug.clone(), m);
    }
    Ok(out)
}

pub fn burden_summaries(
    cohort: &Cohort,
    processed: &[ProcessedStream],
    medians: &BTreeMap<String, f64>,
    max_bins: &BinScheme,
    mean_bins: &BinScheme,
) -> Result<Vec<BurdenSummary>> {
    cohort
        .patients
        .iter()
        .zip(processed)
        .map(|(p, s)| {
            let rates = mean_dose_rates(&p.doses, p.eeg_hours());
            Ok(BurdenSummary {
                e_max: s.stats.e_max,
                e_mean: s.stats.e_mean,
                e_median: s.stats.e_median,
                e_max_bin: max_bins.level(s.stats.e_max),
                e_mean_bin: mean_bins.level(s.stats.e_mean),
                treated: classify_treatment(&rates, medians)?,
            })
        })
        .collect()
}

/// Index of the (burden level, treated) arm.
pub fn arm_index(level: usize, treated: bool) -> usize {
    2 * level + usize::from(treated)
}

/// Everything downstream of burden and PD, one row per analysed patient,
/// ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisInputs {
    pub ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Raw covariates in schema order.
    pub covariates: Vec<Vec<f64>>,
    pub pd: Vec<PdParams>,
    pub e_max: Vec<f64>,
    pub e_mean: Vec<f64>,
    pub treated: Vec<bool>,
    /// Poor outcome as 0/1 (real-valued after debiasing).
    pub outcome: Vec<f64>,
    pub mrs: Vec<u8>,
}

impl AnalysisInputs {
    /// Joins cohort records with their burden and PD results, dropping
    /// recordings flagged for artifact exclusion.
    pub fn assemble(
        cohort: &Cohort,
        processed: &[ProcessedStream],
        pd: &[PdParams],
        burden: &[BurdenSummary],
    ) -> Result<Self> {
        let n = cohort.len();
        if processed.len() != n || pd.len() != n || burden.len() != n {
            return Err(Error::Schema(format!(
                "cohort has {n} patients but {} burden series, {} PD fits and {} summaries",
                processed.len(),
                pd.len(),
                burden.len()
            )));
        }
        let mut rows: Vec<usize> = (0..n).filter(|&i| !processed[i].artifact_excluded).collect();
        rows.sort_by(|&a, &b| cohort.patients[a].id.cmp(&cohort.patients[b].id));
        let p = &cohort.patients;
        Ok(AnalysisInputs {
            ids: rows.iter().map(|&i| p[i].id.clone()).collect(),
            covariate_names: cohort.schema.names().map(str::to_string).collect(),
            covariates: rows.iter().map(|&i| p[i].covariates.0.clone()).collect(),
            pd: rows.iter().map(|&i| pd[i].clone()).collect(),
            e_max: rows.iter().map(|&i| burden[i].e_max).collect(),
            e_mean: rows.iter().map(|&i| burden[i].e_mean).collect(),
            treated: rows.iter().map(|&i| burden[i].treated).collect(),
            outcome: rows.iter().map(|&i| f64::from(u8::from(p[i].poor_outcome()))).collect(),
            mrs: rows.iter().map(|&i| p[i].outcome_mrs).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn burden(&self, summary: Summary) -> &[f64] {
        match summary {
            Summary::EMax => &self.e_max,
            Summary::EMean => &self.e_mean,
        }
    }

    /// Arm index of every patient for the given binning.
    pub fn arms(&self, summary: Summary, bins: &BinScheme) -> Vec<usize> {
        self.burden(summary)
            .iter()
            .zip(&self.treated)
            .map(|(&e, &t)| arm_index(bins.level(e), t))
            .collect()
    }

    /// Values of one covariate by name.
    pub fn covariate(&self, name: &str) -> Option<Vec<f64>> {
        let d = self.covariate_names.iter().position(|n| n == name)?;
        Some(self.covariates.iter().map(|r| r[d]).collect())
    }

    /// Drugs with a PD entry for at least one patient.
    pub fn pd_drugs(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.pd.iter().flat_map(|p| p.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// Covariates plus `(hill_n, ln ED50)` per drug, standardized column-wise.
    /// Patients who never received a drug carry its population default.
    pub fn match_space(&self, table: &DrugTable) -> Result<MatchSpace> {
        let drugs = self.pd_drugs();
        let mut names = self.covariate_names.clone();
        for d in &drugs {
            names.push(format!("{d}.hill_n"));
            names.push(format!("{d}.ln_ed50"));
        }
        let mut raw = Vec::with_capacity(self.len());
        for (cov, pd) in self.covariates.iter().zip(&self.pd) {
            let mut row = cov.clone();
            for d in &drugs {
                let r = match pd.get(d) {
                    Some(r) => r.clone(),
                    None => DrugResponse::population_default(table.get(d)?),
                };
                row.push(r.hill_n);
                row.push(r.ed50.ln());
            }
            raw.push(row);
        }
        MatchSpace::from_raw(names, &raw)
    }

    /// Rows selected by `keep`, in their current order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        AnalysisInputs {
            ids: keep.iter().map(|&i| self.ids[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: keep.iter().map(|&i| self.covariates[i].clone()).collect(),
            pd: keep.iter().map(|&i| self.pd[i].clone()).collect(),
            e_max: pick(&self.e_max),
            e_mean: pick(&self.e_mean),
            treated: keep.iter().map(|&i| self.treated[i]).collect(),
            outcome: pick(&self.outcome),
            mrs: keep.iter().map(|&i| self.mrs[i]).collect(),
        }
    }

    /// Patients whose fit for any drug reached each status.
    pub fn fit_status_counts(&self) -> BTreeMap<FitStatus, usize> {
        let mut out = BTreeMap::new();
        for r in self.pd.iter().flat_map(|p| p.values()) {
            *out.entry(r.status).or_insert(0) += 1;
        }
        out
    }
}

/// Standardized matching features.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSpace {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub zero_variance: Vec<bool>,
}

impl MatchSpace {
    pub fn from_raw(names: Vec<String>, raw: &[Vec<f64>]) -> Result<Self> {
        if raw.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Schema("matching row width differs from feature count".into()));
        }
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matching features must be finite".into()));
        }
        let st = Standardization::fit(raw)?;
        Ok(MatchSpace {
            names,
            rows: raw.iter().map(|r| st.apply(r)).collect(),
            zero_variance: st.zero_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
