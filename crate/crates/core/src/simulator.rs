//! Synthetic ICU cohorts with a closed feedback loop between EA and drug
//! dosing, plus exact counterfactual ground truth.
//!
//! Every mechanism here is invented for verification purposes; none of it
//! is estimated from clinical data. Per patient:
//!
//! * covariates are drawn from fixed marginals and combined linearly into a
//!   latent severity score;
//! * a baseline EA rate follows a logistic AR(1) process at 10-minute steps,
//!   its level driven by severity;
//! * an attentive physician (attentiveness rising with severity) doses an
//!   anti-seizure drug whenever the trailing-hour EA fraction exceeds a
//!   threshold, and the patient's own Hill response suppresses EA;
//! * 2-second EA segments are drawn by thinning: the untreated count per step
//!   is binomial in the baseline rate and the treated count keeps each EA
//!   segment with probability `Z_t`, so both worlds share random numbers;
//! * the poor-outcome probability is logistic in severity, treatment and a
//!   step function of the EA burden.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use bitvec::vec::BitVec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisInputs;
use crate::burden::{classify_treatment, fit_transition_matrix, mean_dose_rates, BinScheme, BurdenStats, EaProbabilityStream, Summary, TransitionMatrix};
use crate::cohort::{
    write_cohort, Cohort, CovariateSchema, CovariateVector, DoseRecord, Exclusion, ExclusionReason, LoadedCohort,
    PatientRecord, MIN_EEG_HOURS,
};
use crate::error::{Error, Result};
use crate::pkpd::{hill_suppression, simulate_concentration, DrugResponse, DrugTable, FitStatus, PdParams};
use crate::stats::{self, logistic, task_rng};

/// Dynamics time step.
pub const STEP_MINUTES: f64 = 10.0;
pub const SEGMENTS_PER_STEP: usize = 300;
const STEPS_PER_HOUR: f64 = 6.0;

/// Names and kinds of the simulated covariates, in schema order.
pub const COVARIATES: [(&str, &str); 7] = [
    ("age", "continuous"),
    ("male", "binary"),
    ("apache_ii", "continuous"),
    ("gcs_worst", "continuous"),
    ("hx_epilepsy", "binary"),
    ("dx_hie", "binary"),
    ("dx_abi", "binary"),
];

pub fn covariate_schema() -> CovariateSchema {
    let entries: Vec<String> = COVARIATES.iter().map(|(n, k)| format!("{n}:{k}")).collect();
    CovariateSchema::parse(&entries).expect("built-in schema is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateModel {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    pub male_prob: f64,
    pub apache_mean: f64,
    pub apache_sd: f64,
    pub gcs_mean: f64,
    pub gcs_sd: f64,
    pub hx_epilepsy_prob: f64,
    pub dx_hie_prob: f64,
    pub dx_abi_prob: f64,
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel {
            age_mean: 61.0,
            age_sd: 16.0,
            age_min: 18.0,
            age_max: 98.0,
            male_prob: 0.48,
            apache_mean: 18.0,
            apache_sd: 7.0,
            gcs_mean: 9.0,
            gcs_sd: 3.5,
            hx_epilepsy_prob: 0.2,
            dx_hie_prob: 0.2,
            dx_abi_prob: 0.35,
        }
    }
}

/// Latent severity = Σ coef × (z-scored continuous or 0/1 binary covariate)
/// + `noise_sd` × N(0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityModel {
    pub age: f64,
    pub male: f64,
    pub apache_ii: f64,
    pub gcs_worst: f64,
    pub hx_epilepsy: f64,
    pub dx_hie: f64,
    pub dx_abi: f64,
    pub noise_sd: f64,
}

impl Default for SeverityModel {
    fn default() -> Self {
        SeverityModel {
            age: 0.1,
            male: 0.0,
            apache_ii: 0.8,
            gcs_worst: -0.15,
            hx_epilepsy: 0.0,
            dx_hie: 0.2,
            dx_abi: 0.1,
            noise_sd: 0.1,
        }
    }
}

/// Baseline EA: `logit b_t = intercept + severity_coef·s + epilepsy_coef·hx
/// + patient_sd·u + a_t`, with `a_t` a stationary AR(1) process per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineModel {
    pub intercept: f64,
    pub severity_coef: f64,
    pub epilepsy_coef: f64,
    pub patient_sd: f64,
    pub ar_coef: f64,
    pub ar_sd: f64,
}

impl Default for BaselineModel {
    fn default() -> Self {
        BaselineModel {
            intercept: -0.8,
            severity_coef: 0.15,
            epilepsy_coef: 0.5,
            patient_sd: 1.3,
            ar_coef: 0.97,
            ar_sd: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Bolus,
    Infusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrugChoice {
    pub weight: f64,
    pub route: Route,
}

/// Reactive dosing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyModel {
    /// `false` means no patient is ever dosed.
    pub enabled: bool,
    /// Dose when the trailing-window EA fraction exceeds this.
    pub threshold: f64,
    pub trailing_hr: f64,
    pub min_interval_hr: f64,
    /// `P(attentive) = logistic(attentive_intercept + attentive_severity_coef · s)`.
    pub attentive_intercept: f64,
    pub attentive_severity_coef: f64,
    /// Target body load as a multiple of the drug's default ED50.
    pub dose_multiple: f64,
    pub infusion_hr: f64,
    pub drugs: BTreeMap<String, DrugChoice>,
}

impl Default for PolicyModel {
    fn default() -> Self {
        PolicyModel {
            enabled: true,
            threshold: 0.15,
            trailing_hr: 1.0,
            min_interval_hr: 4.0,
            attentive_intercept: -1.0,
            attentive_severity_coef: 0.9,
            dose_multiple: 3.0,
            infusion_hr: 6.0,
            drugs: BTreeMap::from([
                (
                    "levetiracetam".to_string(),
                    DrugChoice {
                        weight: 0.7,
                        route: Route::Bolus,
                    },
                ),
                (
                    "propofol".to_string(),
                    DrugChoice {
                        weight: 0.3,
                        route: Route::Infusion,
                    },
                ),
            ]),
        }
    }
}

/// Patient-level true Hill parameters: `N ~ LogNormal(ln n_median, n_log_sd)`,
/// `ED50 ~ default_ed50 × LogNormal(0, ed50_log_sd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdModel {
    pub n_median: f64,
    pub n_log_sd: f64,
    pub ed50_log_sd: f64,
}

impl Default for PdModel {
    fn default() -> Self {
        PdModel {
            n_median: 1.5,
            n_log_sd: 0.3,
            ed50_log_sd: 0.4,
        }
    }
}

/// `logit P(poor) = intercept + severity_coef·s + treated_coef·treated +
/// scale_i · effect(bin of the burden summary)`, where `scale_i` is
/// `interaction_scale` for patients with the interaction flag set and 1
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeModel {
    pub intercept: f64,
    pub severity_coef: f64,
    pub treated_coef: f64,
    pub ea_summary: Summary,
    pub ea_cuts: Vec<f64>,
    pub ea_effects: Vec<f64>,
    pub interaction_covariate: Option<String>,
    pub interaction_scale: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel {
            intercept: -0.4,
            severity_coef: 4.5,
            treated_coef: 0.0,
            ea_summary: Summary::EMax,
            ea_cuts: vec![0.25, 0.5, 0.75],
            ea_effects: vec![0.0, 0.6, 1.2, 1.8],
            interaction_covariate: None,
            interaction_scale: 1.0,
        }
    }
}

impl OutcomeModel {
    pub fn ea_effect(&self, e: f64, flagged: bool) -> f64 {
        let level = self.ea_cuts.iter().take_while(|&&c| e >= c).count();
        let scale = if flagged { self.interaction_scale } else { 1.0 };
        scale * self.ea_effects[level]
    }

    fn summary_value(&self, stats: &BurdenStats) -> f64 {
        match self.ea_summary {
            Summary::EMax => stats.e_max,
            Summary::EMean => stats.e_mean,
        }
    }
}

/// Targets for the optional intercept / effect-scale calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationTarget {
    /// True APO of the lowest E_max level.
    pub mild_apo: f64,
    /// True APO(highest level) − APO(lowest level).
    pub contrast: f64,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        CalibrationTarget {
            mild_apo: 0.53,
            contrast: 0.22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub eeg_hours: f64,
    /// Fraction of patients whose recording stops at 1.5 h (excluded downstream).
    pub short_eeg_fraction: f64,
    pub weight_mean_kg: f64,
    pub weight_sd_kg: f64,
    /// Classifier output for EA / non-EA segments.
    pub p_on: f64,
    pub p_off: f64,
    /// Number of patients whose true labels train the HMM transition matrix.
    pub labeled_patients: usize,
    /// Reject scenarios whose naive arm means are within 0.05 of the truth.
    pub require_confounding: bool,
    pub covariates: CovariateModel,
    pub severity: SeverityModel,
    pub baseline: BaselineModel,
    pub policy: PolicyModel,
    pub pd: PdModel,
    pub outcome: OutcomeModel,
    pub calibration: Option<CalibrationTarget>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_patients: 2000,
            seed: 1,
            eeg_hours: 24.0,
            short_eeg_fraction: 0.01,
            weight_mean_kg: 75.0,
            weight_sd_kg: 15.0,
            p_on: 0.9,
            p_off: 0.1,
            labeled_patients: 82,
            require_confounding: true,
            covariates: CovariateModel::default(),
            severity: SeverityModel::default(),
            baseline: BaselineModel::default(),
            policy: PolicyModel::default(),
            pd: PdModel::default(),
            outcome: OutcomeModel::default(),
            calibration: None,
        }
    }
}

impl ScenarioConfig {
    /// Scenario whose effect sizes are calibrated to a mild-arm APO of 0.53
    /// and a very-severe minus mild contrast of 0.22.
    pub fn calibrated() -> Self {
        ScenarioConfig {
            outcome: OutcomeModel {
                ea_effects: vec![0.0, 0.35, 0.7, 1.0],
                ..OutcomeModel::default()
            },
            calibration: Some(CalibrationTarget::default()),
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self, drugs: &DrugTable) -> Result<()> {
        let mut bad = Vec::new();
        let mut prob = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("scenario.{name} = {v} is not a probability"));
            }
        };
        prob("short_eeg_fraction", self.short_eeg_fraction);
        prob("p_on", self.p_on);
        prob("p_off", self.p_off);
        prob("covariates.male_prob", self.covariates.male_prob);
        prob("covariates.hx_epilepsy_prob", self.covariates.hx_epilepsy_prob);
        prob("covariates.dx_hie_prob", self.covariates.dx_hie_prob);
        prob("covariates.dx_abi_prob", self.covariates.dx_abi_prob);
        prob("policy.threshold", self.policy.threshold);
        if let Some(c) = &self.calibration {
            prob("calibration.mild_apo", c.mild_apo);
            if !(c.contrast.abs() < 1.0) {
                bad.push(format!("scenario.calibration.contrast = {} must lie in (-1, 1)", c.contrast));
            }
        }
        if self.n_patients < 1 {
            bad.push("scenario.n_patients must be >= 1".into());
        }
        if !(self.eeg_hours > 0.0) {
            bad.push("scenario.eeg_hours must be > 0".into());
        }
        if !(self.p_on > self.p_off) {
            bad.push("scenario.p_on must exceed scenario.p_off".into());
        }
        for (name, v) in [
            ("covariates.age_sd", self.covariates.age_sd),
            ("covariates.apache_sd", self.covariates.apache_sd),
            ("covariates.gcs_sd", self.covariates.gcs_sd),
            ("weight_sd_kg", self.weight_sd_kg),
            ("severity.noise_sd", self.severity.noise_sd),
            ("baseline.patient_sd", self.baseline.patient_sd),
            ("baseline.ar_sd", self.baseline.ar_sd),
            ("pd.n_log_sd", self.pd.n_log_sd),
            ("pd.ed50_log_sd", self.pd.ed50_log_sd),
        ] {
            if !(v >= 0.0) {
                bad.push(format!("scenario.{name} = {v} must be >= 0"));
            }
        }
        if !(self.weight_mean_kg > 0.0) {
            bad.push("scenario.weight_mean_kg must be > 0".into());
        }
        if !(self.baseline.ar_coef.abs() < 1.0) {
            bad.push("scenario.baseline.ar_coef must lie in (-1, 1)".into());
        }
        if !(self.pd.n_median > 0.0) {
            bad.push("scenario.pd.n_median must be > 0".into());
        }
        if !(self.policy.trailing_hr > 0.0) || !(self.policy.min_interval_hr >= 0.0) {
            bad.push("scenario.policy.trailing_hr must be > 0 and min_interval_hr >= 0".into());
        }
        if !(self.policy.dose_multiple > 0.0) || !(self.policy.infusion_hr > 0.0) {
            bad.push("scenario.policy.dose_multiple and infusion_hr must be > 0".into());
        }
        if self.policy.enabled {
            if self.policy.drugs.is_empty() {
                bad.push("scenario.policy.drugs is empty".into());
            }
            let total: f64 = self.policy.drugs.values().map(|d| d.weight).sum();
            if !(total > 0.0) || self.policy.drugs.values().any(|d| !(d.weight >= 0.0)) {
                bad.push("scenario.policy.drugs weights must be >= 0 with a positive sum".into());
            }
        }
        for name in self.policy.drugs.keys() {
            if !drugs.contains(name) {
                bad.push(format!("scenario.policy.drugs.{name} is not in the drug table"));
            }
        }
        let o = &self.outcome;
        if BinScheme::new(o.ea_cuts.clone()).is_err() {
            bad.push("scenario.outcome.ea_cuts must be strictly increasing inside (0, 1)".into());
        }
        if o.ea_effects.len() != o.ea_cuts.len() + 1 {
            bad.push(format!(
                "scenario.outcome.ea_effects needs {} entries, has {}",
                o.ea_cuts.len() + 1,
                o.ea_effects.len()
            ));
        }
        if let Some(c) = &o.interaction_covariate {
            if !COVARIATES.iter().any(|(n, k)| n == c && *k == "binary") {
                bad.push(format!("scenario.outcome.interaction_covariate `{c}` is not a binary covariate"));
            }
        }
        for (name, v) in [
            ("outcome.intercept", o.intercept),
            ("outcome.severity_coef", o.severity_coef),
            ("outcome.treated_coef", o.treated_coef),
            ("outcome.interaction_scale", o.interaction_scale),
        ] {
            if !v.is_finite() {
                bad.push(format!("scenario.{name} must be finite"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Everything the simulator knows about one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPatient {
    pub id: String,
    pub covariates: Vec<f64>,
    pub severity: f64,
    pub body_weight_kg: f64,
    pub pd_truth: PdParams,
    pub doses: Vec<DoseRecord>,
    /// EA segments per 10-minute step under the factual policy.
    pub factual_counts: Vec<u16>,
    /// EA segments per step with all doses removed.
    pub cf_counts: Vec<u16>,
    pub eeg_hours: f64,
    pub factual_burden: BurdenStats,
    pub cf_burden: BurdenStats,
    pub dosed: bool,
    pub outcome_prob: f64,
    pub cf_outcome_prob: f64,
    pub outcome_mrs: u8,
    layout_seed: u64,
}

impl SimulatedPatient {
    pub fn included(&self) -> bool {
        self.eeg_hours >= MIN_EEG_HOURS
    }

    fn segments(&self) -> usize {
        (self.eeg_hours * 3600.0 / crate::burden::SEGMENT_SECONDS).round() as usize
    }

    /// True factual per-segment EA labels: each step's EA segments form one
    /// contiguous block at a random offset within the step.
    pub fn labels(&self) -> BitVec {
        let n = self.segments();
        let mut bits = BitVec::repeat(false, n);
        let mut rng = ChaCha8Rng::seed_from(self.layout_seed);
        for (t, &c) in self.factual_counts.iter().enumerate() {
            let c = usize::from(c);
            let off = rng.gen_range(0..=SEGMENTS_PER_STEP - c);
            let start = t * SEGMENTS_PER_STEP + off;
            for k in start..(start + c).min(n) {
                bits.set(k, true);
            }
        }
        bits
    }

    pub fn stream(&self, p_on: f64, p_off: f64) -> Result<EaProbabilityStream> {
        EaProbabilityStream::from_labels(0.0, self.labels(), p_on, p_off)
    }
}

trait SeedFrom {
    fn seed_from(seed: u64) -> Self;
}

impl SeedFrom for ChaCha8Rng {
    fn seed_from(seed: u64) -> Self {
        rand::SeedableRng::seed_from_u64(seed)
    }
}

/// Per-patient truth under the no-treatment intervention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientTruth {
    pub id: String,
    pub cf_e_max: f64,
    pub cf_e_mean: f64,
    pub cf_outcome_prob: f64,
    /// Outcome logit without the EA and treatment terms.
    pub base_logit: f64,
    /// Whether the outcome interaction flag is set.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmTruth {
    pub summary: Summary,
    pub level: usize,
    pub label: String,
    /// Population-standardized APO (see [`GroundTruth::true_apo`]).
    pub apo: f64,
    /// Mean untreated outcome probability among patients whose untreated
    /// burden falls in the level.
    pub apo_in_bin: f64,
    pub n_in_bin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub patients: Vec<PatientTruth>,
    pub outcome: OutcomeModel,
    pub arms: Vec<ArmTruth>,
}

impl GroundTruth {
    fn summary_of(p: &PatientTruth, s: Summary) -> f64 {
        match s {
            Summary::EMax => p.cf_e_max,
            Summary::EMean => p.cf_e_mean,
        }
    }

    /// Average potential outcome under no treatment with burden set to
    /// `level` of `bins` on `summary`.
    ///
    /// The burden value assigned to every patient is drawn from the untreated
    /// burdens that fall in the level, and the outcome probability is averaged
    /// over the whole population's covariates. When the outcome's EA effect
    /// is constant within the level this is `mean_i σ(base_i + effect)`.
    pub fn true_apo(&self, summary: Summary, bins: &BinScheme, level: usize) -> Result<f64> {
        self.true_apo_where(summary, bins, level, |_| true)
    }

    /// [`Self::true_apo`] averaged only over patients selected by `keep`.
    pub fn true_apo_where(
        &self,
        summary: Summary,
        bins: &BinScheme,
        level: usize,
        keep: impl Fn(&PatientTruth) -> bool,
    ) -> Result<f64> {
        let members: Vec<&PatientTruth> = self
            .patients
            .iter()
            .filter(|p| bins.level(Self::summary_of(p, summary)) == level)
            .collect();
        if members.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no patient has untreated {} in level {}",
                summary.as_str(),
                bins.label(level)
            )));
        }
        // distinct outcome-summary values grouped by their effect level
        let mut effect_levels: BTreeMap<usize, usize> = BTreeMap::new();
        for m in &members {
            let e = match self.outcome.ea_summary {
                Summary::EMax => m.cf_e_max,
                Summary::EMean => m.cf_e_mean,
            };
            let l = self.outcome.ea_cuts.iter().take_while(|&&c| e >= c).count();
            *effect_levels.entry(l).or_insert(0) += 1;
        }
        let total = members.len() as f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in self.patients.iter().filter(|p| keep(p)) {
            let scale = if p.flagged { self.outcome.interaction_scale } else { 1.0 };
            let mut v = 0.0;
            for (&l, &c) in &effect_levels {
                v += c as f64 * logistic(p.base_logit + scale * self.outcome.ea_effects[l]);
            }
            sum += v / total;
            count += 1;
        }
        if count == 0 {
            return Err(Error::InsufficientData("no patient selected for the true APO".into()));
        }
        Ok(sum / count as f64)
    }

    /// Mean untreated outcome probability among patients in the level.
    pub fn apo_in_bin(&self, summary: Summary, bins: &BinScheme, level: usize) -> Option<(f64, usize)> {
        let v: Vec<f64> = self
            .patients
            .iter()
            .filter(|p| bins.level(Self::summary_of(p, summary)) == level)
            .map(|p| p.cf_outcome_prob)
            .collect();
        stats::mean(&v).map(|m| (m, v.len()))
    }

    fn arm_table(&mut self) {
        let mut arms = Vec::new();
        for (summary, bins) in [
            (Summary::EMax, BinScheme::e_max_default()),
            (Summary::EMean, BinScheme::e_mean_default()),
        ] {
            for level in 0..bins.n_levels() {
                let (in_bin, n) = self.apo_in_bin(summary, &bins, level).unwrap_or((f64::NAN, 0));
                arms.push(ArmTruth {
                    summary,
                    level,
                    label: bins.label(level),
                    apo: self.true_apo(summary, &bins, level).unwrap_or(f64::NAN),
                    apo_in_bin: in_bin,
                    n_in_bin: n,
                });
            }
        }
        self.arms = arms;
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub config: ScenarioConfig,
    /// Outcome model after calibration.
    pub outcome: OutcomeModel,
    pub patients: Vec<SimulatedPatient>,
    pub truth: GroundTruth,
}

/// Burden summaries straight from per-step EA counts; windows of
/// `window_steps` slide by one step over the first `horizon_steps`.
pub fn burden_from_counts(counts: &[u16], window_steps: usize, horizon_steps: usize) -> BurdenStats {
    let h = horizon_steps.min(counts.len());
    let w = window_steps.min(h).max(1);
    let mut prefix = vec![0u64; h + 1];
    for t in 0..h {
        prefix[t + 1] = prefix[t] + u64::from(counts[t]);
    }
    let denom = (w * SEGMENTS_PER_STEP) as f64;
    let fr: Vec<f64> = (0..=h.saturating_sub(w))
        .map(|s| (prefix[s + w] - prefix[s]) as f64 / denom)
        .collect();
    crate::burden::burden_summary(&fr).unwrap_or(BurdenStats {
        e_max: 0.0,
        e_mean: 0.0,
        e_median: None,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("valid").sample(rng)
}

struct Draft {
    patient: SimulatedPatient,
    base_logit_no_intercept: f64,
    flagged: bool,
    outcome_uniform: f64,
    mrs_uniform: f64,
}

fn simulate_patient(cfg: &ScenarioConfig, drugs: &DrugTable, index: usize) -> Result<Draft> {
    let seed = cfg.seed;
    let idx = index as u64;
    let id = format!("S{:05}", index + 1);

    let mut rng = task_rng(seed, "covariates", idx);
    let cm = &cfg.covariates;
    let age = (cm.age_mean + cm.age_sd * standard_normal(&mut rng)).clamp(cm.age_min, cm.age_max);
    let male = f64::from(u8::from(rng.gen_bool(cm.male_prob)));
    let apache = (cm.apache_mean + cm.apache_sd * standard_normal(&mut rng)).clamp(0.0, 71.0);
    let gcs = (cm.gcs_mean + cm.gcs_sd * standard_normal(&mut rng)).clamp(3.0, 15.0);
    let epi = f64::from(u8::from(rng.gen_bool(cm.hx_epilepsy_prob)));
    let hie = f64::from(u8::from(rng.gen_bool(cm.dx_hie_prob)));
    let abi = f64::from(u8::from(rng.gen_bool(cm.dx_abi_prob)));
    let covariates = vec![age, male, apache, gcs, epi, hie, abi];
    let z = |x: f64, m: f64, s: f64| if s > 0.0 { (x - m) / s } else { 0.0 };
    let sm = &cfg.severity;
    let severity = sm.age * z(age, cm.age_mean, cm.age_sd)
        + sm.male * male
        + sm.apache_ii * z(apache, cm.apache_mean, cm.apache_sd)
        + sm.gcs_worst * z(gcs, cm.gcs_mean, cm.gcs_sd)
        + sm.hx_epilepsy * epi
        + sm.dx_hie * hie
        + sm.dx_abi * abi
        + sm.noise_sd * standard_normal(&mut rng);
    let body_weight_kg = (cfg.weight_mean_kg + cfg.weight_sd_kg * standard_normal(&mut rng)).clamp(35.0, 200.0);
    let short = rng.gen_bool(cfg.short_eeg_fraction);
    let eeg_hours = if short { 1.5 } else { cfg.eeg_hours };

    // true responsiveness for every drug the policy may use
    let mut pd_truth = PdParams::new();
    for name in cfg.policy.drugs.keys() {
        let info = drugs.get(name)?;
        let n = cfg.pd.n_median * (cfg.pd.n_log_sd * standard_normal(&mut rng)).exp();
        let ed50 = info.default_ed50 * (cfg.pd.ed50_log_sd * standard_normal(&mut rng)).exp();
        pd_truth.insert(
            name.clone(),
            DrugResponse {
                hill_n: n,
                ed50,
                status: FitStatus::Fitted,
            },
        );
    }
    let attentive = cfg.policy.enabled
        && rng.gen_bool(logistic(
            cfg.policy.attentive_intercept + cfg.policy.attentive_severity_coef * severity,
        ));

    // untreated EA counts: logistic AR(1) baseline, binomial segments
    let n_steps = (cfg.eeg_hours * STEPS_PER_HOUR).ceil() as usize;
    let bm = &cfg.baseline;
    let mut ea_rng = task_rng(seed, "baseline", idx);
    let level = bm.intercept
        + bm.severity_coef * severity
        + bm.epilepsy_coef * epi
        + bm.patient_sd * standard_normal(&mut ea_rng);
    let innov = bm.ar_sd * (1.0 - bm.ar_coef * bm.ar_coef).sqrt();
    let mut a = bm.ar_sd * standard_normal(&mut ea_rng);
    let mut cf_counts = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let b = logistic(level + a);
        let c = Binomial::new(SEGMENTS_PER_STEP as u64, b)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(&mut ea_rng);
        cf_counts.push(c as u16);
        a = bm.ar_coef * a + innov * standard_normal(&mut ea_rng);
    }

    // factual trajectory: reactive dosing and thinning of the same segments
    let mut thin_rng = task_rng(seed, "thinning", idx);
    let mut policy_rng = task_rng(seed, "policy", idx);
    let trailing = (cfg.policy.trailing_hr * STEPS_PER_HOUR).round().max(1.0) as usize;
    let min_gap = (cfg.policy.min_interval_hr * STEPS_PER_HOUR).round() as usize;
    let choices: Vec<(&String, &DrugChoice)> = cfg.policy.drugs.iter().collect();
    let weight_total: f64 = choices.iter().map(|(_, c)| c.weight).sum();
    let dt = 1.0 / STEPS_PER_HOUR;
    let mut doses: Vec<DoseRecord> = Vec::new();
    let mut last_dose: Option<usize> = None;
    let mut factual_counts = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        if attentive && t > 0 && last_dose.map_or(true, |l| t - l >= min_gap) {
            let from = t.saturating_sub(trailing);
            let ea: u32 = factual_counts[from..t].iter().map(|&c: &u16| u32::from(c)).sum();
            let frac = f64::from(ea) / ((t - from) * SEGMENTS_PER_STEP) as f64;
            if frac > cfg.policy.threshold {
                let mut u = policy_rng.gen::<f64>() * weight_total;
                let mut pick = choices[choices.len() - 1];
                for c in &choices {
                    if u < c.1.weight {
                        pick = *c;
                        break;
                    }
                    u -= c.1.weight;
                }
                let info = drugs.get(pick.0)?;
                let target = cfg.policy.dose_multiple * info.default_ed50;
                let start = t as f64 * dt;
                doses.push(match pick.1.route {
                    Route::Bolus => DoseRecord::bolus(pick.0, start, target),
                    Route::Infusion => {
                        let hours = cfg.policy.infusion_hr;
                        DoseRecord::infusion(pick.0, start, hours, target * info.decay_rate() * hours)
                    }
                });
                last_dose = Some(t);
            }
        }
        let cf = cf_counts[t];
        let c = if doses.is_empty() {
            cf
        } else {
            let mid = (t as f64 + 0.5) * dt;
            let conc = simulate_concentration(&doses, drugs, &[mid])?;
            let zt = hill_suppression(
                pd_truth
                    .iter()
                    .map(|(name, r)| (conc.values.get(name).map_or(0.0, |v| v[0]), r)),
            );
            if zt >= 1.0 {
                cf
            } else {
                Binomial::new(u64::from(cf), zt)
                    .map_err(|e| Error::Domain(e.to_string()))?
                    .sample(&mut thin_rng) as u16
            }
        };
        factual_counts.push(c);
    }

    let window_steps = (6.0 * STEPS_PER_HOUR) as usize;
    let horizon = (24.0 * STEPS_PER_HOUR) as usize;
    let eeg_steps = ((eeg_hours * STEPS_PER_HOUR).ceil() as usize).min(n_steps);
    let factual_burden = burden_from_counts(&factual_counts[..eeg_steps], window_steps, horizon);
    let cf_burden = burden_from_counts(&cf_counts[..eeg_steps], window_steps, horizon);

    let om = &cfg.outcome;
    let flagged = om
        .interaction_covariate
        .as_ref()
        .and_then(|c| COVARIATES.iter().position(|(n, _)| n == c))
        .is_some_and(|d| covariates[d] != 0.0);
    let mut out_rng = task_rng(seed, "outcome", idx);
    let dosed = !doses.is_empty();
    Ok(Draft {
        base_logit_no_intercept: om.severity_coef * severity,
        flagged,
        outcome_uniform: out_rng.gen(),
        mrs_uniform: out_rng.gen(),
        patient: SimulatedPatient {
            id,
            covariates,
            severity,
            body_weight_kg,
            pd_truth,
            doses,
            factual_counts,
            cf_counts,
            eeg_hours,
            factual_burden,
            cf_burden,
            dosed,
            outcome_prob: f64::NAN,
            cf_outcome_prob: f64::NAN,
            outcome_mrs: 0,
            layout_seed: stats::derive_seed(seed, "layout", idx),
        },
    })
}

fn truth_for(drafts: &[Draft], outcome: &OutcomeModel) -> GroundTruth {
    let patients = drafts
        .iter()
        .filter(|d| d.patient.included())
        .map(|d| {
            let base = outcome.intercept + d.base_logit_no_intercept;
            let e = outcome.summary_value(&d.patient.cf_burden);
            PatientTruth {
                id: d.patient.id.clone(),
                cf_e_max: d.patient.cf_burden.e_max,
                cf_e_mean: d.patient.cf_burden.e_mean,
                cf_outcome_prob: logistic(base + outcome.ea_effect(e, d.flagged)),
                base_logit: base,
                flagged: d.flagged,
            }
        })
        .collect();
    GroundTruth {
        patients,
        outcome: outcome.clone(),
        arms: Vec::new(),
    }
}

fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f is increasing in its argument
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Adjusts the intercept and a common scale on the EA effects so the true
/// lowest-level APO and top-minus-bottom contrast hit their targets.
fn calibrate(drafts: &[Draft], base: &OutcomeModel, target: &CalibrationTarget) -> Result<OutcomeModel> {
    let bins = BinScheme::new(base.ea_cuts.clone())?;
    let top = bins.n_levels() - 1;
    let apo = |m: &OutcomeModel, level: usize| -> f64 {
        truth_for(drafts, m)
            .true_apo(base.ea_summary, &bins, level)
            .unwrap_or(f64::NAN)
    };
    let with = |intercept: f64, scale: f64| OutcomeModel {
        intercept,
        ea_effects: base.ea_effects.iter().map(|e| e * scale).collect(),
        ..base.clone()
    };
    let spread = base.ea_effects[top] - base.ea_effects[0];
    if !(spread > 0.0) {
        return Err(Error::Config(vec![
            "scenario.calibration needs increasing scenario.outcome.ea_effects".into(),
        ]));
    }
    let (mut intercept, mut scale) = (base.intercept, 1.0);
    for _ in 0..6 {
        intercept = bisect(-30.0, 30.0, target.mild_apo, |a| apo(&with(a, scale), 0));
        scale = bisect(0.0, 50.0 / spread, target.contrast, |s| {
            let m = with(intercept, s);
            apo(&m, top) - apo(&m, 0)
        });
    }
    let m = with(intercept, scale);
    if apo(&m, 0).is_nan() || apo(&m, top).is_nan() {
        return Err(Error::InsufficientData(
            "calibration needs untreated burdens in the lowest and highest levels".into(),
        ));
    }
    Ok(m)
}

/// Observed poor-outcome rate among untreated patients per E_max level.
fn naive_untreated_means(patients: &[SimulatedPatient], bins: &BinScheme) -> Vec<Option<f64>> {
    (0..bins.n_levels())
        .map(|l| {
            let v: Vec<f64> = patients
                .iter()
                .filter(|p| p.included() && !p.dosed && bins.level(p.factual_burden.e_max) == l)
                .map(|p| f64::from(u8::from(p.outcome_mrs >= 4)))
                .collect();
            stats::mean(&v)
        })
        .collect()
}

/// Generates a cohort and its ground truth; deterministic in `config.seed`.
pub fn generate_cohort(config: &ScenarioConfig, drugs: &DrugTable) -> Result<SimulatedCohort> {
    config.validate(drugs)?;
    let drafts: Vec<Draft> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| simulate_patient(config, drugs, i))
        .collect::<Result<_>>()?;
    let outcome = match &config.calibration {
        Some(t) => calibrate(&drafts, &config.outcome, t)?,
        None => config.outcome.clone(),
    };
    let mut truth = truth_for(&drafts, &outcome);
    truth.arm_table();
    let patients: Vec<SimulatedPatient> = drafts
        .into_iter()
        .map(|d| {
            let mut p = d.patient;
            let base = outcome.intercept + d.base_logit_no_intercept;
            let e = outcome.summary_value(&p.factual_burden);
            let e_cf = outcome.summary_value(&p.cf_burden);
            let treat = if p.dosed { outcome.treated_coef } else { 0.0 };
            p.outcome_prob = logistic(base + treat + outcome.ea_effect(e, d.flagged));
            p.cf_outcome_prob = logistic(base + outcome.ea_effect(e_cf, d.flagged));
            let poor = d.outcome_uniform < p.outcome_prob;
            p.outcome_mrs = if poor {
                4 + (d.mrs_uniform * 3.0) as u8
            } else {
                (d.mrs_uniform * 4.0) as u8
            };
            p
        })
        .collect();

    if config.require_confounding {
        let bins = BinScheme::e_max_default();
        let naive = naive_untreated_means(&patients, &bins);
        let confounded = naive.iter().enumerate().any(|(l, m)| {
            m.zip(truth.true_apo(Summary::EMax, &bins, l).ok())
                .is_some_and(|(m, t)| (m - t).abs() > 0.05)
        });
        if !confounded {
            return Err(Error::Config(vec![
                "scenario is not confounded: every naive untreated E_max arm mean is within 0.05 of the truth \
                 (set scenario.require_confounding = false to allow)"
                    .into(),
            ]));
        }
    }
    Ok(SimulatedCohort {
        config: config.clone(),
        outcome,
        patients,
        truth,
    })
}

impl SimulatedCohort {
    /// Builds analysis records exactly as [`crate::cohort::load_cohort`] would
    /// from the exported files.
    pub fn to_loaded(&self) -> Result<LoadedCohort> {
        let mut included = Vec::new();
        let mut exclusions = Vec::new();
        for p in &self.patients {
            if !p.included() {
                exclusions.push(Exclusion {
                    id: p.id.clone(),
                    reason: ExclusionReason::ShortEeg,
                    outcome_mrs: Some(p.outcome_mrs),
                });
                continue;
            }
            included.push(PatientRecord {
                id: p.id.clone(),
                covariates: CovariateVector(p.covariates.clone()),
                doses: p.doses.clone(),
                ea_stream: p.stream(self.config.p_on, self.config.p_off)?,
                outcome_mrs: p.outcome_mrs,
                body_weight_kg: p.body_weight_kg,
            });
        }
        Ok(LoadedCohort {
            cohort: Cohort::new(covariate_schema(), included)?,
            exclusions,
            input_rows: self.patients.len(),
        })
    }

    /// Transition matrix fitted on the true labels of the first
    /// `labeled_patients` included patients.
    pub fn labeled_transition(&self) -> Result<TransitionMatrix> {
        let seqs: Vec<Vec<bool>> = self
            .patients
            .iter()
            .filter(|p| p.included())
            .take(self.config.labeled_patients.max(1))
            .map(|p| p.labels().iter().by_vals().collect())
            .collect();
        fit_transition_matrix(&seqs)
    }

    /// Analysis inputs built from the simulator's own quantities: burden from
    /// the true factual EA counts and true PD parameters for administered
    /// drugs. Skips smoothing and PD fitting entirely.
    pub fn oracle_inputs(&self) -> Result<AnalysisInputs> {
        let included: Vec<&SimulatedPatient> = self.patients.iter().filter(|p| p.included()).collect();
        let pd: Vec<PdParams> = included
            .iter()
            .map(|p| {
                let given: BTreeSet<&String> = p.doses.iter().map(|d| &d.drug).collect();
                p.pd_truth
                    .iter()
                    .filter(|(k, _)| given.contains(k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect()
            })
            .collect();
        let mut medians = BTreeMap::new();
        for drug in self.config.policy.drugs.keys() {
            let v: Vec<f64> = pd.iter().filter_map(|p| p.get(drug)).map(|r| r.ed50).collect();
            if let Some(m) = stats::median(&v) {
                medians.insert(drug.clone(), m);
            }
        }
        let mut treated = Vec::with_capacity(included.len());
        for p in &included {
            treated.push(classify_treatment(&mean_dose_rates(&p.doses, p.eeg_hours), &medians)?);
        }
        Ok(AnalysisInputs {
            ids: included.iter().map(|p| p.id.clone()).collect(),
            covariate_names: COVARIATES.iter().map(|(n, _)| n.to_string()).collect(),
            covariates: included.iter().map(|p| p.covariates.clone()).collect(),
            pd,
            e_max: included.iter().map(|p| p.factual_burden.e_max).collect(),
            e_mean: included.iter().map(|p| p.factual_burden.e_mean).collect(),
            treated,
            outcome: included.iter().map(|p| f64::from(u8::from(p.outcome_mrs >= 4))).collect(),
            mrs: included.iter().map(|p| p.outcome_mrs).collect(),
        })
    }

    /// Writes the cohort directory plus `transition.txt`.
    pub fn export_cohort(&self, dir: &Path) -> Result<()> {
        let mut all = Vec::with_capacity(self.patients.len());
        for p in &self.patients {
            all.push(PatientRecord {
                id: p.id.clone(),
                covariates: CovariateVector(p.covariates.clone()),
                doses: p.doses.clone(),
                ea_stream: p.stream(self.config.p_on, self.config.p_off)?,
                outcome_mrs: p.outcome_mrs,
                body_weight_kg: p.body_weight_kg,
            });
        }
        write_cohort(dir, &Cohort::new(covariate_schema(), all)?)?;
        self.labeled_transition()?.write(&dir.join("transition.txt"))
    }

    /// `patient_id, cf_e_max, cf_e_mean, cf_outcome_prob` for included patients.
    pub fn write_ground_truth(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["patient_id", "cf_e_max", "cf_e_mean", "cf_outcome_prob"])?;
        for p in &self.truth.patients {
            w.write_record([
                p.id.clone(),
                p.cf_e_max.to_string(),
                p.cf_e_mean.to_string(),
                p.cf_outcome_prob.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Per-arm truth: `summary, level, label, true_apo, apo_in_bin, n_in_bin`.
    pub fn write_arm_truth(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["summary", "level", "label", "true_apo", "apo_in_bin", "n_in_bin"])?;
        for a in &self.truth.arms {
            w.write_record([
                a.summary.as_str().to_string(),
                a.level.to_string(),
                a.label.clone(),
                a.apo.to_string(),
                a.apo_in_bin.to_string(),
                a.n_in_bin.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_patients: n,
            require_confounding: false,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let t = DrugTable::default();
        let a = generate_cohort(&small(40), &t).unwrap();
        let b = generate_cohort(&small(40), &t).unwrap();
        assert_eq!(a.patients, b.patients);
        assert_eq!(format!("{:?}", a.truth), format!("{:?}", b.truth));
        let c = generate_cohort(&ScenarioConfig { seed: 2, ..small(40) }, &t).unwrap();
        assert_ne!(a.patients, c.patients);
    }

    #[test]
    fn never_treat_collapses_the_fork() {
        let mut cfg = small(60);
        cfg.policy.enabled = false;
        let s = generate_cohort(&cfg, &DrugTable::default()).unwrap();
        for p in &s.patients {
            assert!(p.doses.is_empty());
            assert_eq!(p.factual_counts, p.cf_counts);
            assert_eq!(p.outcome_prob, p.cf_outcome_prob);
        }
    }

    #[test]
    fn factual_never_exceeds_counterfactual() {
        let s = generate_cohort(&small(80), &DrugTable::default()).unwrap();
        assert!(s.patients.iter().any(|p| p.dosed));
        for p in &s.patients {
            assert!(p.factual_counts.iter().zip(&p.cf_counts).all(|(f, c)| f <= c));
        }
    }

    #[test]
    fn labels_reproduce_step_counts() {
        let s = generate_cohort(&small(5), &DrugTable::default()).unwrap();
        let p = &s.patients[0];
        let labels = p.labels();
        for (t, &c) in p.factual_counts.iter().enumerate() {
            let n = labels[t * SEGMENTS_PER_STEP..(t + 1) * SEGMENTS_PER_STEP].count_ones();
            assert_eq!(n, usize::from(c));
        }
    }

    #[test]
    fn degenerate_outcome_model_gives_indicator_apo() {
        let mut cfg = small(300);
        cfg.outcome = OutcomeModel {
            intercept: -1000.0,
            severity_coef: 0.0,
            ea_effects: vec![0.0, 0.0, 0.0, 2000.0],
            ..OutcomeModel::default()
        };
        let s = generate_cohort(&cfg, &DrugTable::default()).unwrap();
        let bins = BinScheme::e_max_default();
        for l in 0..4 {
            if let Ok(v) = s.truth.true_apo(Summary::EMax, &bins, l) {
                assert_eq!(v, if l == 3 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn monotone_effects_give_monotone_truth() {
        let s = generate_cohort(&small(500), &DrugTable::default()).unwrap();
        let bins = BinScheme::e_max_default();
        let apo: Vec<f64> = (0..4).map(|l| s.truth.true_apo(Summary::EMax, &bins, l).unwrap()).collect();
        assert!(apo.windows(2).all(|w| w[1] >= w[0]), "{apo:?}");
    }

    #[test]
    fn stronger_effect_widens_contrast() {
        let bins = BinScheme::e_max_default();
        let mut last = f64::NEG_INFINITY;
        for scale in [0.5, 1.0, 2.0] {
            let mut cfg = small(300);
            cfg.outcome.ea_effects = cfg.outcome.ea_effects.iter().map(|e| e * scale).collect();
            let s = generate_cohort(&cfg, &DrugTable::default()).unwrap();
            let c = s.truth.true_apo(Summary::EMax, &bins, 3).unwrap() - s.truth.true_apo(Summary::EMax, &bins, 0).unwrap();
            assert!(c > last);
            last = c;
        }
    }

    #[test]
    fn calibration_hits_targets() {
        let mut cfg = ScenarioConfig::calibrated();
        cfg.n_patients = 600;
        let s = generate_cohort(&cfg, &DrugTable::default()).unwrap();
        let bins = BinScheme::e_max_default();
        let mild = s.truth.true_apo(Summary::EMax, &bins, 0).unwrap();
        let top = s.truth.true_apo(Summary::EMax, &bins, 3).unwrap();
        assert!((mild - 0.53).abs() < 1e-6, "{mild}");
        assert!((top - mild - 0.22).abs() < 1e-6, "{}", top - mild);
    }

    #[test]
    fn invalid_config_lists_fields() {
        let mut cfg = small(0);
        cfg.p_on = 1.5;
        cfg.outcome.ea_effects = vec![0.0];
        match cfg.validate(&DrugTable::default()) {
            Err(Error::Config(v)) => assert!(v.len() >= 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn window_counts_match_label_windows() {
        let s = generate_cohort(&small(3), &DrugTable::default()).unwrap();
        for p in &s.patients {
            let labels: Vec<bool> = p.labels().iter().by_vals().collect();
            let w = crate::burden::ea_fraction_series(&labels, None, &crate::burden::WindowConfig::default()).unwrap();
            let fr: Vec<f64> = w.iter().map(|x| x.fraction).collect();
            let b = crate::burden::burden_summary(&fr).unwrap();
            assert!((b.e_max - p.factual_burden.e_max).abs() < 1e-12);
            assert!((b.e_mean - p.factual_burden.e_mean).abs() < 1e-12);
        }
    }
}
