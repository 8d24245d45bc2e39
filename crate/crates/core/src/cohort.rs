//! Patient records, cohort ingestion with reason-coded exclusions, outcome
//! dichotomization and covariate standardization.
//!
//! On disk a cohort is a directory:
//!
//! ```text
//! cohort.csv        id, mrs, weight_kg, <covariate columns>
//! doses.csv         patient_id, drug, start_hr, duration_hr, dose_mg_per_kg
//! streams/<id>.csv  t_seconds, p_ea   (one line per 2-second segment)
//! ```
//!
//! Empty covariate or outcome cells are *missing* and exclude the row; a
//! non-numeric cell is a parse error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::burden::EaProbabilityStream;
use crate::error::{Error, Result};
use crate::pkpd::DrugTable;
use crate::stats;

/// Minimum EEG duration for inclusion, hours.
pub const MIN_EEG_HOURS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Ordered covariate schema shared by every patient of a cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<CovariateSpec>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<CovariateSpec>) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::Schema("covariate schema must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate covariate `{}`", c.name)));
            }
        }
        Ok(CovariateSchema { covariates })
    }

    /// Parses `name:continuous` / `name:binary` entries.
    pub fn parse(entries: &[String]) -> Result<Self> {
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let (name, kind) = e
                .split_once(':')
                .ok_or_else(|| Error::Schema(format!("covariate `{e}` lacks a `:kind` suffix")))?;
            let kind = match kind.trim() {
                "continuous" => CovariateKind::Continuous,
                "binary" => CovariateKind::Binary,
                other => return Err(Error::Schema(format!("unknown covariate kind `{other}`"))),
            };
            out.push(CovariateSpec {
                name: name.trim().to_string(),
                kind,
            });
        }
        Self::new(out)
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.covariates.iter().map(|c| c.name.as_str())
    }
}

/// Covariate values in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector(pub Vec<f64>);

impl CovariateVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// One administration of a drug. `duration_hr == 0` is a bolus of
/// `amount_mg_per_kg`; otherwise the amount is infused at a constant rate over
/// the duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRecord {
    pub drug: String,
    pub start_hr: f64,
    pub duration_hr: f64,
    pub amount_mg_per_kg: f64,
}

impl DoseRecord {
    pub fn bolus(drug: &str, start_hr: f64, amount_mg_per_kg: f64) -> Self {
        DoseRecord {
            drug: drug.to_string(),
            start_hr,
            duration_hr: 0.0,
            amount_mg_per_kg,
        }
    }

    pub fn infusion(drug: &str, start_hr: f64, duration_hr: f64, amount_mg_per_kg: f64) -> Self {
        DoseRecord {
            drug: drug.to_string(),
            start_hr,
            duration_hr,
            amount_mg_per_kg,
        }
    }

    pub fn is_bolus(&self) -> bool {
        self.duration_hr == 0.0
    }

    /// Infusion rate in mg/kg/h (`None` for a bolus).
    pub fn rate(&self) -> Option<f64> {
        (!self.is_bolus()).then(|| self.amount_mg_per_kg / self.duration_hr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_hr >= 0.0) || !self.start_hr.is_finite() {
            return Err(Error::Domain(format!("dose time {} must be >= 0", self.start_hr)));
        }
        if !(self.amount_mg_per_kg >= 0.0) || !self.amount_mg_per_kg.is_finite() {
            return Err(Error::Domain(format!(
                "dose {} mg/kg must be >= 0",
                self.amount_mg_per_kg
            )));
        }
        if !(self.duration_hr >= 0.0) || !self.duration_hr.is_finite() {
            return Err(Error::Domain(format!(
                "infusion duration {} must be >= 0",
                self.duration_hr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PatientRecord {
    pub id: String,
    pub covariates: CovariateVector,
    pub doses: Vec<DoseRecord>,
    pub ea_stream: EaProbabilityStream,
    pub outcome_mrs: u8,
    pub body_weight_kg: f64,
}

impl PatientRecord {
    pub fn poor_outcome(&self) -> bool {
        self.outcome_mrs >= 4
    }

    pub fn eeg_hours(&self) -> f64 {
        self.ea_stream.duration_hours()
    }
}

/// Per-covariate location and scale used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Columns with zero (or non-finite) spread; they standardize to all zeros
    /// and get a fixed zero weight in matching.
    pub zero_variance: Vec<bool>,
}

impl Standardization {
    /// Fits column statistics on a row-major matrix.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "standardization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let p = rows[0].len();
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        let mut zero_variance = Vec::with_capacity(p);
        let mut col = vec![0.0; rows.len()];
        for d in 0..p {
            for (c, r) in col.iter_mut().zip(rows) {
                *c = r[d];
            }
            let m = stats::mean(&col).unwrap_or(0.0);
            let s = stats::sample_sd(&col).unwrap_or(0.0);
            let degenerate = !(s > 0.0) || !s.is_finite();
            means.push(m);
            sds.push(if degenerate { 0.0 } else { s });
            zero_variance.push(degenerate);
        }
        Ok(Standardization {
            means,
            sds,
            zero_variance,
        })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &x)| {
                if self.zero_variance[d] {
                    0.0
                } else {
                    (x - self.means[d]) / self.sds[d]
                }
            })
            .collect()
    }

    /// Maps standardized values back to native units (zero-variance columns
    /// return their constant).
    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &z)| {
                if self.zero_variance[d] {
                    self.means[d]
                } else {
                    z * self.sds[d] + self.means[d]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub schema: CovariateSchema,
    pub patients: Vec<PatientRecord>,
    /// Set once the covariates have been z-scored.
    pub standardization: Option<Standardization>,
}

impl Cohort {
    pub fn new(schema: CovariateSchema, patients: Vec<PatientRecord>) -> Result<Self> {
        for p in &patients {
            if p.covariates.0.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "patient {} has {} covariates, schema has {}",
                    p.id,
                    p.covariates.0.len(),
                    schema.len()
                )));
            }
        }
        Ok(Cohort {
            schema,
            patients,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.patients.iter().map(|p| p.covariates.0.clone()).collect()
    }

    pub fn covariate_column(&self, name: &str) -> Option<Vec<f64>> {
        let d = self.schema.index_of(name)?;
        Some(self.patients.iter().map(|p| p.covariates.0[d]).collect())
    }

    /// Deterministic textual digest of the cohort contents.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "patients: {}", self.patients.len());
        let poor = self.patients.iter().filter(|p| p.poor_outcome()).count();
        let _ = writeln!(s, "poor_outcome: {poor}");
        let doses: usize = self.patients.iter().map(|p| p.doses.len()).sum();
        let _ = writeln!(s, "doses: {doses}");
        let segs: usize = self.patients.iter().map(|p| p.ea_stream.len()).sum();
        let _ = writeln!(s, "segments: {segs}");
        let mut ea_sum = 0.0;
        for p in &self.patients {
            ea_sum += p.ea_stream.iter().sum::<f64>();
        }
        let _ = writeln!(s, "p_ea_sum: {ea_sum:.9}");
        for (d, spec) in self.schema.covariates.iter().enumerate() {
            let col: Vec<f64> = self.patients.iter().map(|p| p.covariates.0[d]).collect();
            let _ = writeln!(
                s,
                "{}: mean={:.9} sd={:.9}",
                spec.name,
                stats::mean(&col).unwrap_or(f64::NAN),
                stats::sample_sd(&col).unwrap_or(f64::NAN)
            );
        }
        s
    }
}

/// Why a row was left out of the analysis cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExclusionReason {
    MissingOutcome,
    MissingCovariate,
    OutcomeOutOfRange,
    InvalidWeight,
    NoEeg,
    ShortEeg,
    Artifact,
}

impl ExclusionReason {
    pub fn code(self) -> &'static str {
        match self {
            ExclusionReason::MissingOutcome => "missing_outcome",
            ExclusionReason::MissingCovariate => "missing_covariate",
            ExclusionReason::OutcomeOutOfRange => "mrs_out_of_range",
            ExclusionReason::InvalidWeight => "invalid_weight",
            ExclusionReason::NoEeg => "no_eeg",
            ExclusionReason::ShortEeg => "eeg<2h",
            ExclusionReason::Artifact => "artifact>30%",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub id: String,
    pub reason: ExclusionReason,
    /// Outcome of the excluded row when it was readable (used by the
    /// missingness comparison).
    pub outcome_mrs: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    pub exclusions: Vec<Exclusion>,
    pub input_rows: usize,
}

/// Maps mRS to the binary poor-outcome indicator (1 iff mRS >= 4).
pub fn dichotomize_outcome(mrs: u8) -> Result<u8> {
    if mrs > 6 {
        return Err(Error::Domain(format!("mRS {mrs} outside 0..=6")));
    }
    Ok(u8::from(mrs >= 4))
}

/// Z-scores every covariate (binary flags included) using statistics of the
/// cohort's own patients.
pub fn standardize(cohort: &Cohort) -> Result<Cohort> {
    let rows = cohort.covariate_rows();
    let st = Standardization::fit(&rows)?;
    for (d, z) in st.zero_variance.iter().enumerate() {
        if *z {
            log::warn!(
                "covariate `{}` has zero variance; standardized to zeros",
                cohort.schema.covariates[d].name
            );
        }
    }
    let patients = cohort
        .patients
        .iter()
        .map(|p| PatientRecord {
            covariates: CovariateVector(st.apply(&p.covariates.0)),
            ..p.clone()
        })
        .collect();
    Ok(Cohort {
        schema: cohort.schema.clone(),
        patients,
        standardization: Some(st),
    })
}

pub fn cohort_csv(dir: &Path) -> PathBuf {
    dir.join("cohort.csv")
}

pub fn doses_csv(dir: &Path) -> PathBuf {
    dir.join("doses.csv")
}

pub fn stream_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("streams").join(format!("{id}.csv"))
}

fn parse_cell(path: &Path, line: usize, column: &str, cell: &str) -> Result<Option<f64>> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::parse(path, line, format!("column `{column}`: `{t}` is not a number")))
}

/// Loads a cohort directory. Rows violating record invariants are excluded
/// with a reason code; malformed files and unknown drugs are errors.
pub fn load_cohort(dir: &Path, schema: &CovariateSchema, drugs: &DrugTable) -> Result<LoadedCohort> {
    let cpath = cohort_csv(dir);
    let dpath = doses_csv(dir);
    let missing: Vec<PathBuf> = [&cpath, &dpath]
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.to_path_buf())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }

    let doses = load_doses(&dpath, drugs)?;

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&cpath)
        .map_err(|e| Error::csv(&cpath, 1, e))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::csv(&cpath, 1, e))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column `{name}`", cpath.display())))
    };
    let id_col = col("id")?;
    let mrs_col = col("mrs")?;
    let weight_col = col("weight_kg")?;
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(&c.name))
        .collect::<Result<_>>()?;

    let mut patients = Vec::new();
    let mut exclusions = Vec::new();
    let mut input_rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(&cpath, line, e))?;
        input_rows += 1;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::parse(&cpath, line, "empty patient id"));
        }
        let mrs = parse_cell(&cpath, line, "mrs", rec.get(mrs_col).unwrap_or(""))?;
        let weight = parse_cell(&cpath, line, "weight_kg", rec.get(weight_col).unwrap_or(""))?;
        let mut covs = Vec::with_capacity(cov_cols.len());
        let mut missing_cov = false;
        for (c, spec) in cov_cols.iter().zip(&schema.covariates) {
            match parse_cell(&cpath, line, &spec.name, rec.get(*c).unwrap_or(""))? {
                Some(v) if v.is_finite() => covs.push(v),
                _ => missing_cov = true,
            }
        }

        let readable_mrs = mrs.filter(|m| m.fract() == 0.0 && (0.0..=6.0).contains(m)).map(|m| m as u8);
        let exclude = |reason| Exclusion {
            id: id.clone(),
            reason,
            outcome_mrs: readable_mrs,
        };
        let Some(mrs) = mrs else {
            exclusions.push(exclude(ExclusionReason::MissingOutcome));
            continue;
        };
        if missing_cov {
            exclusions.push(exclude(ExclusionReason::MissingCovariate));
            continue;
        }
        if readable_mrs.is_none() {
            exclusions.push(exclude(ExclusionReason::OutcomeOutOfRange));
            continue;
        }
        let _ = mrs;
        let weight = match weight {
            Some(w) if w > 0.0 && w.is_finite() => w,
            _ => {
                exclusions.push(exclude(ExclusionReason::InvalidWeight));
                continue;
            }
        };
        let spath = stream_path(dir, &id);
        if !spath.exists() {
            exclusions.push(exclude(ExclusionReason::NoEeg));
            continue;
        }
        let stream = EaProbabilityStream::read_csv(&spath)?;
        if stream.duration_hours() < MIN_EEG_HOURS {
            exclusions.push(exclude(ExclusionReason::ShortEeg));
            continue;
        }
        patients.push(PatientRecord {
            doses: doses.get(&id).cloned().unwrap_or_default(),
            id,
            covariates: CovariateVector(covs),
            ea_stream: stream,
            outcome_mrs: readable_mrs.unwrap_or(0),
            body_weight_kg: weight,
        });
    }
    Ok(LoadedCohort {
        cohort: Cohort::new(schema.clone(), patients)?,
        exclusions,
        input_rows,
    })
}

fn load_doses(path: &Path, drugs: &DrugTable) -> Result<BTreeMap<String, Vec<DoseRecord>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, 1, e))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::csv(path, 1, e))?
        .clone();
    let expected = ["patient_id", "drug", "start_hr", "duration_hr", "dose_mg_per_kg"];
    let mut idx = [0usize; 5];
    for (k, name) in expected.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column `{name}`", path.display())))?;
    }
    let mut out: BTreeMap<String, Vec<DoseRecord>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, line, e))?;
        let num = |k: usize| -> Result<f64> {
            parse_cell(path, line, expected[k], rec.get(idx[k]).unwrap_or(""))?
                .ok_or_else(|| Error::parse(path, line, format!("empty `{}`", expected[k])))
        };
        let drug = rec.get(idx[1]).unwrap_or("").to_string();
        if !drugs.contains(&drug) {
            return Err(Error::Schema(format!(
                "{}:{line}: unknown drug `{drug}`",
                path.display()
            )));
        }
        let dose = DoseRecord {
            drug,
            start_hr: num(2)?,
            duration_hr: num(3)?,
            amount_mg_per_kg: num(4)?,
        };
        dose.validate()
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.entry(rec.get(idx[0]).unwrap_or("").to_string())
            .or_default()
            .push(dose);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.start_hr.total_cmp(&b.start_hr));
    }
    Ok(out)
}

/// Writes a cohort directory readable by [`load_cohort`]. Numbers use the
/// shortest round-trip representation, so reloading reproduces the values.
pub fn write_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    fs::create_dir_all(dir.join("streams")).map_err(|e| Error::io(dir, e))?;
    let cpath = cohort_csv(dir);
    let mut w = csv::Writer::from_path(&cpath)?;
    let mut header = vec!["id".to_string(), "mrs".into(), "weight_kg".into()];
    header.extend(cohort.schema.names().map(str::to_string));
    w.write_record(&header)?;
    for p in &cohort.patients {
        let mut row = vec![p.id.clone(), p.outcome_mrs.to_string(), p.body_weight_kg.to_string()];
        row.extend(p.covariates.0.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&cpath, e))?;

    let dpath = doses_csv(dir);
    let mut w = csv::Writer::from_path(&dpath)?;
    w.write_record(["patient_id", "drug", "start_hr", "duration_hr", "dose_mg_per_kg"])?;
    for p in &cohort.patients {
        for d in &p.doses {
            w.write_record([
                p.id.clone(),
                d.drug.clone(),
                d.start_hr.to_string(),
                d.duration_hr.to_string(),
                d.amount_mg_per_kg.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&dpath, e))?;

    for p in &cohort.patients {
        p.ea_stream.write_csv(&stream_path(dir, &p.id))?;
    }
    Ok(())
}

pub fn write_exclusions(path: &Path, exclusions: &[Exclusion]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "reason"])?;
    for e in exclusions {
        w.write_record([e.id.as_str(), e.reason.code()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
