//! CSV tables exchanged between stages.

use std::collections::BTreeMap;
use std::path::Path;

use crate::burden::BinScheme;
use crate::error::{Error, Result};
use crate::matching::Estimates;
use crate::pkpd::{DrugResponse, DrugTable, FitStatus, PdParams};

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `"<level label>/untreated"` or `"<level label>/treated"`.
pub(crate) fn arm_name(arm: usize, bins: &BinScheme) -> String {
    let t = if arm % 2 == 1 { "treated" } else { "untreated" };
    format!("{}/{t}", bins.label(arm / 2))
}

fn reader(path: &Path) -> Result<(csv::Reader<std::fs::File>, csv::StringRecord)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, 1, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, 1, e))?.clone();
    Ok((rdr, headers))
}

fn columns(path: &Path, headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Schema(format!("{}: missing column `{n}`", path.display())))
        })
        .collect()
}

fn number(path: &Path, line: usize, name: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("column `{name}`: `{cell}` is not a number")))
}

/// `patient_id, drug, hill_n, ed50, fit_status`, sorted by patient then drug.
pub fn write_pd_csv(path: &Path, pd: &BTreeMap<String, PdParams>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "drug", "hill_n", "ed50", "fit_status"])?;
    for (id, params) in pd {
        for (drug, r) in params {
            w.write_record([
                id.as_str(),
                drug.as_str(),
                &r.hill_n.to_string(),
                &r.ed50.to_string(),
                r.status.as_str(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pd_csv(path: &Path, drugs: &DrugTable) -> Result<BTreeMap<String, PdParams>> {
    let (mut rdr, headers) = reader(path)?;
    let names = ["patient_id", "drug", "hill_n", "ed50", "fit_status"];
    let c = columns(path, &headers, &names)?;
    let mut out: BTreeMap<String, PdParams> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, line, e))?;
        let cell = |k: usize| rec.get(c[k]).unwrap_or("");
        let drug = cell(1).to_string();
        drugs.get(&drug)?;
        let status = FitStatus::parse(cell(4))
            .ok_or_else(|| Error::parse(path, line, format!("unknown fit status `{}`", cell(4))))?;
        let r = DrugResponse {
            hill_n: number(path, line, names[2], cell(2))?,
            ed50: number(path, line, names[3], cell(3))?,
            status,
        };
        if !(r.hill_n >= 0.0 && r.ed50 > 0.0) {
            return Err(Error::parse(path, line, "hill_n must be >= 0 and ed50 > 0"));
        }
        out.entry(cell(0).to_string()).or_default().insert(drug, r);
    }
    Ok(out)
}

/// Burden summary and treatment flag of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct BurdenRow {
    pub e_max: f64,
    pub e_mean: f64,
    pub e_median: Option<f64>,
    pub treated: bool,
    pub artifact_excluded: bool,
}

const BURDEN_COLUMNS: [&str; 8] = [
    "patient_id",
    "e_max",
    "e_mean",
    "e_max_bin",
    "e_mean_bin",
    "treated",
    "excluded_artifact_flag",
    "e_median",
];

/// Burden export with level labels; `e_median` is informational only.
pub fn write_burden_csv(
    path: &Path,
    rows: &BTreeMap<String, BurdenRow>,
    max_bins: &BinScheme,
    mean_bins: &BinScheme,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BURDEN_COLUMNS)?;
    for (id, r) in rows {
        w.write_record([
            id.clone(),
            r.e_max.to_string(),
            r.e_mean.to_string(),
            max_bins.label(max_bins.level(r.e_max)),
            mean_bins.label(mean_bins.level(r.e_mean)),
            u8::from(r.treated).to_string(),
            u8::from(r.artifact_excluded).to_string(),
            fmt_opt(r.e_median),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a burden export; level labels are recomputed from the values by
/// the consumer and not read back.
pub fn read_burden_csv(path: &Path) -> Result<BTreeMap<String, BurdenRow>> {
    let (mut rdr, headers) = reader(path)?;
    let c = columns(path, &headers, &BURDEN_COLUMNS[..7])?;
    let median_col = headers.iter().position(|h| h == "e_median");
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, line, e))?;
        let cell = |k: usize| rec.get(c[k]).unwrap_or("");
        let flag = |k: usize| -> Result<bool> {
            match cell(k) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::parse(path, line, format!("`{}` must be 0 or 1, got `{other}`", BURDEN_COLUMNS[k]))),
            }
        };
        let e_median = match median_col.and_then(|k| rec.get(k)) {
            None | Some("NA") | Some("") => None,
            Some(v) => Some(number(path, line, "e_median", v)?),
        };
        let row = BurdenRow {
            e_max: number(path, line, "e_max", cell(1))?,
            e_mean: number(path, line, "e_mean", cell(2))?,
            e_median,
            treated: flag(5)?,
            artifact_excluded: flag(6)?,
        };
        if !(0.0..=1.0).contains(&row.e_max) || !(0.0..=row.e_max).contains(&row.e_mean) {
            return Err(Error::parse(path, line, "need 0 <= e_mean <= e_max <= 1"));
        }
        out.insert(cell(0).to_string(), row);
    }
    Ok(out)
}

/// `drug, median_ed50`.
pub(crate) fn write_medians_csv(path: &Path, medians: &BTreeMap<String, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["drug", "median_ed50"])?;
    for (d, m) in medians {
        w.write_record([d.clone(), m.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `arm_burden, arm_treated, n`.
pub(crate) fn write_arm_counts_csv(path: &Path, arms: &[usize], bins: &BinScheme) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm_burden", "arm_treated", "n"])?;
    for a in 0..2 * bins.n_levels() {
        let n = arms.iter().filter(|&&x| x == a).count();
        w.write_record([bins.label(a / 2), (a % 2).to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `high_burden, high_treated, low_burden, low_treated, estimate, ci_low, ci_high`.
pub(crate) fn write_contrasts_csv(path: &Path, est: &Estimates, bins: &BinScheme) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "high_burden",
        "high_treated",
        "low_burden",
        "low_treated",
        "estimate",
        "ci_low",
        "ci_high",
    ])?;
    for c in &est.contrasts {
        w.write_record([
            bins.label(c.high / 2),
            (c.high % 2).to_string(),
            bins.label(c.low / 2),
            (c.low % 2).to_string(),
            fmt_opt(c.estimate),
            fmt_opt(c.ci.map(|v| v.0)),
            fmt_opt(c.ci.map(|v| v.1)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
