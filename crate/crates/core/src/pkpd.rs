//! One-compartment pharmacokinetics and Hill-type EA suppression.
//!
//! Each drug follows the linear ODE `dD/dt = -λ D + W(t)` with
//! `λ = ln 2 / half-life`, so concentrations are superpositions of closed-form
//! bolus and constant-infusion responses. The suppressed burden multiplier is
//!
//! ```text
//! Z = 1 - Σ_j D_j^N_j / (D_j^N_j + ED50_j^N_j)      clamped to [0, 1]
//! ```
//!
//! A Hill coefficient of zero marks a patient as unresponsive to the drug and
//! contributes no suppression.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::DoseRecord;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats;

/// Pharmacological constants for one drug.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrugInfo {
    pub half_life_hr: f64,
    /// Population-default ED50 (mg/kg) used when a patient's response is not
    /// identifiable.
    pub default_ed50: f64,
}

impl DrugInfo {
    pub fn decay_rate(&self) -> f64 {
        std::f64::consts::LN_2 / self.half_life_hr
    }
}

/// Drug name → constants. Names are lower-case generic names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DrugTable(pub BTreeMap<String, DrugInfo>);

impl Default for DrugTable {
    fn default() -> Self {
        // Half-lives are literature values; default ED50s are illustrative
        // magnitudes in mg/kg of body load, overridable in the config.
        let rows: [(&str, f64, f64); 10] = [
            ("propofol", 20.0 / 60.0, 0.5),
            ("midazolam", 2.5, 0.2),
            ("levetiracetam", 8.0, 15.0),
            ("lacosamide", 11.0, 4.0),
            ("phenobarbital", 79.0, 10.0),
            ("valproate", 16.0, 15.0),
            ("pentobarbital", 20.0, 5.0),
            ("lorazepam", 15.0, 0.05),
            ("diazepam", 43.0, 0.2),
            ("fosphenytoin", 15.0 / 60.0, 10.0),
        ];
        DrugTable(
            rows.iter()
                .map(|&(n, h, e)| {
                    (
                        n.to_string(),
                        DrugInfo {
                            half_life_hr: h,
                            default_ed50: e,
                        },
                    )
                })
                .collect(),
        )
    }
}

impl DrugTable {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.0.is_empty() {
            problems.push("drug table is empty".to_string());
        }
        for (name, d) in &self.0 {
            if !(d.half_life_hr > 0.0) || !d.half_life_hr.is_finite() {
                problems.push(format!("drugs.{name}.half_life_hr must be > 0"));
            }
            if !(d.default_ed50 > 0.0) || !d.default_ed50.is_finite() {
                problems.push(format!("drugs.{name}.default_ed50 must be > 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn contains(&self, drug: &str) -> bool {
        self.0.contains_key(drug)
    }

    pub fn get(&self, drug: &str) -> Result<&DrugInfo> {
        self.0
            .get(drug)
            .ok_or_else(|| Error::Schema(format!("unknown drug `{drug}`")))
    }

    /// Reads a TOML drug table (`[<drug>] half_life_hr = .., default_ed50 = ..`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: DrugTable = toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        table.validate()?;
        Ok(table)
    }
}

/// Closed-form concentration contributed by one dose at time `t` (hours).
fn dose_response(d: &DoseRecord, lambda: f64, t: f64) -> f64 {
    if t < d.start_hr {
        return 0.0;
    }
    let since = t - d.start_hr;
    if d.is_bolus() {
        return d.amount_mg_per_kg * (-lambda * since).exp();
    }
    let rate = d.amount_mg_per_kg / d.duration_hr;
    if since <= d.duration_hr {
        rate / lambda * -(-lambda * since).exp_m1()
    } else {
        rate / lambda * -(-lambda * d.duration_hr).exp_m1() * (-lambda * (since - d.duration_hr)).exp()
    }
}

/// Analytic per-drug body load (mg/kg) for a dosing history, optionally
/// sampled on a grid.
#[derive(Debug, Clone)]
pub struct ConcentrationSeries {
    doses: BTreeMap<String, (f64, Vec<DoseRecord>)>,
    pub grid: Vec<f64>,
    /// Values on `grid`, keyed by drug.
    pub values: BTreeMap<String, Vec<f64>>,
}

impl ConcentrationSeries {
    pub fn drugs(&self) -> impl Iterator<Item = &str> {
        self.doses.keys().map(String::as_str)
    }

    /// Concentration of `drug` at time `t` (hours); zero for drugs never given.
    pub fn at(&self, drug: &str, t: f64) -> f64 {
        match self.doses.get(drug) {
            Some((lambda, ds)) => ds.iter().map(|d| dose_response(d, *lambda, t)).sum::<f64>().max(0.0),
            None => 0.0,
        }
    }

    pub fn sample(&self, drug: &str, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.at(drug, t)).collect()
    }
}

/// Simulates one-compartment concentrations for `doses` and samples them on
/// `grid` (hours, strictly increasing).
pub fn simulate_concentration(doses: &[DoseRecord], table: &DrugTable, grid: &[f64]) -> Result<ConcentrationSeries> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("concentration grid must be strictly increasing".into()));
    }
    let mut by_drug: BTreeMap<String, (f64, Vec<DoseRecord>)> = BTreeMap::new();
    for d in doses {
        d.validate()?;
        let info = table.get(&d.drug)?;
        by_drug
            .entry(d.drug.clone())
            .or_insert_with(|| (info.decay_rate(), Vec::new()))
            .1
            .push(d.clone());
    }
    let mut series = ConcentrationSeries {
        doses: by_drug,
        grid: grid.to_vec(),
        values: BTreeMap::new(),
    };
    let names: Vec<String> = series.doses.keys().cloned().collect();
    for name in names {
        let v = series.sample(&name, grid);
        series.values.insert(name, v);
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStatus {
    Fitted,
    /// No concentration signal; population defaults substituted.
    Unidentifiable,
    /// Burden did not fall with concentration; Hill coefficient set to zero.
    Zeroed,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Fitted => "fitted",
            FitStatus::Unidentifiable => "unidentifiable",
            FitStatus::Zeroed => "zeroed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fitted" => Some(FitStatus::Fitted),
            "unidentifiable" => Some(FitStatus::Unidentifiable),
            "zeroed" => Some(FitStatus::Zeroed),
            _ => None,
        }
    }
}

/// Hill response parameters of one patient for one drug.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrugResponse {
    pub hill_n: f64,
    pub ed50: f64,
    pub status: FitStatus,
}

impl DrugResponse {
    pub fn population_default(info: &DrugInfo) -> Self {
        DrugResponse {
            hill_n: 1.0,
            ed50: info.default_ed50,
            status: FitStatus::Unidentifiable,
        }
    }
}

/// Per-patient PD parameters keyed by drug.
pub type PdParams = BTreeMap<String, DrugResponse>;

/// Fraction of burden removed by one drug at concentration `c`.
#[inline]
pub fn hill_fraction(c: f64, hill_n: f64, ed50: f64) -> f64 {
    if c <= 0.0 || hill_n <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (ed50 / c).powf(hill_n))
}

/// Unclamped burden multiplier `1 - Σ_j hill_fraction(D_j)`.
pub fn hill_suppression_raw<'a>(terms: impl IntoIterator<Item = (f64, &'a DrugResponse)>) -> f64 {
    1.0 - terms
        .into_iter()
        .map(|(c, r)| hill_fraction(c, r.hill_n, r.ed50))
        .sum::<f64>()
}

/// Burden multiplier `Z` in `[0, 1]` for concurrent drug concentrations.
pub fn hill_suppression<'a>(terms: impl IntoIterator<Item = (f64, &'a DrugResponse)>) -> f64 {
    hill_suppression_raw(terms).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdFitOptions {
    pub min_samples: usize,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for PdFitOptions {
    fn default() -> Self {
        PdFitOptions {
            min_samples: 10,
            max_iter: 500,
            tolerance: 1e-10,
        }
    }
}

const LN_N_MIN: f64 = -6.9; // N ≈ 1e-3
const LN_N_MAX: f64 = 3.9; // N ≈ 50

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let mx = stats::mean(x)?;
    let my = stats::mean(y)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Least-squares fit of per-drug Hill parameters to an observed burden
/// multiplier series.
///
/// `concentrations` holds one sampled series per drug, aligned with
/// `observed`. Drugs with no concentration signal keep population defaults;
/// drugs whose concentration is not negatively correlated with burden get a
/// zero Hill coefficient. The remaining drugs are fitted jointly over
/// `(ln ED50, ln N)` with a multi-start simplex search.
pub fn fit_pd_params(
    concentrations: &BTreeMap<String, Vec<f64>>,
    observed: &[f64],
    table: &DrugTable,
    opts: &PdFitOptions,
) -> Result<PdParams> {
    if observed.iter().any(|z| !(0.0..=1.0).contains(z)) {
        return Err(Error::Domain("observed burden values must lie in [0, 1]".into()));
    }
    let mut out = PdParams::new();
    let mut active: Vec<(&str, &[f64])> = Vec::new();
    for (drug, c) in concentrations {
        let info = table.get(drug)?;
        if c.len() != observed.len() {
            return Err(Error::Domain(format!(
                "concentration series for {drug} has {} samples, burden has {}",
                c.len(),
                observed.len()
            )));
        }
        if c.iter().all(|&v| v <= 0.0) {
            out.insert(drug.clone(), DrugResponse::population_default(info));
            continue;
        }
        if observed.len() < opts.min_samples {
            return Err(Error::InsufficientData(format!(
                "PD fit needs >= {} samples, got {}",
                opts.min_samples,
                observed.len()
            )));
        }
        match pearson(c, observed) {
            Some(r) if r < 0.0 => active.push((drug.as_str(), c.as_slice())),
            _ => {
                out.insert(
                    drug.clone(),
                    DrugResponse {
                        hill_n: 0.0,
                        ed50: info.default_ed50,
                        status: FitStatus::Zeroed,
                    },
                );
            }
        }
    }
    if active.is_empty() {
        return Ok(out);
    }

    // Per-drug bounds on ln ED50 relative to the observed concentration range.
    let bounds: Vec<(f64, f64)> = active
        .iter()
        .map(|(_, c)| {
            let cmax = c.iter().cloned().fold(0.0, f64::max);
            ((cmax * 1e-4).ln(), (cmax * 1e4).ln())
        })
        .collect();
    let project = |theta: &[f64]| -> Vec<f64> {
        theta
            .chunks(2)
            .zip(&bounds)
            .flat_map(|(p, (lo, hi))| [p[0].clamp(*lo, *hi), p[1].clamp(LN_N_MIN, LN_N_MAX)])
            .collect()
    };
    let sse = |theta: &[f64]| -> f64 {
        let th = project(theta);
        // soft wall keeps the simplex near the feasible box
        let wall: f64 = theta.iter().zip(&th).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut s = 0.0;
        for (t, z) in observed.iter().enumerate() {
            let mut supp = 0.0;
            for (k, (_, c)) in active.iter().enumerate() {
                supp += hill_fraction(c[t], th[2 * k + 1].exp(), th[2 * k].exp());
            }
            let r = (1.0 - supp) - z;
            s += r * r;
        }
        s + wall
    };

    let nm = NelderMeadOptions {
        max_iter: opts.max_iter,
        f_tol: opts.tolerance * 1e-2,
        x_tol: 1e-10,
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for ed50_scale in [1.0, 0.3, 3.0] {
        for n0 in [1.0f64, 3.0] {
            let start: Vec<f64> = active
                .iter()
                .flat_map(|(_, c)| {
                    let pos: Vec<f64> = c.iter().cloned().filter(|v| *v > 0.0).collect();
                    let med = stats::median(&pos).unwrap_or(1.0);
                    [(med * ed50_scale).ln(), n0.ln()]
                })
                .collect();
            let m = nelder_mead(sse, &start, 0.5, nm);
            if best.as_ref().map_or(true, |(_, f)| m.f < *f) {
                best = Some((m.x, m.f));
            }
        }
    }
    let (mut x, mut f) = best.expect("at least one start");
    // Restart from the incumbent until the objective stops improving.
    for _ in 0..20 {
        let m = nelder_mead(sse, &x, 0.05, nm);
        let improved = f - m.f;
        if m.f < f {
            x = m.x;
            f = m.f;
        }
        if improved < opts.tolerance {
            break;
        }
    }
    let x = project(&x);
    for (k, (drug, _)) in active.iter().enumerate() {
        out.insert(
            drug.to_string(),
            DrugResponse {
                hill_n: x[2 * k + 1].exp(),
                ed50: x[2 * k].exp(),
                status: FitStatus::Fitted,
            },
        );
    }
    Ok(out)
}

/// Median ED50 over patients whose fit for `drug` succeeded.
pub fn population_median_ed50(fits: &[PdParams], drug: &str) -> Result<f64> {
    let vals: Vec<f64> = fits
        .iter()
        .filter_map(|p| p.get(drug))
        .filter(|r| r.status == FitStatus::Fitted)
        .map(|r| r.ed50)
        .collect();
    stats::median(&vals).ok_or_else(|| {
        Error::InsufficientData(format!(
            "no fitted ED50 for {drug}; use the configured default_ed50"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(n: f64, ed50: f64) -> DrugResponse {
        DrugResponse {
            hill_n: n,
            ed50,
            status: FitStatus::Fitted,
        }
    }

    #[test]
    fn default_table_half_lives() {
        let t = DrugTable::default();
        assert_eq!(t.0.len(), 10);
        assert!((t.get("propofol").unwrap().half_life_hr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.get("phenobarbital").unwrap().half_life_hr, 79.0);
        assert!((t.get("fosphenytoin").unwrap().half_life_hr - 0.25).abs() < 1e-15);
        assert_eq!(t.get("diazepam").unwrap().half_life_hr, 43.0);
        t.validate().unwrap();
    }

    #[test]
    fn no_doses_is_zero() {
        let s = simulate_concentration(&[], &DrugTable::default(), &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.at("propofol", 1.0), 0.0);
        assert!(s.values.is_empty());
    }

    #[test]
    fn propofol_bolus_halves_after_twenty_minutes() {
        let doses = [DoseRecord::bolus("propofol", 0.0, 1.0)];
        let s = simulate_concentration(&doses, &DrugTable::default(), &[0.0, 1.0 / 3.0]).unwrap();
        let v = &s.values["propofol"];
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn infusion_plateau_matches_rk4() {
        let table = DrugTable::default();
        let lambda = table.get("levetiracetam").unwrap().decay_rate();
        let w = 2.0;
        let hours = 200.0;
        let doses = [DoseRecord::infusion("levetiracetam", 0.0, hours, w * hours)];
        let s = simulate_concentration(&doses, &table, &[hours]).unwrap();
        // RK4 oracle with one-second steps
        let h = 1.0 / 3600.0;
        let mut d = 0.0f64;
        let rhs = |d: f64| -lambda * d + w;
        for _ in 0..(hours * 3600.0) as usize {
            let k1 = rhs(d);
            let k2 = rhs(d + 0.5 * h * k1);
            let k3 = rhs(d + 0.5 * h * k2);
            let k4 = rhs(d + h * k3);
            d += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let analytic = s.values["levetiracetam"][0];
        assert!(((analytic - d) / d).abs() < 1e-6);
        assert!(((analytic - w / lambda) / (w / lambda)).abs() < 1e-6);
    }

    #[test]
    fn superposition_and_grid_independence() {
        let table = DrugTable::default();
        let a = [DoseRecord::bolus("lacosamide", 1.0, 3.0), DoseRecord::infusion("midazolam", 0.5, 2.0, 1.0)];
        let b = [DoseRecord::infusion("lacosamide", 2.0, 5.0, 10.0)];
        let both: Vec<DoseRecord> = a.iter().chain(b.iter()).cloned().collect();
        let coarse: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let fine: Vec<f64> = (0..241).map(|i| i as f64 * 0.1).collect();
        let sa = simulate_concentration(&a, &table, &coarse).unwrap();
        let sb = simulate_concentration(&b, &table, &coarse).unwrap();
        let sab = simulate_concentration(&both, &table, &coarse).unwrap();
        for drug in ["lacosamide", "midazolam"] {
            for &t in &coarse {
                let sum = sa.at(drug, t) + sb.at(drug, t);
                assert!((sab.at(drug, t) - sum).abs() <= 1e-10 * sum.abs().max(1.0));
            }
        }
        let sf = simulate_concentration(&both, &table, &fine).unwrap();
        for (i, &t) in coarse.iter().enumerate() {
            assert_eq!(sab.values["lacosamide"][i], sf.values["lacosamide"][i * 10], "t={t}");
        }
    }

    #[test]
    fn negative_dose_rejected() {
        let d = [DoseRecord::bolus("propofol", 0.0, -1.0)];
        assert!(matches!(
            simulate_concentration(&d, &DrugTable::default(), &[0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn hill_examples() {
        let r = resp(2.0, 1.5);
        assert_eq!(hill_suppression([(0.0, &r)]), 1.0);
        assert!((hill_suppression([(1.5, &r)]) - 0.5).abs() < 1e-15);
        let r2 = resp(1.0, 3.0);
        assert!(hill_suppression_raw([(1.5, &r), (3.0, &r2)]).abs() < 1e-15);
        assert_eq!(hill_suppression([(1.5, &r), (3.0, &r2)]), 0.0);
        let many = [resp(1.0, 1.0), resp(1.0, 1.0), resp(1.0, 1.0)];
        assert!(hill_suppression_raw(many.iter().map(|r| (5.0, r))) < 0.0);
        assert_eq!(hill_suppression(many.iter().map(|r| (5.0, r))), 0.0);
    }

    fn grid_and_profile() -> (Vec<f64>, Vec<f64>) {
        let table = DrugTable::default();
        let grid: Vec<f64> = (0..144).map(|i| (i as f64 + 0.5) / 6.0).collect();
        let doses = [
            DoseRecord::bolus("levetiracetam", 2.0, 3.0),
            DoseRecord::bolus("levetiracetam", 10.0, 2.0),
        ];
        let s = simulate_concentration(&doses, &table, &grid).unwrap();
        (grid, s.values["levetiracetam"].clone())
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let (_, c) = grid_and_profile();
        let truth = resp(2.0, 1.5);
        let z: Vec<f64> = c.iter().map(|&v| hill_suppression([(v, &truth)])).collect();
        let conc = BTreeMap::from([("levetiracetam".to_string(), c)]);
        let fit = fit_pd_params(&conc, &z, &DrugTable::default(), &PdFitOptions::default()).unwrap();
        let f = fit["levetiracetam"];
        assert_eq!(f.status, FitStatus::Fitted);
        assert!((f.hill_n - 2.0).abs() / 2.0 < 1e-3, "{f:?}");
        assert!((f.ed50 - 1.5).abs() / 1.5 < 1e-3, "{f:?}");
    }

    #[test]
    fn positive_correlation_zeroes_hill() {
        let (_, c) = grid_and_profile();
        let cmax = c.iter().cloned().fold(0.0, f64::max);
        let z: Vec<f64> = c.iter().map(|v| 0.2 + 0.7 * v / cmax).collect();
        let conc = BTreeMap::from([("levetiracetam".to_string(), c)]);
        let fit = fit_pd_params(&conc, &z, &DrugTable::default(), &PdFitOptions::default()).unwrap();
        assert_eq!(fit["levetiracetam"].hill_n, 0.0);
        assert_eq!(fit["levetiracetam"].status, FitStatus::Zeroed);
    }

    #[test]
    fn never_administered_is_unidentifiable() {
        let conc = BTreeMap::from([("lacosamide".to_string(), vec![0.0; 20])]);
        let fit = fit_pd_params(&conc, &[0.5; 20], &DrugTable::default(), &PdFitOptions::default()).unwrap();
        let f = fit["lacosamide"];
        assert_eq!(f.status, FitStatus::Unidentifiable);
        assert_eq!(f.hill_n, 1.0);
        assert_eq!(f.ed50, 4.0);
    }

    fn fitted(ed50: f64) -> PdParams {
        BTreeMap::from([("propofol".to_string(), resp(1.0, ed50))])
    }

    #[test]
    fn median_conventions() {
        let fits: Vec<PdParams> = [1.0, 2.0, 3.0].iter().map(|&e| fitted(e)).collect();
        assert_eq!(population_median_ed50(&fits, "propofol").unwrap(), 2.0);
        let fits: Vec<PdParams> = [1.0, 3.0].iter().map(|&e| fitted(e)).collect();
        assert_eq!(population_median_ed50(&fits, "propofol").unwrap(), 2.0);
        assert!(population_median_ed50(&fits, "midazolam").is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = stats::task_rng(3, "median", 0);
        let vals: Vec<f64> = (0..101).map(|_| rng.gen_range(0.1..10.0)).collect();
        let mut fits: Vec<PdParams> = vals.iter().map(|&e| fitted(e)).collect();
        // defaults are ignored
        fits.push(BTreeMap::from([(
            "propofol".to_string(),
            DrugResponse { hill_n: 1.0, ed50: 1e6, status: FitStatus::Unidentifiable },
        )]));
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(population_median_ed50(&fits, "propofol").unwrap(), sorted[50]);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn suppression_bounded_and_monotone(
            c1 in 0.0f64..20.0, c2 in 0.0f64..20.0, dc in 0.0f64..5.0,
            n1 in 0.0f64..5.0, n2 in 0.0f64..5.0, e1 in 0.01f64..10.0, e2 in 0.01f64..10.0,
        ) {
            let (r1, r2) = (resp(n1, e1), resp(n2, e2));
            let z = hill_suppression([(c1, &r1), (c2, &r2)]);
            prop_assert!((0.0..=1.0).contains(&z));
            let z_more = hill_suppression([(c1 + dc, &r1), (c2, &r2)]);
            prop_assert!(z_more <= z + 1e-12);
        }
    }
}
