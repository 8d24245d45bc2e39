//! Baseline estimators, unobserved-confounding debiasing, bin-definition
//! sensitivity and the Mann-Whitney missingness check.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analysis::arm_index;
use crate::burden::BinScheme;
use crate::error::{Error, Result};
use crate::logistic::{fit_logistic, fit_multinomial, MultinomialFit};
use crate::matching::{replicate_split, Estimates, MatchingRun};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// ψ used when a single debiased run is requested.
    pub psi: f64,
    pub psi_grid: Vec<f64>,
    /// Use `ψ·ln(ln(1 + e))` instead of `ψ·ln(1 + e)`; only defined for e > 0.
    pub double_log: bool,
    pub rho1_grid: Vec<f64>,
    pub rho2_grid: Vec<f64>,
    /// Cuts of the fine E_max partition.
    pub fine_cuts: Vec<f64>,
    /// Fine bins with fewer units are merged into a neighbour.
    pub min_bin_size: usize,
    /// Bootstrap draws per ψ value.
    pub n_boot: usize,
}

/// `lo, lo + step, …, hi` with values rounded to hundredths.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + step * i as f64) * 100.0).round() / 100.0).collect()
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            psi: 0.0,
            psi_grid: grid(-1.0, 1.0, 0.1),
            double_log: false,
            rho1_grid: grid(0.1, 0.4, 0.05),
            rho2_grid: grid(0.6, 0.9, 0.05),
            fine_cuts: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            min_bin_size: 20,
            n_boot: 200,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !self.psi.is_finite() || self.psi_grid.iter().any(|p| !p.is_finite()) {
            bad.push("sensitivity.psi and sensitivity.psi_grid must be finite".to_string());
        }
        if self.rho1_grid.iter().any(|r| !(*r > 0.0 && *r < 0.5)) {
            bad.push("sensitivity.rho1_grid values must lie in (0, 0.5)".into());
        }
        if self.rho2_grid.iter().any(|r| !(*r > 0.5 && *r < 1.0)) {
            bad.push("sensitivity.rho2_grid values must lie in (0.5, 1)".into());
        }
        if let Err(Error::Config(v)) = BinScheme::new(self.fine_cuts.clone()) {
            bad.extend(v.into_iter().map(|m| format!("sensitivity.fine_cuts: {m}")));
        }
        if self.n_boot < 2 {
            bad.push("sensitivity.n_boot must be >= 2".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Replicate mean and spread of an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Spread {
    pub mean: Option<f64>,
    /// Sample SD over replicates; `None` with fewer than two replicates.
    pub sd: Option<f64>,
    pub replicates: usize,
}

/// Arm-stratified outcome means on the retained part of each replicate split.
///
/// With `train_fraction = 1` and one replicate this is the plain arm mean.
pub fn naive_average(
    y: &[f64],
    arms: &[usize],
    n_arms: usize,
    replicates: usize,
    train_fraction: f64,
    seed: u64,
) -> Vec<Spread> {
    let mut per_arm: Vec<Vec<f64>> = vec![Vec::new(); n_arms];
    for r in 0..replicates {
        let (kept, _) = replicate_split(y.len(), train_fraction, seed, r);
        let mut sum = vec![0.0; n_arms];
        let mut cnt = vec![0usize; n_arms];
        for &i in &kept {
            sum[arms[i]] += y[i];
            cnt[arms[i]] += 1;
        }
        for a in 0..n_arms {
            if cnt[a] > 0 {
                per_arm[a].push(sum[a] / cnt[a] as f64);
            } else if arms.contains(&a) {
                warn!("arm {a} is empty in naive replicate {r}; replicate skipped for this arm");
            }
        }
    }
    per_arm
        .into_iter()
        .map(|v| Spread {
            mean: stats::mean(&v),
            sd: stats::sample_sd(&v),
            replicates: v.len(),
        })
        .collect()
}

/// Regression baseline: per-arm APO by g-computation from a logistic model
/// of the outcome on covariates and arm indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionApo {
    pub apo: Vec<Option<f64>>,
    pub separated: bool,
    pub iterations: usize,
}

fn one_hot_row(x: &[f64], keep: &[usize], arm: usize, present: &[usize]) -> Vec<f64> {
    let mut row: Vec<f64> = keep.iter().map(|&d| x[d]).collect();
    // first present arm is the reference level
    row.extend(present[1..].iter().map(|&a| f64::from(u8::from(a == arm))));
    row
}

fn varying_columns(x: &[Vec<f64>]) -> Vec<usize> {
    let p = x.first().map_or(0, Vec::len);
    (0..p)
        .filter(|&d| x.iter().any(|r| r[d] != x[0][d]))
        .collect()
}

/// Fits `logit P(Y=1) = β0 + β·x + γ_arm` and averages predictions over all
/// units with every unit's arm set to each present arm in turn.
pub fn outcome_regression(x: &[Vec<f64>], y: &[f64], arms: &[usize], n_arms: usize) -> Result<RegressionApo> {
    if x.len() != y.len() || arms.len() != y.len() {
        return Err(Error::Schema("regression inputs have different lengths".into()));
    }
    let keep = varying_columns(x);
    let present: Vec<usize> = (0..n_arms).filter(|a| arms.contains(a)).collect();
    if present.is_empty() {
        return Err(Error::InsufficientData("outcome regression on zero units".into()));
    }
    let rows: Vec<Vec<f64>> = x
        .iter()
        .zip(arms)
        .map(|(r, &a)| one_hot_row(r, &keep, a, &present))
        .collect();
    let fit = fit_logistic(&rows, y)?;
    let apo = (0..n_arms)
        .map(|a| {
            present.contains(&a).then(|| {
                let s: f64 = x.iter().map(|r| fit.predict(&one_hot_row(r, &keep, a, &present))).sum();
                s / x.len() as f64
            })
        })
        .collect();
    Ok(RegressionApo {
        apo,
        separated: fit.separated,
        iterations: fit.iterations,
    })
}

/// Multinomial propensity of every unit for every class, with classes that
/// never occur given probability 0.
pub fn class_propensities(x: &[Vec<f64>], class: &[usize], n_classes: usize) -> Result<Vec<Vec<f64>>> {
    let keep = varying_columns(x);
    let present: Vec<usize> = (0..n_classes).filter(|c| class.contains(c)).collect();
    if present.is_empty() {
        return Err(Error::InsufficientData("propensity model on zero units".into()));
    }
    let slot: Vec<Option<usize>> = (0..n_classes).map(|c| present.iter().position(|&p| p == c)).collect();
    let rows: Vec<Vec<f64>> = x.iter().map(|r| keep.iter().map(|&d| r[d]).collect()).collect();
    let compact: Vec<usize> = class.iter().map(|&c| slot[c].expect("present")).collect();
    let fit: MultinomialFit = fit_multinomial(&rows, &compact, present.len())?;
    Ok(rows
        .iter()
        .map(|r| {
            let p = fit.predict(r);
            (0..n_classes).map(|c| slot[c].map_or(0.0, |s| p[s])).collect()
        })
        .collect())
}

/// Indices of the units in `pool` whose score is nearest to `target`,
/// all of them when tied. `sorted` holds `(score, unit)` ascending.
pub fn nearest_on_score(sorted: &[(f64, usize)], target: f64) -> Vec<usize> {
    if sorted.is_empty() {
        return Vec::new();
    }
    let pos = sorted.partition_point(|&(s, _)| s < target);
    let mut best = f64::INFINITY;
    for j in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
        if let Some(&(s, _)) = sorted.get(j) {
            best = best.min((s - target).abs());
        }
    }
    let mut out = Vec::new();
    let mut j = pos;
    while j > 0 && (sorted[j - 1].0 - target).abs() == best {
        j -= 1;
        out.push(sorted[j].1);
    }
    let mut j = pos;
    while j < sorted.len() && (sorted[j].0 - target).abs() == best {
        out.push(sorted[j].1);
        j += 1;
    }
    out.sort_unstable();
    out
}

/// Propensity-score baseline: each unit's potential outcome in arm `a` is
/// its own outcome when it is in `a`, otherwise the mean outcome of its
/// nearest arm-`a` units on `P(arm = a | x)` (ties included).
pub fn propensity_match(x: &[Vec<f64>], y: &[f64], arms: &[usize], n_arms: usize) -> Result<Vec<Option<f64>>> {
    if x.len() != y.len() || arms.len() != y.len() {
        return Err(Error::Schema("propensity inputs have different lengths".into()));
    }
    let e = class_propensities(x, arms, n_arms)?;
    Ok((0..n_arms)
        .map(|a| {
            let mut pool: Vec<(f64, usize)> = (0..y.len()).filter(|&i| arms[i] == a).map(|i| (e[i][a], i)).collect();
            if pool.is_empty() {
                return None;
            }
            pool.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
            let total: f64 = (0..y.len())
                .map(|i| {
                    if arms[i] == a {
                        y[i]
                    } else {
                        let nn = nearest_on_score(&pool, e[i][a]);
                        nn.iter().map(|&j| y[j]).sum::<f64>() / nn.len() as f64
                    }
                })
                .sum();
            Some(total / y.len() as f64)
        })
        .collect())
}

/// Selection-bias function `q(e)`.
pub fn selection_bias(psi: f64, e: f64, double_log: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::Domain(format!("burden {e} outside [0, 1]")));
    }
    if double_log {
        if e <= 0.0 {
            return Err(Error::Domain("the double-log selection bias needs e > 0".into()));
        }
        Ok(psi * (1.0 + e).ln().ln())
    } else {
        Ok(psi * (1.0 + e).ln())
    }
}

/// `Y − q(E_max)·(1 − P(own E_max level | X))` per unit; `own_prob[i]` is
/// the propensity of unit `i`'s observed level.
pub fn debias_outcomes(y: &[f64], e_max: &[f64], own_prob: &[f64], psi: f64, double_log: bool) -> Result<Vec<f64>> {
    if e_max.len() != y.len() || own_prob.len() != y.len() {
        return Err(Error::Schema("debiasing inputs have different lengths".into()));
    }
    if !psi.is_finite() {
        return Err(Error::Domain("psi must be finite".into()));
    }
    if own_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain("propensities must lie in [0, 1]".into()));
    }
    if psi == 0.0 {
        return Ok(y.to_vec());
    }
    y.iter()
        .zip(e_max.iter().zip(own_prob))
        .map(|(&yi, (&e, &p))| Ok(yi - selection_bias(psi, e, double_log)? * (1.0 - p)))
        .collect()
}

/// Matched estimates on debiased outcomes for one ψ.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiRow {
    pub psi: f64,
    pub estimates: Estimates,
}

impl PsiRow {
    /// Whether the bootstrap interval of contrast `j` excludes zero.
    pub fn significant(&self, j: usize) -> Option<bool> {
        self.estimates.contrasts.get(j)?.ci.map(|(lo, hi)| lo > 0.0 || hi < 0.0)
    }
}

/// Re-estimates the matched APOs with frozen groups on outcomes debiased at
/// every ψ of the grid.
pub fn psi_sweep(
    run: &MatchingRun,
    y: &[f64],
    e_max: &[f64],
    own_prob: &[f64],
    psi_grid: &[f64],
    double_log: bool,
    contrasts: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<PsiRow>> {
    psi_grid
        .iter()
        .map(|&psi| {
            let yd = debias_outcomes(y, e_max, own_prob, psi, double_log)?;
            Ok(PsiRow {
                psi,
                estimates: run.estimate(&yd, contrasts, seed)?,
            })
        })
        .collect()
}

/// Contiguous ψ interval around 0 over which contrast `j` stays significant.
pub fn significant_psi_range(rows: &[PsiRow], j: usize) -> Option<(f64, f64)> {
    let mut sorted: Vec<&PsiRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.psi.total_cmp(&b.psi));
    let zero = sorted.iter().position(|r| r.psi == 0.0)?;
    if sorted[zero].significant(j) != Some(true) {
        return None;
    }
    let mut lo = zero;
    while lo > 0 && sorted[lo - 1].significant(j) == Some(true) {
        lo -= 1;
    }
    let mut hi = zero;
    while hi + 1 < sorted.len() && sorted[hi + 1].significant(j) == Some(true) {
        hi += 1;
    }
    Some((sorted[lo].psi, sorted[hi].psi))
}

/// Arms `2·level + treated` under `bins`.
pub fn arms_for(e_max: &[f64], treated: &[bool], bins: &BinScheme) -> Vec<usize> {
    e_max
        .iter()
        .zip(treated)
        .map(|(&e, &t)| arm_index(bins.level(e), t))
        .collect()
}

/// One grid point of the quantization sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub rho1: f64,
    pub rho2: f64,
    /// Per arm; `None` when the arm is empty or unestimable at this point.
    pub apo: Vec<Option<f64>>,
}

impl SurfacePoint {
    /// True when every untreated arm has an estimate.
    pub fn available(&self) -> bool {
        self.apo.iter().step_by(2).all(Option::is_some)
    }
}

/// Re-runs the matched estimator with frozen metrics for every
/// `E_max ∈ {[0, ρ1), [ρ1, 0.5), [0.5, ρ2), [ρ2, 1]}` partition.
pub fn quantization_sweep(
    run: &MatchingRun,
    y: &[f64],
    e_max: &[f64],
    treated: &[bool],
    rho1_grid: &[f64],
    rho2_grid: &[f64],
) -> Result<Vec<SurfacePoint>> {
    let points: Vec<(f64, f64)> = rho1_grid
        .iter()
        .flat_map(|&r1| rho2_grid.iter().map(move |&r2| (r1, r2)))
        .collect();
    points
        .into_par_iter()
        .map(|(rho1, rho2)| {
            let bins = BinScheme::new(vec![rho1, 0.5, rho2])?;
            let arms = arms_for(e_max, treated, &bins);
            let apo = match run.with_arms(&arms, 8)?.apo(y) {
                Ok(a) => a,
                Err(e) => {
                    warn!("quantization point ({rho1}, {rho2}) unavailable: {e}");
                    vec![None; 8]
                }
            };
            Ok(SurfacePoint { rho1, rho2, apo })
        })
        .collect()
}

/// Drops cuts until every level of `cuts` holds at least `min_size` of the
/// values; returns the kept cuts and the removed ones in removal order.
pub fn merge_sparse_bins(values: &[f64], cuts: &[f64], min_size: usize) -> Result<(BinScheme, Vec<f64>)> {
    let mut cuts = cuts.to_vec();
    let mut removed = Vec::new();
    loop {
        let bins = BinScheme::new(cuts.clone())?;
        let mut counts = vec![0usize; bins.n_levels()];
        for &v in values {
            counts[bins.level(v)] += 1;
        }
        if cuts.is_empty() {
            return Ok((bins, removed));
        }
        let Some((l, _)) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < min_size)
            .min_by_key(|&(l, &c)| (c, l))
        else {
            return Ok((bins, removed));
        };
        // merge with the smaller neighbour; the lower one wins ties
        let cut = if l == 0 {
            0
        } else if l == counts.len() - 1 || counts[l - 1] <= counts[l + 1] {
            l - 1
        } else {
            l
        };
        removed.push(cuts.remove(cut));
    }
}

/// Estimates on the fine E_max partition with widened-interval flags.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularResult {
    pub bins: BinScheme,
    pub merged_cuts: Vec<f64>,
    pub estimates: Estimates,
    /// Per fine untreated level: whether its CI is wider than that of the
    /// coarse untreated level containing it.
    pub widened: Vec<Option<bool>>,
}

/// Re-runs the matched estimator with frozen metrics on a finer partition.
/// `coarse` are the base-run estimates under `coarse_bins`.
pub fn granular_bins(
    run: &MatchingRun,
    y: &[f64],
    e_max: &[f64],
    treated: &[bool],
    fine_cuts: &[f64],
    min_bin_size: usize,
    coarse: &Estimates,
    coarse_bins: &BinScheme,
    seed: u64,
) -> Result<GranularResult> {
    let (bins, merged_cuts) = merge_sparse_bins(e_max, fine_cuts, min_bin_size)?;
    for c in &merged_cuts {
        warn!("fine E_max cut {c} removed: a neighbouring level had fewer than {min_bin_size} units");
    }
    let arms = arms_for(e_max, treated, &bins);
    let fine_run = run.with_arms(&arms, 2 * bins.n_levels())?;
    let estimates = fine_run.estimate(y, &[], seed)?;
    let width = |ci: Option<(f64, f64)>| ci.map(|(lo, hi)| hi - lo);
    let widened = (0..bins.n_levels())
        .map(|l| {
            let lo = if l == 0 { 0.0 } else { bins.cuts[l - 1] };
            let coarse_arm = arm_index(coarse_bins.level(lo), false);
            let fine = width(estimates.arms[arm_index(l, false)].ci)?;
            let base = width(coarse.arms.get(coarse_arm)?.ci)?;
            Some(fine > base)
        })
        .collect();
    Ok(GranularResult {
        bins,
        merged_cuts,
        estimates,
        widened,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// `U` of the first sample: pairs with `a > b` plus half the ties.
    pub u: f64,
    pub p_value: f64,
    pub method: PMethod,
}

/// Largest smaller-sample size with an exact p-value.
pub const EXACT_MAX: usize = 8;

/// Doubled mid-ranks (integers) of the pooled sample and the tie group sizes.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut s = 0;
    while s < idx.len() {
        let mut e = s + 1;
        while e < idx.len() && pooled[idx[e]] == pooled[idx[s]] {
            e += 1;
        }
        // ranks s+1..=e averaged, doubled
        let r2 = (s + 1 + e) as u64;
        for &i in &idx[s..e] {
            ranks[i] = r2;
        }
        ties.push((e - s) as u64);
        s = e;
    }
    (ranks, ties)
}

/// Number of size-`k` subsets of `items` per subset sum.
fn subset_sum_counts(items: &[u64], k: usize) -> Vec<u128> {
    let max: u64 = {
        let mut v = items.to_vec();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v.iter().take(k).sum()
    };
    let width = max as usize + 1;
    let mut dp = vec![vec![0u128; width]; k + 1];
    dp[0][0] = 1;
    for &it in items {
        let it = it as usize;
        for j in (1..=k).rev() {
            let (lo, hi) = dp.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (it..width).rev() {
                cur[s] += prev[s - it];
            }
        }
    }
    dp.swap_remove(k)
}

/// Two-sided Mann-Whitney U test with tie correction.
///
/// The p-value is exact (permutation distribution of the mid-rank sum) when
/// the smaller sample has at most [`EXACT_MAX`] values and uses the normal
/// approximation with continuity correction otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("Mann-Whitney needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Domain("Mann-Whitney samples must not contain NaN".into()));
    }
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let w2: u64 = ranks[..n].iter().sum();
    // U = W − n(n+1)/2
    let u = (w2 as f64 - (n * (n + 1)) as f64) / 2.0;
    let nm = (n * m) as f64;
    if n.min(m) <= EXACT_MAX {
        // permutation law of the doubled rank sum of the smaller sample
        let (k, obs) = if n <= m { (n, w2) } else { (m, ranks[n..].iter().sum()) };
        let centre2 = (k * (n + m + 1)) as i128; // E[2W]
        let dev = |s: u64| (s as i128 - centre2).abs();
        let counts = subset_sum_counts(&ranks, k);
        let total: u128 = counts.iter().sum();
        let extreme: u128 = counts
            .iter()
            .enumerate()
            .filter(|&(s, &c)| c > 0 && dev(s as u64) >= dev(obs))
            .map(|(_, &c)| c)
            .sum();
        return Ok(MannWhitney {
            u,
            p_value: extreme as f64 / total as f64,
            method: PMethod::Exact,
        });
    }
    let big_n = (n + m) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
    let var = nm / 12.0 * ((big_n + 1.0) - tie_term);
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - nm / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("valid");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_value,
        method: PMethod::Normal,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// `psi, arm_burden, arm_treated, estimate, ci_low, ci_high`, plus one row
/// per contrast with `arm_burden = "<high>-<low>"` and `arm_treated = 0`.
pub fn write_psi_csv(path: &Path, rows: &[PsiRow], level_label: impl Fn(usize) -> String) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["psi", "arm_burden", "arm_treated", "estimate", "ci_low", "ci_high"])?;
    for r in rows {
        for a in &r.estimates.arms {
            w.write_record([
                r.psi.to_string(),
                level_label(a.arm / 2),
                (a.arm % 2).to_string(),
                fmt_opt(a.estimate),
                fmt_opt(a.ci.map(|c| c.0)),
                fmt_opt(a.ci.map(|c| c.1)),
            ])?;
        }
        for c in &r.estimates.contrasts {
            w.write_record([
                r.psi.to_string(),
                format!("{}-{}", level_label(c.high / 2), level_label(c.low / 2)),
                (c.high % 2).to_string(),
                fmt_opt(c.estimate),
                fmt_opt(c.ci.map(|x| x.0)),
                fmt_opt(c.ci.map(|x| x.1)),
            ])?;
        }
    }
    flush(w, path)
}

/// `rho1, rho2, arm_burden, arm_treated, apo` with arms numbered 0–3 and
/// `NA` at unavailable points.
pub fn write_surface_csv(path: &Path, points: &[SurfacePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rho1", "rho2", "arm_burden", "arm_treated", "apo"])?;
    for p in points {
        for (a, v) in p.apo.iter().enumerate() {
            w.write_record([
                p.rho1.to_string(),
                p.rho2.to_string(),
                (a / 2).to_string(),
                (a % 2).to_string(),
                fmt_opt(*v),
            ])?;
        }
    }
    flush(w, path)
}

/// One row of `baselines.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub method: String,
    pub arm: usize,
    pub estimate: Option<f64>,
    pub spread: Option<f64>,
}

/// `method, arm_burden, arm_treated, estimate, spread`.
pub fn write_baselines_csv(path: &Path, rows: &[BaselineRow], level_label: impl Fn(usize) -> String) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "arm_burden", "arm_treated", "estimate", "spread"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            level_label(r.arm / 2),
            (r.arm % 2).to_string(),
            fmt_opt(r.estimate),
            fmt_opt(r.spread),
        ])?;
    }
    flush(w, path)
}

/// One row of `mwu.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MwuRow {
    pub comparison: String,
    pub variable: String,
    pub n_a: usize,
    pub n_b: usize,
    pub result: MannWhitney,
}

/// `comparison, variable, n_a, n_b, u, p_value, method`.
pub fn write_mwu_csv(path: &Path, rows: &[MwuRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["comparison", "variable", "n_a", "n_b", "u", "p_value", "method"])?;
    for r in rows {
        w.write_record([
            r.comparison.clone(),
            r.variable.clone(),
            r.n_a.to_string(),
            r.n_b.to_string(),
            r.result.u.to_string(),
            r.result.p_value.to_string(),
            match r.result.method {
                PMethod::Exact => "exact".to_string(),
                PMethod::Normal => "normal".to_string(),
            },
        ])?;
    }
    flush(w, path)
}

#[cfg(test)]
mod tests;
