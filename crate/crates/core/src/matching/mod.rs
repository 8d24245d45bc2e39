//! Learned-metric matching and potential-outcome estimation over the
//! (burden level × treated) arms.
//!
//! Each of the replicates splits the cohort 2:1 into a training part, on
//! which the metric is learned, and an estimation part, whose units are
//! matched among themselves. A unit's conditional potential outcome for an
//! arm is the mean outcome of its nearest estimation-part neighbours in that
//! arm; the average potential outcome is the mean of those over unpruned
//! units, averaged over replicates.
//!
//! Bootstrap resamples are represented as per-unit multiplicities, so every
//! draw reuses the replicate metrics and precomputed neighbour orderings.

mod metric;

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metric::{learn_metric, LearnOptions, LearnedMetric, Metric};

use crate::analysis::MatchSpace;
use crate::error::{Error, Result};
use crate::stats::{self, task_rng};

/// Neighbour orderings kept per (query, arm) before falling back to a scan.
const INDEX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub learn: LearnOptions,
    pub k_per_arm: usize,
    pub replicates: usize,
    pub train_fraction: f64,
    /// Diameter threshold; `None` means the matching-space dimension.
    pub d_prune: Option<f64>,
    pub n_boot: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Group sizes outside this band are counted in the pruning report.
    pub group_size_band: [usize; 2],
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            learn: LearnOptions::default(),
            k_per_arm: 5,
            replicates: 15,
            train_fraction: 2.0 / 3.0,
            d_prune: None,
            n_boot: 1000,
            ci_low: 0.025,
            ci_high: 0.975,
            group_size_band: [6, 40],
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.k_per_arm < 1 {
            bad.push("matching.k_per_arm must be >= 1".to_string());
        }
        if self.learn.k < 1 {
            bad.push("matching.learn.k must be >= 1".into());
        }
        if self.replicates < 1 {
            bad.push("matching.replicates must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bad.push("matching.train_fraction must lie in (0, 1)".into());
        }
        if let Some(d) = self.d_prune {
            if !(d > 0.0) {
                bad.push("matching.d_prune must be > 0".into());
            }
        }
        if self.n_boot < 2 {
            bad.push("matching.n_boot must be >= 2".into());
        }
        if !(0.0 <= self.ci_low && self.ci_low < self.ci_high && self.ci_high <= 1.0) {
            bad.push("matching.ci_low < matching.ci_high must lie in [0, 1]".into());
        }
        if self.learn.steps.iter().any(|s| !(*s > 1.0)) {
            bad.push("matching.learn.steps must all exceed 1".into());
        }
        if self.group_size_band[0] > self.group_size_band[1] {
            bad.push("matching.group_size_band must be [min, max]".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Member {
    pub unit: usize,
    pub arm: usize,
    pub distance: f64,
}

/// A query unit's nearest neighbours in every populated arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedGroup {
    pub query: usize,
    pub members: Vec<Member>,
    pub diameter: f64,
}

/// Sorted `(distance, unit)` candidates of one arm for one query.
fn sorted_candidates(metric: &Metric, rows: &[Vec<f64>], query: usize, pool: &[usize]) -> Vec<(f64, u32)> {
    let mut v: Vec<(f64, u32)> = pool
        .iter()
        .filter(|&&u| u != query)
        .map(|&u| (metric.distance(&rows[query], &rows[u]), u as u32))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// Index of the last entry tied with the `k`-th nearest.
fn tie_inclusive_len(sorted: &[(f64, u32)], k: usize) -> usize {
    if sorted.len() <= k {
        return sorted.len();
    }
    let kth = sorted[k - 1].0;
    k + sorted[k..].iter().take_while(|e| e.0 <= kth).count()
}

/// For each unit, its `k_per_arm` nearest other units within each arm
/// (all units tied with the `k`-th distance included). Unit order breaks
/// ties in the listing.
pub fn match_groups(metric: &Metric, rows: &[Vec<f64>], arms: &[usize], k_per_arm: usize) -> Vec<MatchedGroup> {
    let n_arms = arms.iter().max().map_or(0, |m| m + 1);
    let pools: Vec<Vec<usize>> = (0..n_arms)
        .map(|a| (0..rows.len()).filter(|&u| arms[u] == a).collect())
        .collect();
    (0..rows.len())
        .into_par_iter()
        .map(|q| {
            let mut members = Vec::new();
            for (a, pool) in pools.iter().enumerate() {
                let c = sorted_candidates(metric, rows, q, pool);
                let len = tie_inclusive_len(&c, k_per_arm);
                members.extend(c[..len].iter().map(|&(d, u)| Member {
                    unit: u as usize,
                    arm: a,
                    distance: d,
                }));
            }
            let diameter = members.iter().map(|m| m.distance).fold(0.0, f64::max);
            MatchedGroup {
                query: q,
                members,
                diameter,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub retained: Vec<MatchedGroup>,
    pub n_pruned: usize,
}

/// Drops groups whose diameter exceeds `d_prune` (a diameter equal to the
/// threshold is kept).
pub fn prune_groups(groups: Vec<MatchedGroup>, d_prune: f64) -> Result<Pruned> {
    if !(d_prune > 0.0) {
        return Err(Error::Domain(format!("d_prune must be > 0, got {d_prune}")));
    }
    let total = groups.len();
    let retained: Vec<MatchedGroup> = groups.into_iter().filter(|g| g.diameter <= d_prune).collect();
    if total > 0 && retained.is_empty() {
        return Err(Error::InsufficientData(format!(
            "all {total} matched groups have diameter above d_prune = {d_prune}; use a larger d_prune"
        )));
    }
    Ok(Pruned {
        n_pruned: total - retained.len(),
        retained,
    })
}

/// Mean outcome of the group's members in `arm`; `None` when the arm has no
/// member.
pub fn estimate_capo(group: &MatchedGroup, arm: usize, outcomes: &[f64]) -> Option<f64> {
    let v: Vec<f64> = group
        .members
        .iter()
        .filter(|m| m.arm == arm)
        .map(|m| outcomes[m.unit])
        .collect();
    stats::mean(&v)
}

/// Per-query, per-arm neighbour orderings over a set of pool units.
#[derive(Debug, Clone)]
struct NeighborIndex {
    queries: Vec<usize>,
    /// `lists[q * n_arms + a]`, each truncated at `INDEX_DEPTH`.
    lists: Vec<Vec<(f64, u32)>>,
    pools: Vec<Vec<usize>>,
}

impl NeighborIndex {
    fn build(metric: &Metric, rows: &[Vec<f64>], arms: &[usize], units: &[usize], n_arms: usize) -> Self {
        let pools: Vec<Vec<usize>> = (0..n_arms)
            .map(|a| units.iter().copied().filter(|&u| arms[u] == a).collect())
            .collect();
        let lists = units
            .par_iter()
            .flat_map_iter(|&q| {
                pools.iter().map(move |pool| {
                    let mut c = sorted_candidates(metric, rows, q, pool);
                    c.truncate(INDEX_DEPTH);
                    c
                })
            })
            .collect();
        NeighborIndex {
            queries: units.to_vec(),
            lists,
            pools,
        }
    }
}

/// One query's walk over an arm ordering, weighting units by multiplicity.
/// Returns `(Σ m·y, Σ m, radius)` or `None` when no candidate is present.
fn walk(list: &[(f64, u32)], m: &[u32], y: &[f64], k: usize) -> Option<(f64, f64, f64, bool)> {
    let (mut acc, mut sum, mut radius) = (0u64, 0.0, 0.0);
    for &(d, u) in list {
        let mu = m[u as usize];
        if mu == 0 {
            continue;
        }
        if acc >= k as u64 && d > radius {
            return Some((sum, acc as f64, radius, true));
        }
        acc += u64::from(mu);
        sum += f64::from(mu) * y[u as usize];
        radius = d;
    }
    (acc > 0).then_some((sum, acc as f64, radius, false))
}

/// Outcome of evaluating one replicate under one resample.
#[derive(Debug, Clone, PartialEq)]
struct ReplicateEval {
    apo: Vec<Option<f64>>,
    n_queries: usize,
    n_pruned: usize,
    sizes: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub train: Vec<usize>,
    pub estimation: Vec<usize>,
    pub metric: Metric,
    pub objective: f64,
    pub excluded_arms: Vec<usize>,
    neighbors: NeighborIndex,
}

impl Replicate {
    fn eval(&self, rows: &[Vec<f64>], m: &[u32], y: &[f64], k: usize, d_prune: f64) -> ReplicateEval {
        let n_arms = self.neighbors.pools.len();
        let mut num = vec![0.0; n_arms];
        let mut den = vec![0.0; n_arms];
        let (mut n_queries, mut n_pruned) = (0, 0);
        let mut sizes = Vec::new();
        let mut capo = vec![None; n_arms];
        for (qi, &q) in self.neighbors.queries.iter().enumerate() {
            let mq = m[q];
            if mq == 0 {
                continue;
            }
            n_queries += 1;
            let mut diameter: f64 = 0.0;
            let mut size = 0u64;
            for a in 0..n_arms {
                let list = &self.neighbors.lists[qi * n_arms + a];
                let mut r = walk(list, m, y, k);
                let truncated = list.len() == INDEX_DEPTH;
                if truncated && r.is_none_or(|(_, _, _, closed)| !closed) {
                    let full = sorted_candidates(&self.metric, rows, q, &self.neighbors.pools[a]);
                    r = walk(&full, m, y, k);
                }
                capo[a] = r.map(|(s, c, radius, _)| {
                    diameter = diameter.max(radius);
                    size += c as u64;
                    s / c
                });
            }
            if diameter > d_prune {
                n_pruned += 1;
                continue;
            }
            sizes.push(size);
            for a in 0..n_arms {
                if let Some(v) = capo[a] {
                    num[a] += f64::from(mq) * v;
                    den[a] += f64::from(mq);
                }
            }
        }
        ReplicateEval {
            apo: num.iter().zip(&den).map(|(n, d)| (*d > 0.0).then(|| n / d)).collect(),
            n_queries,
            n_pruned,
            sizes,
        }
    }
}

/// Where the replicate metrics come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSource {
    /// Learned on each replicate's training part.
    Learn,
    /// One fixed metric; a single replicate whose estimation part is the
    /// whole cohort.
    Fixed(Metric),
}

/// Per-replicate splits, metrics and neighbour orderings for one cohort and
/// arm assignment.
#[derive(Debug, Clone)]
pub struct MatchingRun {
    pub config: MatchingConfig,
    pub feature_names: Vec<String>,
    pub arms: Vec<usize>,
    pub n_arms: usize,
    pub d_prune: f64,
    pub replicates: Vec<Replicate>,
    rows: Vec<Vec<f64>>,
}

/// Train / estimation split of replicate `r` over units `0..n`.
pub fn replicate_split(n: usize, train_fraction: f64, seed: u64, r: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut task_rng(seed, "split", r as u64));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut est = idx[n_train..].to_vec();
    train.sort_unstable();
    est.sort_unstable();
    (train, est)
}

impl MatchingRun {
    /// Splits, learns (or fixes) metrics and indexes neighbours. Units are
    /// matched in the order given, which callers keep sorted by patient id.
    pub fn fit(
        space: &MatchSpace,
        outcomes: &[f64],
        arms: &[usize],
        n_arms: usize,
        config: &MatchingConfig,
        source: &MetricSource,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let n = space.len();
        if outcomes.len() != n || arms.len() != n {
            return Err(Error::Schema("outcomes and arms must match the matching space".into()));
        }
        if arms.iter().any(|&a| a >= n_arms) {
            return Err(Error::Domain("arm index out of range".into()));
        }
        if n == 0 {
            return Err(Error::InsufficientData("no units to match".into()));
        }
        let d_prune = config.d_prune.unwrap_or(space.dim() as f64);
        let rows = space.rows.clone();
        let replicates = match source {
            MetricSource::Fixed(metric) => {
                if metric.dim() != space.dim() {
                    return Err(Error::Schema("fixed metric dimension differs from matching space".into()));
                }
                let all: Vec<usize> = (0..n).collect();
                vec![Replicate {
                    index: 0,
                    train: Vec::new(),
                    neighbors: NeighborIndex::build(metric, &rows, arms, &all, n_arms),
                    estimation: all,
                    metric: metric.clone(),
                    objective: f64::NAN,
                    excluded_arms: Vec::new(),
                }]
            }
            MetricSource::Learn => (0..config.replicates)
                .into_par_iter()
                .map(|r| {
                    let (train, estimation) = replicate_split(n, config.train_fraction, seed, r);
                    let xt: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
                    let yt: Vec<f64> = train.iter().map(|&i| outcomes[i]).collect();
                    let at: Vec<usize> = train.iter().map(|&i| arms[i]).collect();
                    let learned = learn_metric(
                        &xt,
                        &yt,
                        &at,
                        &space.zero_variance,
                        &config.learn,
                        stats::derive_seed(seed, "metric", r as u64),
                    )?;
                    Ok(Replicate {
                        index: r,
                        neighbors: NeighborIndex::build(&learned.metric, &rows, arms, &estimation, n_arms),
                        train,
                        estimation,
                        metric: learned.metric,
                        objective: learned.objective,
                        excluded_arms: learned.excluded_arms,
                    })
                })
                .collect::<Result<_>>()?,
        };
        Ok(MatchingRun {
            config: config.clone(),
            feature_names: space.names.clone(),
            arms: arms.to_vec(),
            n_arms,
            d_prune,
            replicates,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same splits and metrics, new arm assignment.
    pub fn with_arms(&self, arms: &[usize], n_arms: usize) -> Result<Self> {
        self.rebuild(arms, n_arms, |_| true)
    }

    /// Same splits and metrics, with queries and candidates restricted to
    /// units where `keep` holds.
    pub fn restricted(&self, keep: impl Fn(usize) -> bool + Sync) -> Result<Self> {
        self.rebuild(&self.arms.clone(), self.n_arms, keep)
    }

    fn rebuild(&self, arms: &[usize], n_arms: usize, keep: impl Fn(usize) -> bool + Sync) -> Result<Self> {
        if arms.len() != self.len() || arms.iter().any(|&a| a >= n_arms) {
            return Err(Error::Domain("arm assignment does not fit the run".into()));
        }
        let replicates = self
            .replicates
            .par_iter()
            .map(|r| {
                let units: Vec<usize> = r.estimation.iter().copied().filter(|&u| keep(u)).collect();
                Replicate {
                    neighbors: NeighborIndex::build(&r.metric, &self.rows, arms, &units, n_arms),
                    ..r.clone()
                }
            })
            .collect();
        Ok(MatchingRun {
            arms: arms.to_vec(),
            n_arms,
            replicates,
            ..self.clone()
        })
    }

    fn evals(&self, m: &[u32], y: &[f64]) -> Vec<ReplicateEval> {
        self.replicates
            .iter()
            .map(|r| r.eval(&self.rows, m, y, self.config.k_per_arm, self.d_prune))
            .collect()
    }

    /// Replicate-averaged APO per arm under unit multiplicities `m`.
    pub fn apo_weighted(&self, m: &[u32], y: &[f64]) -> Vec<Option<f64>> {
        average(&self.evals(m, y), self.n_arms)
    }

    /// Point estimate per arm; fails when every query of some replicate was
    /// pruned.
    pub fn apo(&self, y: &[f64]) -> Result<Vec<Option<f64>>> {
        let ones = vec![1u32; self.len()];
        let evals = self.evals(&ones, y);
        for (r, e) in evals.iter().enumerate() {
            if e.n_queries > 0 && e.n_pruned == e.n_queries {
                return Err(Error::InsufficientData(format!(
                    "replicate {r}: all {} matched groups exceed d_prune = {}; use a larger d_prune",
                    e.n_queries, self.d_prune
                )));
            }
        }
        Ok(average(&evals, self.n_arms))
    }

    /// Pruning and group-size summary per replicate for the full cohort.
    pub fn pruning(&self) -> Vec<PruningReport> {
        let ones = vec![1u32; self.len()];
        let y = vec![0.0; self.len()];
        let [lo, hi] = self.config.group_size_band;
        self.evals(&ones, &y)
            .into_iter()
            .enumerate()
            .map(|(r, e)| {
                let mut s = e.sizes.clone();
                s.sort_unstable();
                PruningReport {
                    replicate: r,
                    n_queries: e.n_queries,
                    n_pruned: e.n_pruned,
                    d_prune: self.d_prune,
                    min_size: s.first().copied().unwrap_or(0),
                    median_size: stats::median(&s.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap_or(0.0),
                    max_size: s.last().copied().unwrap_or(0),
                    outside_band: s.iter().filter(|&&v| (v as usize) < lo || (v as usize) > hi).count(),
                }
            })
            .collect()
    }

    /// Full matched groups of one replicate (estimation units only).
    pub fn groups(&self, replicate: usize) -> Vec<MatchedGroup> {
        let r = &self.replicates[replicate];
        let rows: Vec<Vec<f64>> = r.estimation.iter().map(|&u| self.rows[u].clone()).collect();
        let arms: Vec<usize> = r.estimation.iter().map(|&u| self.arms[u]).collect();
        match_groups(&r.metric, &rows, &arms, self.config.k_per_arm)
            .into_iter()
            .map(|g| MatchedGroup {
                query: r.estimation[g.query],
                members: g
                    .members
                    .into_iter()
                    .map(|m| Member {
                        unit: r.estimation[m.unit],
                        ..m
                    })
                    .collect(),
                diameter: g.diameter,
            })
            .collect()
    }

    /// Replicate mean of the normalized weights.
    pub fn mean_weights(&self) -> Vec<f64> {
        let p = self.feature_names.len();
        let mut out = vec![0.0; p];
        for r in &self.replicates {
            for (o, w) in out.iter_mut().zip(r.metric.normalized()) {
                *o += w;
            }
        }
        let n = self.replicates.len() as f64;
        out.iter().map(|v| v / n).collect()
    }

    /// Point estimates with bootstrap intervals for every arm and each
    /// `(high, low)` contrast.
    pub fn estimate(&self, y: &[f64], contrasts: &[(usize, usize)], seed: u64) -> Result<Estimates> {
        let point = self.apo(y)?;
        let n = self.len();
        let draws = bootstrap_draws(n, self.config.n_boot, seed, |m| {
            let apo = self.apo_weighted(m, y);
            let mut v = apo.clone();
            v.extend(contrasts.iter().map(|&(h, l)| apo[h].zip(apo[l]).map(|(a, b)| a - b)));
            v
        });
        let levels = (self.config.ci_low, self.config.ci_high);
        let interval = |j: usize, pt: Option<f64>| -> Option<(f64, f64)> {
            let pt = pt?;
            let col: Vec<Option<f64>> = draws.iter().map(|d| d[j]).collect();
            match percentile_ci(&col, levels) {
                Ok((lo, hi)) => Some((lo.min(pt), hi.max(pt))),
                Err(e) => {
                    warn!("no bootstrap interval for statistic {j}: {e}");
                    None
                }
            }
        };
        let arms = (0..self.n_arms)
            .map(|a| ArmEstimate {
                arm: a,
                estimate: point[a],
                ci: interval(a, point[a]),
                n: self.arms.iter().filter(|&&x| x == a).count(),
            })
            .collect();
        let contrasts = contrasts
            .iter()
            .enumerate()
            .map(|(j, &(h, l))| {
                let est = point[h].zip(point[l]).map(|(a, b)| a - b);
                ContrastEstimate {
                    high: h,
                    low: l,
                    estimate: est,
                    ci: interval(self.n_arms + j, est),
                }
            })
            .collect();
        Ok(Estimates { arms, contrasts })
    }
}

fn average(evals: &[ReplicateEval], n_arms: usize) -> Vec<Option<f64>> {
    (0..n_arms)
        .map(|a| {
            let v: Vec<f64> = evals.iter().filter_map(|e| e.apo[a]).collect();
            stats::mean(&v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruningReport {
    pub replicate: usize,
    pub n_queries: usize,
    pub n_pruned: usize,
    pub d_prune: f64,
    pub min_size: u64,
    pub median_size: f64,
    pub max_size: u64,
    pub outside_band: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmEstimate {
    pub arm: usize,
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Units in the arm across the whole cohort.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastEstimate {
    pub high: usize,
    pub low: usize,
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub arms: Vec<ArmEstimate>,
    pub contrasts: Vec<ContrastEstimate>,
}

/// Multiplicities of a size-`n` resample with replacement, one vector per
/// draw, seeded per draw index.
pub fn resample_counts(n: usize, seed: u64, draw: usize) -> Vec<u32> {
    let mut rng = task_rng(seed, "boot", draw as u64);
    let mut m = vec![0u32; n];
    for _ in 0..n {
        m[rng.gen_range(0..n)] += 1;
    }
    m
}

/// Evaluates `stat` on `n_boot` resamples in parallel, in draw order.
pub fn bootstrap_draws<T: Send>(n: usize, n_boot: usize, seed: u64, stat: impl Fn(&[u32]) -> T + Sync) -> Vec<T> {
    (0..n_boot)
        .into_par_iter()
        .map(|b| stat(&resample_counts(n, seed, b)))
        .collect()
}

/// Percentile interval over the defined draws; errors when more than half
/// are undefined.
pub fn percentile_ci(draws: &[Option<f64>], levels: (f64, f64)) -> Result<(f64, f64)> {
    let mut v: Vec<f64> = draws.iter().flatten().copied().collect();
    if v.is_empty() || 2 * v.len() < draws.len() {
        return Err(Error::InsufficientData(format!(
            "statistic undefined on {} of {} bootstrap resamples",
            draws.len() - v.len(),
            draws.len()
        )));
    }
    v.sort_by(f64::total_cmp);
    let q = |p| stats::quantile_sorted(&v, p).expect("non-empty");
    Ok((q(levels.0), q(levels.1)))
}

/// Percentile bootstrap interval of a statistic evaluated on resample
/// multiplicities.
pub fn bootstrap_ci(
    n: usize,
    n_boot: usize,
    seed: u64,
    levels: (f64, f64),
    stat: impl Fn(&[u32]) -> Option<f64> + Sync,
) -> Result<(f64, f64)> {
    if n_boot < 2 {
        return Err(Error::Domain("bootstrap needs n_boot >= 2".into()));
    }
    percentile_ci(&bootstrap_draws(n, n_boot, seed, stat), levels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupEffect {
    pub stratifier: String,
    pub present: bool,
    pub n: usize,
    /// `None` when the stratum is empty or the contrast is undefined.
    pub contrast: Option<ContrastEstimate>,
}

/// Top-minus-bottom contrast computed separately within the units where the
/// binary stratifier is present (non-zero) and absent. Queries and
/// candidates are both restricted to the stratum; metrics stay frozen.
pub fn subgroup_effects(
    run: &MatchingRun,
    stratifier: &str,
    values: &[f64],
    y: &[f64],
    contrast: (usize, usize),
    seed: u64,
) -> Result<Vec<SubgroupEffect>> {
    if values.len() != run.len() {
        return Err(Error::Schema(format!("stratifier {stratifier} has the wrong length")));
    }
    let mut out = Vec::new();
    for present in [true, false] {
        let inside = |u: usize| (values[u] != 0.0) == present;
        let n = (0..run.len()).filter(|&u| inside(u)).count();
        let contrast = if n == 0 {
            None
        } else {
            let sub = run.restricted(inside)?;
            match sub.estimate(y, &[contrast], seed) {
                Ok(e) => e.contrasts.into_iter().next().filter(|c| c.estimate.is_some()),
                Err(Error::InsufficientData(msg)) => {
                    warn!("stratum {stratifier}={}: {msg}", u8::from(present));
                    None
                }
                Err(e) => return Err(e),
            }
        };
        out.push(SubgroupEffect {
            stratifier: stratifier.to_string(),
            present,
            n,
            contrast,
        });
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `arm_burden, arm_treated, estimate, ci_low, ci_high, n`.
pub fn write_apo_csv(path: &Path, est: &Estimates, level_label: impl Fn(usize) -> String) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm_burden", "arm_treated", "estimate", "ci_low", "ci_high", "n"])?;
    for a in &est.arms {
        w.write_record([
            level_label(a.arm / 2),
            (a.arm % 2).to_string(),
            fmt_opt(a.estimate),
            fmt_opt(a.ci.map(|c| c.0)),
            fmt_opt(a.ci.map(|c| c.1)),
            a.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `feature, weight, rank` with rank 1 the largest mean weight.
pub fn write_weights_csv(path: &Path, names: &[String], weights: &[f64]) -> Result<()> {
    let metric = Metric {
        weights: weights.to_vec(),
    };
    let mut rank = vec![0; weights.len()];
    for (r, d) in metric.ranking().into_iter().enumerate() {
        rank[d] = r + 1;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["covariate", "weight", "rank"])?;
    for (d, name) in names.iter().enumerate() {
        w.write_record([name.clone(), weights[d].to_string(), rank[d].to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct GroupLine<'a> {
    query: &'a str,
    members: Vec<MemberLine<'a>>,
    diameter: f64,
    pruned: bool,
}

#[derive(Serialize)]
struct MemberLine<'a> {
    id: &'a str,
    arm: usize,
    distance: f64,
}

/// One JSON object per matched group of replicate 0.
pub fn write_groups_jsonl(path: &Path, run: &MatchingRun, ids: &[String]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for g in run.groups(0) {
        let line = GroupLine {
            query: &ids[g.query],
            members: g
                .members
                .iter()
                .map(|m| MemberLine {
                    id: &ids[m.unit],
                    arm: m.arm,
                    distance: m.distance,
                })
                .collect(),
            diameter: g.diameter,
            pruned: g.diameter > run.d_prune,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pruning_csv(path: &Path, reports: &[PruningReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Metric weights per replicate, for reloading frozen metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMetrics {
    pub feature_names: Vec<String>,
    pub replicates: Vec<StoredReplicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReplicate {
    pub weights: Vec<f64>,
    pub objective: Option<f64>,
    pub excluded_arms: Vec<usize>,
}

impl MatchingRun {
    pub fn stored_metrics(&self) -> StoredMetrics {
        StoredMetrics {
            feature_names: self.feature_names.clone(),
            replicates: self
                .replicates
                .iter()
                .map(|r| StoredReplicate {
                    weights: r.metric.weights.clone(),
                    objective: r.objective.is_finite().then_some(r.objective),
                    excluded_arms: r.excluded_arms.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a run from stored metrics, repeating the seeded splits.
    pub fn from_stored(
        space: &MatchSpace,
        arms: &[usize],
        n_arms: usize,
        config: &MatchingConfig,
        stored: &StoredMetrics,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if stored.feature_names != space.names {
            return Err(Error::Schema("stored metrics were learned on different features".into()));
        }
        if stored.replicates.len() != config.replicates {
            return Err(Error::Schema(format!(
                "stored metrics have {} replicates, config asks for {}",
                stored.replicates.len(),
                config.replicates
            )));
        }
        let n = space.len();
        let rows = space.rows.clone();
        let replicates = stored
            .replicates
            .par_iter()
            .enumerate()
            .map(|(r, s)| {
                let (train, estimation) = replicate_split(n, config.train_fraction, seed, r);
                let metric = Metric::new(s.weights.clone())?;
                Ok(Replicate {
                    index: r,
                    neighbors: NeighborIndex::build(&metric, &rows, arms, &estimation, n_arms),
                    train,
                    estimation,
                    metric,
                    objective: s.objective.unwrap_or(f64::NAN),
                    excluded_arms: s.excluded_arms.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(MatchingRun {
            config: config.clone(),
            feature_names: space.names.clone(),
            arms: arms.to_vec(),
            n_arms,
            d_prune: config.d_prune.unwrap_or(space.dim() as f64),
            replicates,
            rows,
        })
    }
}

/// Per-arm point estimates keyed by arm index, for reports.
pub fn estimate_map(est: &Estimates) -> BTreeMap<usize, Option<f64>> {
    est.arms.iter().map(|a| (a.arm, a.estimate)).collect()
}
