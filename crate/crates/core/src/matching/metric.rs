//! Diagonal-weight distance metrics and their leave-one-out kNN fit.

use log::warn;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::task_rng;

/// Weighted Euclidean distance `d(x, x') = (Σ_d w_d (x_d − x'_d)²)^½`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub weights: Vec<f64>,
}

impl Metric {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("metric weights must be finite and >= 0".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Domain("metric needs at least one positive weight".into()));
        }
        Ok(Metric { weights })
    }

    /// Weight 1 on every dimension with spread, 0 on constant ones.
    pub fn uniform(zero_variance: &[bool]) -> Self {
        let mut weights: Vec<f64> = zero_variance.iter().map(|&z| if z { 0.0 } else { 1.0 }).collect();
        if weights.iter().all(|&w| w == 0.0) {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        Metric { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn sq_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum()
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.sq_distance(a, b).sqrt()
    }

    /// Weights rescaled to sum to 1.
    pub fn normalized(&self) -> Vec<f64> {
        let s: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / s).collect()
    }

    /// Dimension indices from largest to smallest weight, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.dim()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnOptions {
    /// Neighbours per prediction in the fit objective.
    pub k: usize,
    /// L1 penalty on the weights.
    pub l1: f64,
    pub restarts: usize,
    pub max_sweeps: usize,
    /// Multiplicative pattern-search steps, coarse to fine.
    pub steps: Vec<f64>,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            k: 10,
            l1: 0.01,
            restarts: 8,
            max_sweeps: 3,
            steps: vec![2.0, 1.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedMetric {
    pub metric: Metric,
    pub objective: f64,
    /// Arms with fewer than `k + 1` units, left out of the objective.
    pub excluded_arms: Vec<usize>,
    pub restart: usize,
}

/// Squared-distance matrix of one arm under the current weights, with each
/// member's current `k` nearest neighbours. The diagonal is `+∞` so a
/// member is never its own neighbour.
struct ArmBlock {
    members: Vec<usize>,
    k: usize,
    d: Vec<f64>,
    /// `top[a * k..(a + 1) * k]`: nearest members of `a` under the (distance,
    /// index) order, in no particular order.
    top: Vec<u32>,
    /// Neighbour lists produced by the last trial evaluation.
    trial_top: Vec<u32>,
}

impl ArmBlock {
    fn new(members: Vec<usize>, x: &[Vec<f64>], w: &[f64], k: usize) -> Self {
        let n = members.len();
        let mut d = vec![0.0; n * n];
        for a in 0..n {
            d[a * n + a] = f64::INFINITY;
            for b in (a + 1)..n {
                let v: f64 = w
                    .iter()
                    .zip(x[members[a]].iter().zip(&x[members[b]]))
                    .map(|(w, (p, q))| w * (p - q) * (p - q))
                    .sum();
                d[a * n + b] = v;
                d[b * n + a] = v;
            }
        }
        let mut top = Vec::with_capacity(n * k);
        for a in 0..n {
            let row = &d[a * n..(a + 1) * n];
            let cmp = |p: &u32, q: &u32| row[*p as usize].total_cmp(&row[*q as usize]).then(p.cmp(q));
            let mut idx: Vec<u32> = (0..n as u32).filter(|&b| b as usize != a).collect();
            idx.select_nth_unstable_by(k - 1, cmp);
            idx.truncate(k);
            idx.sort_by(cmp);
            top.extend_from_slice(&idx);
        }
        ArmBlock {
            members,
            k,
            d,
            trial_top: top.clone(),
            top,
        }
    }

    /// Adds `delta · (x_a − x_b)²` along `dim` and adopts the trial lists.
    fn accept(&mut self, x: &[Vec<f64>], dim: usize, delta: f64) {
        let n = self.members.len();
        let col: Vec<f64> = self.members.iter().map(|&m| x[m][dim]).collect();
        for (a, row) in self.d.chunks_exact_mut(n).enumerate() {
            let xa = col[a];
            for (cell, &xb) in row.iter_mut().zip(&col) {
                let diff = xa - xb;
                *cell += delta * diff * diff;
            }
        }
        std::mem::swap(&mut self.top, &mut self.trial_top);
    }

    /// Σ_a (y_a − mean of y over the k nearest other members)² with the
    /// weight of `dim` shifted by `delta`.
    ///
    /// The current neighbours' trial distances bound the trial k-th
    /// distance from above, so one filtering pass over each row finds the
    /// exact trial neighbours.
    ///
    /// Stops early once the partial sum reaches `budget`; the trial lists
    /// are then incomplete and the returned value is only a lower bound.
    fn loss(
        &mut self,
        x: &[Vec<f64>],
        y: &[f64],
        dim: usize,
        delta: f64,
        budget: f64,
        scratch: &mut Scratch,
    ) -> f64 {
        let n = self.members.len();
        let k = self.k;
        scratch.col.clear();
        scratch.col.extend(self.members.iter().map(|&m| x[m][dim]));
        scratch.ys.clear();
        scratch.ys.extend(self.members.iter().map(|&m| y[m]));
        scratch.cand.resize(n, (0.0, 0));
        let (col, ys, cand) = (&scratch.col, &scratch.ys, &mut scratch.cand);
        let mut total = 0.0;
        for a in 0..n {
            let row = &self.d[a * n..(a + 1) * n];
            let xa = col[a];
            let trial = |b: usize| {
                let diff = xa - col[b];
                row[b] + delta * diff * diff
            };
            let bound = self.top[a * k..(a + 1) * k]
                .iter()
                .map(|&b| trial(b as usize))
                .fold(f64::NEG_INFINITY, f64::max);
            // branch-free compaction of the rows under the bound
            let mut len = 0;
            for (b, (&d0, &xb)) in row.iter().zip(col).enumerate() {
                let diff = xa - xb;
                let v = d0 + delta * diff * diff;
                cand[len] = (v, b as u32);
                len += usize::from(v <= bound);
            }
            let cand = &mut cand[..len];
            let cmp = |p: &(f64, u32), q: &(f64, u32)| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, cmp);
            }
            let out = &mut self.trial_top[a * k..(a + 1) * k];
            let mut sum = 0.0;
            for (slot, &(_, b)) in out.iter_mut().zip(cand.iter()) {
                *slot = b;
                sum += ys[b as usize];
            }
            let r = ys[a] - sum / k as f64;
            total += r * r;
            if total >= budget {
                break;
            }
        }
        total
    }
}

#[derive(Default)]
struct Scratch {
    col: Vec<f64>,
    ys: Vec<f64>,
    cand: Vec<(f64, u32)>,
}

struct Search<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    blocks: Vec<ArmBlock>,
    scratch: Scratch,
}

impl Search<'_> {
    /// Trial objective, exact whenever it is below `budget`.
    fn loss(&mut self, dim: usize, delta: f64, budget: f64) -> f64 {
        let mut s = 0.0;
        for b in &mut self.blocks {
            s += b.loss(self.x, self.y, dim, delta, budget - s, &mut self.scratch);
            if s >= budget {
                break;
            }
        }
        s
    }

    fn accept(&mut self, dim: usize, delta: f64) {
        for b in &mut self.blocks {
            b.accept(self.x, dim, delta);
        }
    }
}

fn run_search(
    x: &[Vec<f64>],
    y: &[f64],
    groups: &[Vec<usize>],
    active: &[usize],
    mut w: Vec<f64>,
    opts: &LearnOptions,
) -> (Vec<f64>, f64) {
    let mut s = Search {
        x,
        y,
        blocks: groups.iter().map(|g| ArmBlock::new(g.clone(), x, &w, opts.k)).collect(),
        scratch: Scratch::default(),
    };
    let mut best = s.loss(0, 0.0, f64::INFINITY);
    for _ in 0..opts.max_sweeps {
        let mut improved = false;
        for &step in &opts.steps {
            for &d in active {
                for factor in [step, 1.0 / step] {
                    let old = w[d];
                    let delta = old * factor - old;
                    let f = s.loss(d, delta, best);
                    if f < best {
                        s.accept(d, delta);
                        best = f;
                        w[d] = old * factor;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    (w, best)
}

/// Fits diagonal metric weights so that each training unit's outcome is well
/// predicted by the mean outcome of its `k` nearest same-arm neighbours.
///
/// Coordinate-wise multiplicative pattern search from `restarts` starting
/// points (the first uniform, the rest log-normal). The kNN loss is
/// invariant to a common rescaling of the weights, so weights are normalized
/// to sum to the number of active dimensions; under that normalization the
/// L1 term is a constant offset in the reported objective.
pub fn learn_metric(
    x: &[Vec<f64>],
    y: &[f64],
    arms: &[usize],
    zero_variance: &[bool],
    opts: &LearnOptions,
    seed: u64,
) -> Result<LearnedMetric> {
    let n = x.len();
    if opts.k < 1 {
        return Err(Error::Domain("metric learning needs k >= 1".into()));
    }
    if n < 5 * opts.k {
        return Err(Error::InsufficientData(format!(
            "metric learning needs at least {} training units, got {n}",
            5 * opts.k
        )));
    }
    if y.len() != n || arms.len() != n {
        return Err(Error::Schema("metric learning inputs have different lengths".into()));
    }
    let p = zero_variance.len();
    let n_arms = arms.iter().max().map_or(0, |m| m + 1);
    let mut groups = Vec::new();
    let mut excluded = Vec::new();
    for a in 0..n_arms {
        let members: Vec<usize> = (0..n).filter(|&i| arms[i] == a).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < opts.k + 1 {
            warn!(
                "arm {a} has {} training units (< k + 1 = {}); left out of the metric objective",
                members.len(),
                opts.k + 1
            );
            excluded.push(a);
        } else {
            groups.push(members);
        }
    }
    let uniform = Metric::uniform(zero_variance).weights;
    let active: Vec<usize> = (0..p).filter(|&d| uniform[d] > 0.0).collect();
    if groups.is_empty() {
        warn!("no arm has enough training units; keeping uniform weights");
        return Ok(LearnedMetric {
            metric: Metric { weights: uniform },
            objective: 0.0,
            excluded_arms: excluded,
            restart: 0,
        });
    }
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            if r == 0 {
                return uniform.clone();
            }
            let mut rng = task_rng(seed, "restart", r as u64);
            let normal = Normal::new(0.0f64, 1.0).expect("valid");
            uniform
                .iter()
                .map(|&u| if u > 0.0 { normal.sample(&mut rng).exp() } else { 0.0 })
                .collect()
        })
        .collect();
    let results: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .map(|w0| run_search(x, y, &groups, &active, w0, opts))
        .collect();
    let (restart, (w, loss)) = results
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ia.cmp(ib)))
        .expect("at least one restart");
    let scale = active.len() as f64 / w.iter().sum::<f64>();
    let weights: Vec<f64> = w.iter().map(|v| v * scale).collect();
    let l1: f64 = opts.l1 * weights.iter().sum::<f64>();
    Ok(LearnedMetric {
        metric: Metric::new(weights)?,
        objective: loss + l1,
        excluded_arms: excluded,
        restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = task_rng(seed, "test", 0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let y = x.iter().map(|r| r[0]).collect();
        (x, y)
    }

    #[test]
    fn signal_dimension_outweighs_noise() {
        let (x, y) = data(200, 1);
        let arms = vec![0; 200];
        let m = learn_metric(&x, &y, &arms, &[false, false], &LearnOptions::default(), 7).unwrap();
        assert!(m.metric.weights[0] > m.metric.weights[1], "{:?}", m.metric.weights);
        assert_eq!(m.metric.ranking(), vec![0, 1]);
        assert!((m.metric.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_outcome_keeps_uniform_start() {
        let (x, _) = data(100, 2);
        let y = vec![1.0; 100];
        let m = learn_metric(&x, &y, &vec![0; 100], &[false, false], &LearnOptions::default(), 3).unwrap();
        assert_eq!(m.metric.weights, vec![1.0, 1.0]);
        assert_eq!(m.restart, 0);
    }

    #[test]
    fn zero_variance_dimension_gets_zero_weight() {
        let (mut x, y) = data(100, 3);
        for r in &mut x {
            r.push(0.0);
        }
        let m = learn_metric(&x, &y, &vec![0; 100], &[false, false, true], &LearnOptions::default(), 3).unwrap();
        assert_eq!(m.metric.weights[2], 0.0);
    }

    #[test]
    fn duplicated_column_merges_without_changing_distances() {
        let (x, y) = data(120, 4);
        let dup: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], r[0], r[1]]).collect();
        let m = learn_metric(&dup, &y, &vec![0; 120], &[false; 3], &LearnOptions::default(), 5).unwrap();
        let w = &m.metric.weights;
        let merged = Metric::new(vec![w[0] + w[1], w[2]]).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let a = m.metric.sq_distance(&dup[i], &dup[j]);
                let b = merged.sq_distance(&x[i], &x[j]);
                assert!((a - b).abs() <= 1e-12 * (1.0 + a));
            }
        }
    }

    #[test]
    fn small_arms_are_excluded() {
        let (x, y) = data(100, 5);
        let mut arms = vec![0; 100];
        arms[0] = 1;
        arms[1] = 1;
        let m = learn_metric(&x, &y, &arms, &[false, false], &LearnOptions::default(), 1).unwrap();
        assert_eq!(m.excluded_arms, vec![1]);
    }

    #[test]
    fn too_few_units_is_an_error() {
        let (x, y) = data(20, 6);
        assert!(learn_metric(&x, &y, &vec![0; 20], &[false, false], &LearnOptions::default(), 1).is_err());
    }

    #[test]
    fn incremental_update_matches_fresh_matrix() {
        let (x, _) = data(30, 8);
        let members: Vec<usize> = (0..30).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1]).collect();
        let mut scratch = Scratch::default();
        let mut b = ArmBlock::new(members.clone(), &x, &[1.0, 1.0], 4);
        let trial = b.loss(&x, &y, 1, 2.0, f64::INFINITY, &mut scratch);
        b.accept(&x, 1, 2.0);
        let mut fresh = ArmBlock::new(members, &x, &[1.0, 3.0], 4);
        for (u, v) in b.d.iter().zip(&fresh.d) {
            assert!(u == v || (u - v).abs() < 1e-12);
        }
        let sets = |t: &[u32]| -> Vec<Vec<u32>> {
            t.chunks(4)
                .map(|c| {
                    let mut c = c.to_vec();
                    c.sort_unstable();
                    c
                })
                .collect()
        };
        assert_eq!(sets(&b.top), sets(&fresh.top));
        let direct = fresh.loss(&x, &y, 0, 0.0, f64::INFINITY, &mut scratch);
        assert!((trial - direct).abs() < 1e-12);
    }
}
