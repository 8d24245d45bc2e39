//! Two-state (non-EA / EA) hidden Markov smoothing of per-segment EA
//! probabilities.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-stochastic 2×2 matrix; index 0 = non-EA, 1 = EA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix(pub [[f64; 2]; 2]);

impl TransitionMatrix {
    pub fn new(rows: [[f64; 2]; 2]) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Domain(format!("transition row {i} has entries outside [0, 1]")));
            }
            let s = r[0] + r[1];
            if s == 0.0 {
                return Err(Error::Domain(format!("transition row {i} is all zero")));
            }
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("transition row {i} sums to {s}, not 1")));
            }
        }
        Ok(TransitionMatrix(rows))
    }

    pub fn from_row_major(v: [f64; 4]) -> Result<Self> {
        Self::new([[v[0], v[1]], [v[2], v[3]]])
    }

    pub fn row_major(&self) -> [f64; 4] {
        [self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]]
    }

    /// Reads four whitespace- or comma-separated reals in row-major order.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vals: Vec<f64> = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, 1, format!("`{t}` is not a number")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(Error::parse(path, 1, format!("expected 4 reals, found {}", vals.len())));
        }
        Self::from_row_major([vals[0], vals[1], vals[2], vals[3]])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let m = self.row_major();
        let text = format!("{} {}\n{} {}\n", m[0], m[1], m[2], m[3]);
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Posterior marginals and decoded labels of one smoothed sequence.
#[derive(Debug, Clone)]
pub struct Smoothed {
    /// P(EA at segment t | all evidence).
    pub posterior_ea: Vec<f64>,
    /// Posterior argmax (ties decode as non-EA).
    pub labels: Vec<bool>,
}

/// Forward–backward smoothing with a uniform initial state distribution.
/// Each `p_ea` value is the emission likelihood of the EA state and
/// `1 - p_ea` that of the non-EA state.
pub fn smooth_labels_hmm(p_ea: impl ExactSizeIterator<Item = f64> + Clone, transition: &TransitionMatrix) -> Result<Smoothed> {
    let t_len = p_ea.len();
    if t_len == 0 {
        return Err(Error::InsufficientData("cannot smooth an empty stream".into()));
    }
    let a = transition.0;
    TransitionMatrix::new(a)?;

    // forward pass, normalized per step
    let mut alpha = vec![[0.0f64; 2]; t_len];
    let mut prev = [0.5, 0.5];
    for (t, p) in p_ea.clone().enumerate() {
        let e = [1.0 - p, p];
        let pred = if t == 0 {
            prev
        } else {
            [
                prev[0] * a[0][0] + prev[1] * a[1][0],
                prev[0] * a[0][1] + prev[1] * a[1][1],
            ]
        };
        let mut cur = [pred[0] * e[0], pred[1] * e[1]];
        let s = cur[0] + cur[1];
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "evidence at segment {t} has zero probability under the transition model"
            )));
        }
        cur[0] /= s;
        cur[1] /= s;
        alpha[t] = cur;
        prev = cur;
    }

    // backward pass
    let probs: Vec<f64> = p_ea.collect();
    let mut posterior = vec![0.0; t_len];
    let mut beta = [1.0f64, 1.0];
    for t in (0..t_len).rev() {
        if t + 1 < t_len {
            let p = probs[t + 1];
            let e = [1.0 - p, p];
            let nb = [
                a[0][0] * e[0] * beta[0] + a[0][1] * e[1] * beta[1],
                a[1][0] * e[0] * beta[0] + a[1][1] * e[1] * beta[1],
            ];
            let s = nb[0] + nb[1];
            beta = [nb[0] / s, nb[1] / s];
        }
        let g0 = alpha[t][0] * beta[0];
        let g1 = alpha[t][1] * beta[1];
        posterior[t] = g1 / (g0 + g1);
    }
    let labels = posterior.iter().map(|&g| g > 0.5).collect();
    Ok(Smoothed {
        posterior_ea: posterior,
        labels,
    })
}

/// Maximum-likelihood transition probabilities from labeled sequences with
/// add-one smoothing of the bigram counts.
pub fn fit_transition_matrix<S: AsRef<[bool]>>(sequences: &[S]) -> Result<TransitionMatrix> {
    let mut counts = [[0u64; 2]; 2];
    for s in sequences {
        for w in s.as_ref().windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1;
        }
    }
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InsufficientData(
            "transition fit needs at least one observed transition".into(),
        ));
    }
    let row = |i: usize| {
        let n = (counts[i][0] + counts[i][1]) as f64 + 2.0;
        [(counts[i][0] as f64 + 1.0) / n, (counts[i][1] as f64 + 1.0) / n]
    };
    TransitionMatrix::new([row(0), row(1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::task_rng;
    use rand::Rng;

    /// Exhaustive enumeration over all 2^T state paths.
    fn brute_force(p: &[f64], a: &[[f64; 2]; 2]) -> Vec<f64> {
        let t_len = p.len();
        let mut num = vec![0.0; t_len];
        let mut den = 0.0;
        for path in 0u32..(1 << t_len) {
            let s = |t: usize| ((path >> t) & 1) as usize;
            let emit = |t: usize| if s(t) == 1 { p[t] } else { 1.0 - p[t] };
            let mut w = 0.5 * emit(0);
            for t in 1..t_len {
                w *= a[s(t - 1)][s(t)] * emit(t);
            }
            den += w;
            for (t, n) in num.iter_mut().enumerate() {
                if s(t) == 1 {
                    *n += w;
                }
            }
        }
        num.iter().map(|n| n / den).collect()
    }

    #[test]
    fn matches_enumeration_for_random_chains() {
        let mut rng = task_rng(5, "hmm", 0);
        for _ in 0..20 {
            let stay0 = rng.gen_range(0.05..0.95);
            let stay1 = rng.gen_range(0.05..0.95);
            let tm = TransitionMatrix::new([[stay0, 1.0 - stay0], [1.0 - stay1, stay1]]).unwrap();
            let t_len = rng.gen_range(1..=10);
            let p: Vec<f64> = (0..t_len).map(|_| rng.gen_range(0.01..0.99)).collect();
            let sm = smooth_labels_hmm(p.iter().copied(), &tm).unwrap();
            let oracle = brute_force(&p, &tm.0);
            for (a, b) in sm.posterior_ea.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn certain_evidence_decodes_ea() {
        let tm = TransitionMatrix::new([[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let sm = smooth_labels_hmm(std::iter::repeat(1.0).take(50), &tm).unwrap();
        assert!(sm.labels.iter().all(|&l| l));
    }

    #[test]
    fn identity_transition_gives_constant_decode() {
        let tm = TransitionMatrix::new([[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = [0.9, 0.2, 0.8, 0.3, 0.7, 0.6, 0.1, 0.95];
        let sm = smooth_labels_hmm(p.iter().copied(), &tm).unwrap();
        assert!(sm.labels.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_row_is_rejected() {
        assert!(TransitionMatrix::new([[0.0, 0.0], [0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new([[0.6, 0.6], [0.5, 0.5]]).is_err());
    }

    #[test]
    fn add_one_counts() {
        let tm = fit_transition_matrix(&[vec![false, false, false, false]]).unwrap();
        assert!((tm.0[0][0] - 0.8).abs() < 1e-15);
        assert!((tm.0[1][1] - 0.5).abs() < 1e-15);
        let alt = fit_transition_matrix(&[vec![false, true, false, true]]).unwrap();
        assert!(alt.0[0][1] > alt.0[0][0]);
        assert!(alt.0[1][0] > alt.0[1][1]);
        assert!(fit_transition_matrix::<Vec<bool>>(&[]).is_err());
        assert!(fit_transition_matrix(&[vec![true]]).is_err());
    }

    #[test]
    fn fitting_is_additive_over_sequences() {
        let a = vec![true, true, false, true, false, false];
        let b = vec![false, true, true, true];
        let joint = fit_transition_matrix(&[a.clone(), b.clone()]).unwrap();
        // pooled counts: one sequence holding the same bigrams
        let mut pooled_counts = [[0u64; 2]; 2];
        for s in [&a, &b] {
            for w in s.windows(2) {
                pooled_counts[w[0] as usize][w[1] as usize] += 1;
            }
        }
        for i in 0..2 {
            let n = (pooled_counts[i][0] + pooled_counts[i][1]) as f64 + 2.0;
            assert!((joint.0[i][1] - (pooled_counts[i][1] as f64 + 1.0) / n).abs() < 1e-15);
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        let tm = TransitionMatrix::new([[0.7, 0.3], [0.25, 0.75]]).unwrap();
        tm.write(&p).unwrap();
        assert_eq!(TransitionMatrix::read(&p).unwrap(), tm);
    }
}
