use super::*;
use crate::analysis::MatchSpace;
use crate::matching::{MatchingConfig, Metric, MetricSource};
use crate::stats::{logistic, task_rng};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn fixed_run(rows: Vec<Vec<f64>>, y: &[f64], arms: &[usize], n_arms: usize) -> MatchingRun {
    let p = rows[0].len();
    let space = MatchSpace {
        names: (0..p).map(|d| format!("x{d}")).collect(),
        zero_variance: vec![false; p],
        rows,
    };
    let cfg = MatchingConfig {
        d_prune: Some(f64::INFINITY),
        n_boot: 50,
        ..Default::default()
    };
    MatchingRun::fit(
        &space,
        y,
        arms,
        n_arms,
        &cfg,
        &MetricSource::Fixed(Metric::uniform(&vec![false; p])),
        3,
    )
    .unwrap()
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[test]
fn naive_constant_outcome_has_zero_spread() {
    let y = vec![1.0; 90];
    let arms: Vec<usize> = (0..90).map(|i| i % 3).collect();
    for s in naive_average(&y, &arms, 3, 15, 2.0 / 3.0, 1) {
        assert_eq!(s.mean, Some(1.0));
        assert_eq!(s.sd, Some(0.0));
        assert_eq!(s.replicates, 15);
    }
}

#[test]
fn naive_full_single_replicate_is_arm_mean() {
    let mut rng = task_rng(2, "t", 0);
    let y: Vec<f64> = (0..200).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect();
    let arms: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
    let got = naive_average(&y, &arms, 5, 1, 1.0, 9);
    for a in 0..4 {
        let v: Vec<f64> = (0..200).filter(|&i| arms[i] == a).map(|i| y[i]).collect();
        assert_eq!(got[a].mean, stats::mean(&v));
        assert_eq!(got[a].sd, None);
    }
    assert_eq!(got[4].mean, None);
}

#[test]
fn regression_on_coin_outcomes_returns_outcome_mean() {
    let mut rng = task_rng(3, "t", 0);
    let n = 2000;
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let arms: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let r = outcome_regression(&x, &y, &arms, 4).unwrap();
    for a in r.apo {
        assert!((a.unwrap() - mean).abs() < 0.02);
    }
}

/// Plain Newton–Raphson for a logistic model with an explicit Gaussian
/// elimination solve, ridge on the slopes only.
fn newton_oracle(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Vec<f64> {
    let q = rows[0].len() + 1;
    let mut b = vec![0.0; q];
    for _ in 0..200 {
        let mut h = vec![vec![0.0; q + 1]; q];
        for (r, &yi) in rows.iter().zip(y) {
            let xr: Vec<f64> = std::iter::once(1.0).chain(r.iter().copied()).collect();
            let mu = logistic(xr.iter().zip(&b).map(|(x, c)| x * c).sum());
            for i in 0..q {
                h[i][q] += xr[i] * (yi - mu);
                for j in 0..q {
                    h[i][j] += mu * (1.0 - mu) * xr[i] * xr[j];
                }
            }
        }
        for i in 1..q {
            h[i][i] += ridge;
            h[i][q] -= ridge * b[i];
        }
        for c in 0..q {
            let piv = (c..q).max_by(|&i, &j| h[i][c].abs().total_cmp(&h[j][c].abs())).unwrap();
            h.swap(c, piv);
            for r in 0..q {
                if r != c {
                    let f = h[r][c] / h[c][c];
                    for k in c..=q {
                        h[r][k] -= f * h[c][k];
                    }
                }
            }
        }
        let step: Vec<f64> = (0..q).map(|i| h[i][q] / h[i][i]).collect();
        for i in 0..q {
            b[i] += step[i];
        }
        if step.iter().all(|s| s.abs() < 1e-14) {
            break;
        }
    }
    b
}

#[test]
fn regression_matches_hand_newton_on_eight_rows() {
    let x = vec![
        vec![0.1],
        vec![-1.2],
        vec![0.7],
        vec![1.5],
        vec![-0.3],
        vec![0.9],
        vec![-0.8],
        vec![0.2],
    ];
    let y = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
    let arms = [0, 1, 0, 1, 0, 1, 0, 1];
    let rows: Vec<Vec<f64>> = x.iter().zip(&arms).map(|(r, &a)| vec![r[0], f64::from(a as u8)]).collect();
    let oracle = newton_oracle(&rows, &y, crate::logistic::BASE_RIDGE);
    let fit = crate::logistic::fit_logistic(&rows, &y).unwrap();
    for (a, b) in fit.coef.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    let r = outcome_regression(&x, &y, &arms, 2).unwrap();
    for arm in 0..2 {
        let want: f64 = x
            .iter()
            .map(|r| logistic(oracle[0] + oracle[1] * r[0] + oracle[2] * arm as f64))
            .sum::<f64>()
            / 8.0;
        assert!((r.apo[arm].unwrap() - want).abs() < 1e-8);
    }
}

#[test]
fn separated_regression_falls_back_to_ridge() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i >= 10))).collect();
    let arms = vec![0; 20];
    let r = outcome_regression(&x, &y, &arms, 1).unwrap();
    assert!(r.separated);
    assert!(r.apo[0].unwrap().is_finite());
}

#[test]
fn regression_apo_is_a_probability() {
    let mut rng = task_rng(4, "t", 0);
    let x: Vec<Vec<f64>> = (0..300).map(|_| vec![normal(&mut rng)]).collect();
    let arms: Vec<usize> = (0..300).map(|_| rng.gen_range(0..3)).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&arms)
        .map(|(r, &a)| f64::from(u8::from(rng.gen_bool(logistic(r[0] + a as f64 - 1.0)))))
        .collect();
    for a in outcome_regression(&x, &y, &arms, 3).unwrap().apo {
        assert!((0.0..=1.0).contains(&a.unwrap()));
    }
}

#[test]
fn propensity_with_identical_covariates_is_arm_mean() {
    let mut rng = task_rng(5, "t", 0);
    let x = vec![vec![1.0, 2.0]; 60];
    let arms: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let y: Vec<f64> = (0..60).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let apo = propensity_match(&x, &y, &arms, 3).unwrap();
    for a in 0..3 {
        let v: Vec<f64> = (0..60).filter(|&i| arms[i] == a).map(|i| y[i]).collect();
        assert!((apo[a].unwrap() - stats::mean(&v).unwrap()).abs() < 1e-12);
    }
    let e = class_propensities(&x, &arms, 3).unwrap();
    for row in e {
        for p in row {
            assert!((p - 1.0 / 3.0).abs() < 1e-9);
        }
    }
}

#[test]
fn propensity_model_recovers_generating_coefficients() {
    let mut rng = task_rng(6, "t", 0);
    let n = 5000;
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
    let truth = [0.5, 1.0, -0.8];
    let class: Vec<usize> = x
        .iter()
        .map(|r| usize::from(rng.gen_bool(logistic(truth[0] + truth[1] * r[0] + truth[2] * r[1]))))
        .collect();
    let fit = fit_multinomial(&x, &class, 2).unwrap();
    for (got, want) in fit.coef[0].iter().zip(truth) {
        assert!(((got - want) / want).abs() < 0.10, "{got} vs {want}");
    }
}

#[test]
fn nearest_on_score_equals_exhaustive_scan() {
    let mut rng = task_rng(7, "t", 0);
    // coarse scores force ties
    let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.gen_range(0..50u8)) / 50.0).collect();
    let pool_idx: Vec<usize> = (0..200).filter(|i| i % 2 == 0).collect();
    let mut pool: Vec<(f64, usize)> = pool_idx.iter().map(|&i| (scores[i], i)).collect();
    pool.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    for q in (0..200).filter(|i| i % 2 == 1) {
        let best = pool_idx.iter().map(|&j| (scores[j] - scores[q]).abs()).fold(f64::INFINITY, f64::min);
        let want: Vec<usize> = pool_idx
            .iter()
            .copied()
            .filter(|&j| (scores[j] - scores[q]).abs() == best)
            .collect();
        assert_eq!(nearest_on_score(&pool, scores[q]), want);
    }
}

#[test]
fn psi_zero_is_identity() {
    let y = vec![0.0, 1.0, 1.0, 0.0];
    let e = vec![0.1, 0.5, 0.9, 0.0];
    let p = vec![0.2, 0.3, 0.9, 1.0];
    assert_eq!(debias_outcomes(&y, &e, &p, 0.0, false).unwrap(), y);
    assert_eq!(debias_outcomes(&y, &e, &p, -0.0, false).unwrap(), y);
}

#[test]
fn debias_hand_value() {
    let out = debias_outcomes(&[1.0], &[0.5], &[0.4], 1.0, false).unwrap();
    assert!((out[0] - (1.0 - 1.5f64.ln() * 0.6)).abs() < 1e-12);
}

#[test]
fn double_log_needs_positive_burden() {
    assert!(selection_bias(1.0, 0.0, true).is_err());
    assert!(selection_bias(1.0, 0.5, true).unwrap() < 0.0);
    assert!(selection_bias(1.0, 1.5, false).is_err());
}

proptest! {
    #[test]
    fn q_is_monotone_in_burden(psi in 0.01f64..3.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(selection_bias(psi, lo, false).unwrap() <= selection_bias(psi, hi, false).unwrap());
    }

    #[test]
    fn mwu_u_values_sum_to_nm(a in prop::collection::vec(-100i32..100, 1..12), b in prop::collection::vec(-100i32..100, 1..12)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ua = mann_whitney_u(&a, &b).unwrap();
        let ub = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ua.u + ub.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((ua.p_value - ub.p_value).abs() < 1e-12);
        prop_assert!(ua.p_value > 0.0 && ua.p_value <= 1.0);
    }
}

#[test]
fn debiased_contrast_is_monotone_in_psi() {
    let mut rng = task_rng(8, "t", 0);
    let n = 240;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let bins = BinScheme::e_max_default();
    let treated = vec![false; n];
    let arms = arms_for(&e, &treated, &bins);
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let run = fixed_run(rows.clone(), &y, &arms, 8);
    let levels: Vec<usize> = e.iter().map(|&v| bins.level(v)).collect();
    let props = class_propensities(&rows, &levels, 4).unwrap();
    let own: Vec<f64> = levels.iter().enumerate().map(|(i, &l)| props[i][l]).collect();
    let grid: Vec<f64> = (-5..=5).map(|i| f64::from(i) * 0.2).collect();
    let mut prev = f64::INFINITY;
    for psi in grid {
        let yd = debias_outcomes(&y, &e, &own, psi, false).unwrap();
        let apo = run.apo(&yd).unwrap();
        let c = apo[6].unwrap() - apo[0].unwrap();
        assert!(c <= prev + 1e-12, "contrast rose at psi = {psi}");
        prev = c;
    }
}

#[test]
fn psi_sweep_at_zero_matches_base_estimate() {
    let mut rng = task_rng(9, "t", 0);
    let n = 160;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng)]).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let treated = vec![false; n];
    let arms = arms_for(&e, &treated, &BinScheme::e_max_default());
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect();
    let run = fixed_run(rows, &y, &arms, 8);
    let own = vec![0.5; n];
    let base = run.estimate(&y, &[(6, 0)], 11).unwrap();
    let sweep = psi_sweep(&run, &y, &e, &own, &[-0.5, 0.0, 0.5], false, &[(6, 0)], 11).unwrap();
    assert_eq!(sweep[1].estimates, base);
    assert_ne!(sweep[0].estimates, base);
}

#[test]
fn significant_range_grows_from_zero() {
    let mk = |psi: f64, sig: bool| PsiRow {
        psi,
        estimates: Estimates {
            arms: vec![],
            contrasts: vec![crate::matching::ContrastEstimate {
                high: 6,
                low: 0,
                estimate: Some(0.1),
                ci: Some(if sig { (0.01, 0.2) } else { (-0.01, 0.2) }),
            }],
        },
    };
    let rows = vec![mk(-1.0, false), mk(-0.5, true), mk(0.0, true), mk(0.5, true), mk(1.0, false)];
    assert_eq!(significant_psi_range(&rows, 0), Some((-0.5, 0.5)));
    let rows = vec![mk(-0.5, true), mk(0.0, false)];
    assert_eq!(significant_psi_range(&rows, 0), None);
}

#[test]
fn base_grid_point_reproduces_base_run() {
    let mut rng = task_rng(10, "t", 0);
    let n = 200;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let treated: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    let arms = arms_for(&e, &treated, &BinScheme::e_max_default());
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect();
    let run = fixed_run(rows, &y, &arms, 8);
    let base = run.apo(&y).unwrap();
    let cfg = SensitivityConfig::default();
    assert!(cfg.rho1_grid.contains(&0.25) && cfg.rho2_grid.contains(&0.75));
    let surface = quantization_sweep(&run, &y, &e, &treated, &cfg.rho1_grid, &cfg.rho2_grid).unwrap();
    assert_eq!(surface.len(), cfg.rho1_grid.len() * cfg.rho2_grid.len());
    let at = surface.iter().find(|p| p.rho1 == 0.25 && p.rho2 == 0.75).unwrap();
    assert_eq!(at.apo, base);
}

#[test]
fn sensitivity_config_rejects_out_of_range_grids() {
    let cfg = SensitivityConfig {
        rho1_grid: vec![0.6],
        rho2_grid: vec![0.4],
        ..Default::default()
    };
    match cfg.validate() {
        Err(Error::Config(v)) => assert_eq!(v.len(), 2),
        other => panic!("{other:?}"),
    }
    SensitivityConfig::default().validate().unwrap();
}

#[test]
fn sparse_bins_merge_into_smaller_neighbour() {
    let mut values = vec![0.05; 30];
    values.extend(vec![0.2; 2]);
    values.extend(vec![0.4; 10]);
    values.extend(vec![0.8; 30]);
    let (bins, removed) = merge_sparse_bins(&values, &[0.1, 0.25, 0.5], 5).unwrap();
    // [0.1,0.25) holds 2 and merges with [0.25,0.5) which holds 10
    assert_eq!(removed, vec![0.25]);
    assert_eq!(bins.cuts, vec![0.1, 0.5]);
    let (bins, _) = merge_sparse_bins(&values, &[0.1, 0.25, 0.5], 1000).unwrap();
    assert!(bins.cuts.is_empty());
}

#[test]
fn fine_naive_means_reaggregate_to_coarse() {
    let mut rng = task_rng(11, "t", 0);
    let n = 500;
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let treated: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect();
    let coarse_bins = BinScheme::e_max_default();
    let fine_bins = BinScheme::new(SensitivityConfig::default().fine_cuts).unwrap();
    let coarse = naive_average(&y, &arms_for(&e, &treated, &coarse_bins), 8, 1, 1.0, 1);
    let fine_arms = arms_for(&e, &treated, &fine_bins);
    let fine = naive_average(&y, &fine_arms, 12, 1, 1.0, 1);
    for ca in 0..8 {
        let (mut num, mut den) = (0.0, 0.0);
        for fa in 0..12 {
            let lo = if fa / 2 == 0 { 0.0 } else { fine_bins.cuts[fa / 2 - 1] };
            if fa % 2 != ca % 2 || coarse_bins.level(lo) != ca / 2 {
                continue;
            }
            let count = fine_arms.iter().filter(|&&a| a == fa).count() as f64;
            if let Some(m) = fine[fa].mean {
                num += count * m;
                den += count;
            }
        }
        assert!((num / den - coarse[ca].mean.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn constant_outcome_gives_unit_fine_bins() {
    let mut rng = task_rng(12, "t", 0);
    let n = 300;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng)]).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let treated = vec![false; n];
    let coarse_bins = BinScheme::e_max_default();
    let arms = arms_for(&e, &treated, &coarse_bins);
    let y = vec![1.0; n];
    let run = fixed_run(rows, &y, &arms, 8);
    let coarse = run.estimate(&y, &[], 1).unwrap();
    let cfg = SensitivityConfig::default();
    let g = granular_bins(&run, &y, &e, &treated, &cfg.fine_cuts, 5, &coarse, &coarse_bins, 1).unwrap();
    assert_eq!(g.bins.n_levels(), 6);
    for l in 0..6 {
        assert_eq!(g.estimates.arms[2 * l].estimate, Some(1.0));
    }
}

#[test]
fn mwu_complete_separation_and_symmetry() {
    let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(r.u, 0.0);
    assert_eq!(r.method, PMethod::Exact);
    assert!((r.p_value - 0.1).abs() < 1e-12);
    let a = [3.0, 1.0, 2.0, 2.0];
    let r = mann_whitney_u(&a, &a).unwrap();
    assert_eq!(r.u, 8.0);
    assert!((r.p_value - 1.0).abs() < 1e-12);
}

/// Two-sided p-value by enumerating every split of the pooled sample.
pub(crate) fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, total) = (a.len(), pooled.len());
    let u2 = |pick: &[usize]| -> i64 {
        let mut s = 0;
        for &i in pick {
            for j in (0..total).filter(|j| !pick.contains(j)) {
                s += match pooled[i].total_cmp(&pooled[j]) {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        s
    };
    let nm = (n * (total - n)) as i64;
    let obs = (u2(&(0..n).collect::<Vec<_>>()) - nm).abs();
    let (mut hit, mut all) = (0u64, 0u64);
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        all += 1;
        if (u2(&pick) - nm).abs() >= obs {
            hit += 1;
        }
        // next combination in lexicographic order
        let mut i = n;
        while i > 0 && pick[i - 1] == total - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        pick[i - 1] += 1;
        for j in i..n {
            pick[j] = pick[j - 1] + 1;
        }
    }
    hit as f64 / all as f64
}

#[test]
fn exact_p_equals_enumeration_for_six_by_six() {
    let mut rng = task_rng(13, "t", 0);
    for trial in 0..5 {
        // integer draws give ties in some trials
        let a: Vec<f64> = (0..6).map(|_| f64::from(rng.gen_range(0..(8 + trial * 10)))).collect();
        let b: Vec<f64> = (0..6).map(|_| f64::from(rng.gen_range(0..(8 + trial * 10)))).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!((r.p_value - enumerate_p(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn normal_approximation_for_large_samples() {
    let a: Vec<f64> = (0..30).map(f64::from).collect();
    let b: Vec<f64> = (0..30).map(|i| f64::from(i) + 15.0).collect();
    let r = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(r.method, PMethod::Normal);
    assert!(r.p_value < 0.01);
    let r = mann_whitney_u(&a, &a).unwrap();
    assert!((r.p_value - 1.0).abs() < 1e-12);
    let r = mann_whitney_u(&[1.0; 20], &[1.0; 20]).unwrap();
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn mwu_rejects_empty_samples() {
    assert!(mann_whitney_u(&[], &[1.0]).is_err());
}
