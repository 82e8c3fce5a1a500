mod common;

use common::*;
use facesym_core::probe::{column_weights, gradient_along_s, gradient_matrix, local_score, GridSpec, InterventionGrid};
use facesym_core::stats::{holm_bonferroni, permutation_test, PermutationConfig, TieRule};
use facesym_core::EmotionLabel;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn grid(s: usize, t: usize, f: impl Fn(f64, f64) -> f64) -> InterventionGrid {
    InterventionGrid::from_fn(GridSpec::new(s, t).unwrap(), EmotionLabel::Happy, f).unwrap()
}

#[test]
fn stencils_exact_on_per_column_quadratics() {
    let mut r = rng(10);
    for _ in 0..200 {
        let (ns, nt) = (r.random_range(3..14), r.random_range(1..6));
        let (a, b, c): (Vec<f64>, Vec<f64>, Vec<f64>) =
            (0..nt).map(|_| (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0))).fold(
                (vec![], vec![], vec![]),
                |mut acc, (x, y, z)| {
                    acc.0.push(x);
                    acc.1.push(y);
                    acc.2.push(z);
                    acc
                },
            );
        let (lo, h) = (r.random_range(-1.0..1.0), r.random_range(0.05..0.5));
        let s_axis: Vec<f64> = (0..ns).map(|i| lo + h * i as f64).collect();
        let values: Vec<f64> =
            (0..ns * nt).map(|k| { let (s, j) = (s_axis[k / nt], k % nt); a[j] + b[j] * s + c[j] * s * s }).collect();
        let g = gradient_matrix(&values, &s_axis, nt).unwrap();
        for k in 0..ns * nt {
            let (s, j) = (s_axis[k / nt], k % nt);
            let want = b[j] + 2.0 * c[j] * s;
            assert!((g[k] - want).abs() <= 1e-12 * (1.0 + want.abs()) * 10.0 / h, "{} vs {want}", g[k]);
        }
    }
}

#[test]
fn linear_columns_are_exact_at_boundaries() {
    let g = grid(10, 90, |s, t| 0.7 * s + (5.0 * t).sin());
    let d = gradient_along_s(&g).unwrap();
    assert!(d.iter().all(|v| (v - 0.7).abs() <= 1e-12), "{:?}", d.iter().fold(0.0f64, |m, v| m.max((v - 0.7).abs())));
}

#[test]
fn score_oracles_on_default_grid() {
    let spec = GridSpec::default();
    let h = InterventionGrid::from_fn(spec, EmotionLabel::Sad, |s, t| t * (0.5 + 0.5 * s)).unwrap();
    assert!((local_score(&h).unwrap().local_score - 0.25).abs() <= 1e-9);
    let c = InterventionGrid::from_fn(spec, EmotionLabel::Sad, |_, _| 0.42).unwrap();
    assert!(local_score(&c).unwrap().local_score.abs() <= 1e-12);
    for a in [-1.0, 0.3, 2.0] {
        let l = InterventionGrid::from_fn(spec, EmotionLabel::Sad, |s, _| a * s).unwrap();
        assert!((local_score(&l).unwrap().local_score - a).abs() <= 1e-9);
    }
}

#[test]
fn three_cell_column_matches_enumeration() {
    let mut r = rng(11);
    for case in 0..20 {
        let values: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
        let g = InterventionGrid::from_values(GridSpec::new(3, 1).unwrap(), EmotionLabel::Fear, values.clone()).unwrap();
        let w = column_weights(&g.s_axis).unwrap();
        let exact = exhaustive_p(&values, &w);
        let cfg = PermutationConfig { permutations: 10_000, seed: case, ..Default::default() };
        let p = permutation_test(&g, &cfg).unwrap().p_value;
        assert!((p - exact).abs() <= 0.02, "{values:?}: sampled {p}, exact {exact}");
    }
}

#[test]
fn noise_grids_reject_at_nominal_rate() {
    let runs = 200;
    let mut rejections = 0;
    for run in 0..runs {
        let mut r = rng(1000 + run);
        let values: Vec<f64> = (0..10 * 20).map(|_| StandardNormal.sample(&mut r)).collect();
        let g = InterventionGrid::from_values(GridSpec::new(10, 20).unwrap(), EmotionLabel::Happy, values).unwrap();
        let cfg = PermutationConfig { permutations: 399, seed: run, ..Default::default() };
        if permutation_test(&g, &cfg).unwrap().p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / runs as f64;
    assert!((0.01..=0.10).contains(&rate), "{rate}");
}

#[test]
fn holm_agrees_with_adjusted_p_oracle() {
    let mut r = rng(12);
    for _ in 0..1000 {
        let m = r.random_range(1..25);
        let p: Vec<f64> = (0..m)
            .map(|_| if r.random_bool(0.3) { r.random_range(0.0..0.01) } else { r.random_range(0.0..1.0) })
            .collect();
        let delta = [0.01, 0.05, 0.1][r.random_range(0..3)];
        assert_eq!(holm_bonferroni(&p, delta).unwrap(), holm_adjusted_oracle(&p, delta), "{p:?}");
    }
    let rejects = holm_bonferroni(&[0.005, 0.01, 0.03, 0.04], 0.05).unwrap();
    assert_eq!(rejects, vec![true, true, false, false]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_linear_and_ignores_onset_terms(
        ns in 3usize..12, nt in 1usize..8, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..10_000,
    ) {
        let mut r = rng(seed);
        let f: Vec<f64> = (0..ns * nt).map(|_| r.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..ns * nt).map(|_| r.random_range(-1.0..1.0)).collect();
        let offsets: Vec<f64> = (0..nt).map(|_| r.random_range(-5.0..5.0)).collect();
        let spec = GridSpec::new(ns, nt).unwrap();
        let score = |v: Vec<f64>| local_score(&InterventionGrid::from_values(spec, EmotionLabel::Angry, v).unwrap()).unwrap().local_score;
        let combined: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = score(combined);
        let rhs = alpha * score(f.clone()) + beta * score(g);
        prop_assert!((lhs - rhs).abs() <= 1e-9, "{} vs {}", lhs, rhs);
        let shifted: Vec<f64> = f.iter().enumerate().map(|(k, v)| v + offsets[k % nt]).collect();
        prop_assert!((score(shifted) - score(f)).abs() <= 1e-9);
        let w = column_weights(&spec.s_axis()).unwrap();
        prop_assert!(w.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn columns_rising_in_s_never_score_negative(ns in 3usize..14, nt in 1usize..6, seed in 0u64..10_000) {
        let mut r = rng(seed);
        let mut values = vec![0.0; ns * nt];
        for j in 0..nt {
            let mut acc = r.random_range(-1.0..1.0);
            for i in 0..ns {
                acc += r.random_range(0.0..1.0) * if r.random_bool(0.5) { 1.0 } else { 0.0 };
                values[i * nt + j] = acc;
            }
        }
        let g = InterventionGrid::from_values(GridSpec::new(ns, nt).unwrap(), EmotionLabel::Happy, values).unwrap();
        prop_assert!(local_score(&g).unwrap().local_score >= -1e-12);
    }

    #[test]
    fn p_values_are_bounded_and_ordered(seed in 0u64..10_000, ns in 3usize..8, nt in 1usize..5) {
        let mut r = rng(seed);
        let values: Vec<f64> = (0..ns * nt).map(|_| r.random_range(0.0..1.0)).collect();
        let g = InterventionGrid::from_values(GridSpec::new(ns, nt).unwrap(), EmotionLabel::Happy, values.clone()).unwrap();
        let cfg = PermutationConfig { permutations: 300, seed, ..Default::default() };
        let inc = permutation_test(&g, &cfg).unwrap();
        let strict = permutation_test(&g, &PermutationConfig { tie_rule: TieRule::Strict, ..cfg.clone() }).unwrap();
        prop_assert!(inc.p_value >= 1.0 / 301.0 && inc.p_value <= 1.0);
        prop_assert!((0.0..=1.0).contains(&strict.p_value));
        prop_assert!(strict.p_value <= inc.p_value);
        // adding a constant changes no score, so no decision either
        let shifted: Vec<f64> = values.iter().map(|v| v + 0.5).collect();
        let g2 = InterventionGrid::from_values(GridSpec::new(ns, nt).unwrap(), EmotionLabel::Happy, shifted).unwrap();
        prop_assert_eq!(permutation_test(&g2, &cfg).unwrap().p_value, inc.p_value);
    }

    #[test]
    fn holm_rejections_shrink_as_p_grows(p in prop::collection::vec(0.0f64..=1.0, 1..20), bump in 0.0f64..0.2, k in 0usize..20) {
        let base = holm_bonferroni(&p, 0.05).unwrap();
        let mut worse = p.clone();
        let idx = k % p.len();
        worse[idx] = (worse[idx] + bump).min(1.0);
        let after = holm_bonferroni(&worse, 0.05).unwrap();
        prop_assert!(after.iter().filter(|&&x| x).count() <= base.iter().filter(|&&x| x).count());
        // Holm never rejects less than Bonferroni
        for (i, &pi) in p.iter().enumerate() {
            if pi < 0.05 / p.len() as f64 {
                prop_assert!(base[i]);
            }
        }
    }
}
