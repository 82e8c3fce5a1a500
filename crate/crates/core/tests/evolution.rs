mod common;

use common::*;
use facesym_core::classify::{
    geometric_fixture, Classifier, ConstantClassifier, GeometricConfig, Provenance, Surface, SurfaceClassifier,
};
use facesym_core::evolution::{minimize, optimize, optimize_expression, DeConfig, StopReason};
use facesym_core::face::{sample_individual, FaceModel};
use facesym_core::probe::render_intervention;
use facesym_core::render::RenderSettings;
use facesym_core::EmotionLabel;
use proptest::prelude::*;

/// Long runs without a stagnation stop; see the README for why the default
/// budget is too short for these benchmarks.
fn long_run(seed: u64) -> DeConfig {
    DeConfig { max_generations: 1000, stagnation_generations: 1000, seed, ..DeConfig::default() }
}

#[test]
fn rastrigin_five_mostly_solved() {
    let solved = (0..10)
        .filter(|&seed| optimize(|x: &[f64]| Ok(rastrigin(x)), 5, &long_run(seed)).unwrap().1.best_value < 1e-2)
        .count();
    assert!(solved >= 8, "{solved}/10");
}

#[test]
fn sphere_ten_and_linear_corner() {
    let (_, t) = optimize(|x: &[f64]| Ok(x.iter().map(|v| v * v).sum()), 10, &long_run(0)).unwrap();
    assert!(t.best_value < 1e-6, "{}", t.best_value);
    let (best, t) = optimize(|x: &[f64]| Ok(-x.iter().sum::<f64>()), 5, &long_run(0)).unwrap();
    assert!(best.iter().all(|v| (v - 3.0).abs() <= 1e-6), "{best:?}");
    assert_eq!(t.in_bounds, t.evaluations);
}

#[test]
fn smile_coefficient_matches_brute_force_scan() {
    let model = FaceModel::builtin().with_expression_subset(&[0]).unwrap();
    let settings = RenderSettings::default().with_size(64, 64);
    let blind = geometric_fixture(GeometricConfig { b: 0.0, ..Default::default() });
    let mut ind = sample_individual(&model, 7);
    let activation = |c: f64| {
        let img = render_intervention(&model, &ind, &[c], 1.0, 1.0, &settings).unwrap();
        blind.activation(&img, &Provenance::none(), EmotionLabel::Happy).unwrap()
    };
    let scan: Vec<(f64, f64)> = (0..=120).map(|k| -3.0 + 0.05 * k as f64).map(|c| (c, activation(c))).collect();
    let best = scan.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);
    let plateau_start = scan.iter().find(|&&(_, a)| a == best).unwrap().0;
    assert!(plateau_start > 0.0 && activation(3.0) == best, "maximizer not at the upper bound");

    let cfg = DeConfig { population_size: Some(10), max_generations: 30, ..DeConfig::default() };
    let fit = optimize_expression(&model, &mut ind, 7, EmotionLabel::Happy, &blind, &settings, &cfg).unwrap();
    assert!(fit.activation >= best, "{} < {best}", fit.activation);
    assert!(fit.expression[0] >= plateau_start - 0.05, "{:?}", fit.expression);
    assert_eq!(ind.expression(EmotionLabel::Happy).unwrap(), fit.expression.as_slice());
}

#[test]
fn surface_fixture_stops_at_first_generation() {
    let model = FaceModel::builtin();
    let mut ind = sample_individual(&model, 0);
    let c = SurfaceClassifier::uniform(Surface::onset_times_symmetry());
    let settings = RenderSettings::default().with_size(16, 16);
    let fit = optimize_expression(&model, &mut ind, 0, EmotionLabel::Sad, &c, &settings, &DeConfig::default()).unwrap();
    assert_eq!(fit.activation, 1.0);
    assert_eq!(fit.trace.stop, StopReason::TargetReached);
    assert_eq!(fit.trace.best_per_generation.len(), 1);
}

#[test]
fn constant_fixture_gives_flat_trace() {
    let model = FaceModel::builtin();
    let mut ind = sample_individual(&model, 0);
    let c = ConstantClassifier::uniform(0.4);
    let settings = RenderSettings::default().with_size(16, 16);
    let fit = optimize_expression(&model, &mut ind, 0, EmotionLabel::Angry, &c, &settings, &DeConfig::default()).unwrap();
    assert!(fit.trace.best_per_generation.iter().all(|&v| v == 0.6));
    assert!(fit.below_floor);
    assert_eq!(fit.trace.stop, StopReason::Stagnation);
    assert!(fit.expression.iter().all(|v| v.abs() <= 3.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elitist_bounded_and_reproducible(seed in 0u64..1000, dim in 1usize..6, shift in -2.0f64..2.0) {
        let f = |x: &[f64]| Ok(x.iter().map(|v| (v - shift).powi(2) + (4.0 * v).cos()).sum::<f64>());
        let cfg = DeConfig { max_generations: 60, seed, ..DeConfig::default() };
        let (best, trace) = minimize(f, dim, &cfg, None).unwrap();
        prop_assert!(trace.best_per_generation.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(trace.in_bounds, trace.evaluations);
        prop_assert!(best.iter().all(|v| (-3.0..=3.0).contains(v)));
        prop_assert_eq!(minimize(f, dim, &cfg, None).unwrap(), (best, trace));
    }
}
