mod common;

use common::*;
use facesym_core::face::{
    decode_model, evaluate_geometry, linear_blend_skin, sample_individual, save_model_binary, save_model_json,
    split_expression_basis, FaceModel, GeometryEvaluator, IndividualParams,
};
use facesym_core::render::{render, RenderSettings};
use facesym_core::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn full_symmetry_matches_unsplit_model() {
    let mut r = rng(1);
    for _ in 0..100 {
        let model = random_model(&mut r);
        let ind = random_individual(&model, &mut r, 0.5);
        let e = random_expression(&model, &mut r);
        let ours = evaluate_geometry(&model, &ind, &e, 1.0, 1.0).unwrap();
        assert!(max_abs_diff(&ours, &direct_geometry(&model, &ind, &e, 1.0)) <= 1e-9);
    }
}

#[test]
fn zero_onset_is_neutral_for_every_symmetry() {
    let mut r = rng(2);
    for _ in 0..50 {
        let model = random_model(&mut r);
        let ind = random_individual(&model, &mut r, 0.5);
        let e = random_expression(&model, &mut r);
        let neutral = evaluate_geometry(&model, &ind, &vec![0.0; model.expression_dim()], 1.0, 1.0).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(evaluate_geometry(&model, &ind, &e, s, 0.0).unwrap(), neutral);
        }
    }
}

#[test]
fn zero_symmetry_drops_left_expression() {
    let mut r = rng(3);
    for _ in 0..50 {
        let model = random_model(&mut r);
        let ind = random_individual(&model, &mut r, 0.0);
        let e = random_expression(&model, &mut r);
        let ours = evaluate_geometry(&model, &ind, &e, 0.0, 1.0).unwrap();
        assert!(max_abs_diff(&ours, &direct_geometry(&model, &ind, &e, 0.0)) <= 1e-9);
        // with zero pose only the right side moves
        let neutral = evaluate_geometry(&model, &ind, &[0.0; 4], 1.0, 1.0).unwrap();
        for (i, left) in model.left_mask().iter().enumerate() {
            if *left {
                assert!(max_abs_diff(&ours[i..=i], &neutral[i..=i]) <= 1e-12);
            }
        }
    }
}

#[test]
fn split_reassembles_bit_for_bit() {
    let mut r = rng(4);
    for _ in 0..100 {
        let model = random_model(&mut r);
        let split = split_expression_basis(&model);
        let n = model.vertex_count();
        for k in 0..model.expression_dim() {
            for i in 0..n {
                let (l, rt, full) = (split.left.get(k, i), split.right.get(k, i), model.expression_basis().get(k, i));
                for a in 0..3 {
                    assert_eq!(l[a] + rt[a], full[a]);
                }
                let side = if model.left_mask()[i] { rt } else { l };
                assert_eq!(side, [0.0; 3]);
            }
        }
    }
}

#[test]
fn geometry_is_bilinear_in_symmetry_and_onset() {
    let mut r = rng(5);
    for _ in 0..100 {
        let model = random_model(&mut r);
        let ind = random_individual(&model, &mut r, 0.5);
        let e = random_expression(&model, &mut r);
        let ev = GeometryEvaluator::new(&model);
        let g = |s: f64, t: f64| ev.evaluate(&ind, &e, s, t).unwrap();
        let (g00, g01, g11) = (g(0.0, 0.0), g(0.0, 1.0), g(1.0, 1.0));
        let (s, t) = (r.random_range(0.0..=1.0), r.random_range(0.0..=1.0));
        let got = g(s, t);
        for i in 0..got.len() {
            for a in 0..3 {
                let want = g00[i][a] + t * (g01[i][a] - g00[i][a]) + s * t * (g11[i][a] - g01[i][a]);
                assert!((got[i][a] - want).abs() <= 1e-12, "{} vs {want}", got[i][a]);
            }
        }
    }
}

#[test]
fn out_of_domain_parameters_rejected() {
    let model = FaceModel::builtin();
    let ind = sample_individual(&model, 0);
    let e = vec![0.5; 4];
    for (s, t) in [(-0.1, 0.5), (1.1, 0.5), (0.5, -1e-9), (0.5, 1.5), (f64::NAN, 0.5)] {
        assert!(matches!(evaluate_geometry(&model, &ind, &e, s, t), Err(Error::ParameterDomain(_))));
    }
    assert!(evaluate_geometry(&model, &ind, &[3.5, 0.0, 0.0, 0.0], 1.0, 1.0).is_err());
    assert!(evaluate_geometry(&model, &ind, &[0.0; 3], 1.0, 1.0).is_err());
}

#[test]
fn skinning_rejects_bad_weights() {
    let rest = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let joints = vec![[0.0; 3]];
    let pose = [0.0, 0.0, 0.3];
    assert!(linear_blend_skin(&rest, &joints, &[None], &pose, &[1.0, 0.9]).is_err());
    assert!(linear_blend_skin(&rest, &joints, &[None], &pose, &[1.0, -0.0001]).is_err());
    let moved = linear_blend_skin(&rest, &joints, &[None], &pose, &[1.0, 1.0]).unwrap();
    assert!((moved[1][0] - 0.3f64.cos()).abs() < 1e-15 && (moved[1][1] - 0.3f64.sin()).abs() < 1e-15);
}

#[test]
fn containers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = FaceModel::builtin();
    let bin = dir.path().join("m.fsm");
    let json = dir.path().join("m.json");
    save_model_binary(&model, &bin).unwrap();
    save_model_json(&model, &json).unwrap();
    assert_eq!(facesym_core::face::load_model(&bin).unwrap(), model);
    assert_eq!(facesym_core::face::load_model(&json).unwrap(), model);
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[0] ^= 0xff;
    assert!(matches!(decode_model(&bytes), Err(Error::ModelFormat(_))));
}

fn mirror_index(model: &FaceModel) -> Vec<usize> {
    let t = model.template();
    t.iter()
        .map(|p| t.iter().position(|q| q[0] == -p[0] && q[1] == p[1] && q[2] == p[2]).expect("mirror vertex"))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn builtin_full_symmetry_is_mirror_exact(seed in 0u64..1000, e in prop::array::uniform4(-3.0f64..=3.0), t in 0.0f64..=1.0) {
        let model = FaceModel::builtin();
        let ind = IndividualParams { pose: vec![0.0; model.pose_dim()], ..sample_individual(&model, seed) };
        let v = evaluate_geometry(&model, &ind, &e, 1.0, t).unwrap();
        let m = mirror_index(&model);
        for (i, &j) in m.iter().enumerate() {
            prop_assert_eq!(v[i][0], -v[j][0]);
            prop_assert_eq!(v[i][1], v[j][1]);
        }
        let settings = RenderSettings::default().with_size(48, 48);
        let colors = model.vertex_colors(&ind.appearance).unwrap();
        let img = render(&v, model.faces(), Some(&colors), &settings).unwrap();
        prop_assert_eq!(img.mirrored(), img);
    }

    #[test]
    fn reduced_symmetry_breaks_the_mirror(seed in 0u64..1000, s in 0.0f64..0.5) {
        let model = FaceModel::builtin();
        let ind = sample_individual(&model, seed);
        let v = evaluate_geometry(&model, &ind, &[3.0, 0.0, 3.0, 0.0], s, 1.0).unwrap();
        let colors = model.vertex_colors(&ind.appearance).unwrap();
        let img = render(&v, model.faces(), Some(&colors), &RenderSettings::default().with_size(64, 64)).unwrap();
        prop_assert_ne!(img.mirrored(), img);
    }
}
