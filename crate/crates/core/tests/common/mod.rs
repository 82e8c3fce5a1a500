//! Shared oracles for the integration tests and the acceptance suite.
#![allow(dead_code)]

use facesym_core::face::{Blendshapes, FaceModel, FaceModelParts, IndividualParams, Vec3};
use nalgebra::{Point3, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random but valid model: jittered vertices on both sides of the
/// midline (some exactly on it), random bases, a two-joint chain and
/// normalized random weights.
pub fn random_model(rng: &mut impl Rng) -> FaceModel {
    let n = rng.random_range(8..40);
    let template: Vec<Vec3> = (0..n)
        .map(|i| {
            let x = if i % 5 == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
            [x, rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5)]
        })
        .collect();
    let faces = (0..n as u32 - 2).map(|i| [i, i + 1, i + 2]).collect();
    let mut basis = |k: usize, scale: f64| {
        let data = (0..k * n * 3).map(|_| rng.random_range(-scale..scale)).collect();
        Blendshapes::new(k, n, data).unwrap()
    };
    let identity = basis(3, 0.1);
    let expression = basis(4, 0.1);
    let pose = basis(6, 0.02);
    let mut skin_weights = vec![0.0; 2 * n];
    for i in 0..n {
        let w: f64 = rng.random_range(0.0..1.0);
        skin_weights[i] = 1.0 - w;
        skin_weights[n + i] = w;
    }
    FaceModel::new(FaceModelParts {
        template,
        faces,
        identity,
        expression,
        pose,
        joints: vec![[0.0, 0.0, -0.3], [0.1, -0.4, -0.2]],
        joint_parents: vec![None, Some(0)],
        skin_weights,
        albedo: None,
    })
    .unwrap()
}

pub fn random_individual(model: &FaceModel, rng: &mut impl Rng, pose_scale: f64) -> IndividualParams {
    let mut ind = IndividualParams::neutral(model);
    ind.identity.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    ind.pose.iter_mut().for_each(|v| *v = rng.random_range(-pose_scale..=pose_scale));
    ind
}

pub fn random_expression(model: &FaceModel, rng: &mut impl Rng) -> Vec<f64> {
    (0..model.expression_dim()).map(|_| rng.random_range(-3.0..=3.0)).collect()
}

/// Unsplit blendshape model followed by skinning, written with nalgebra
/// rotations. `left_scale` multiplies the expression displacement of
/// vertices with `x > 1e-6`; 1 gives the plain model.
pub fn direct_geometry(model: &FaceModel, ind: &IndividualParams, expr: &[f64], left_scale: f64) -> Vec<Vec3> {
    let n = model.vertex_count();
    let add = |acc: &mut Vector3<f64>, basis: &Blendshapes, coeffs: &[f64], i: usize, scale: f64| {
        for (k, c) in coeffs.iter().enumerate() {
            *acc += Vector3::from(basis.get(k, i)) * (c * scale);
        }
    };
    let rest: Vec<Point3<f64>> = (0..n)
        .map(|i| {
            let mut d = Vector3::zeros();
            add(&mut d, model.identity_basis(), &ind.identity, i, 1.0);
            add(&mut d, model.pose_basis(), &ind.pose, i, 1.0);
            let side = if model.template()[i][0] > 1e-6 { left_scale } else { 1.0 };
            add(&mut d, model.expression_basis(), expr, i, side);
            Point3::from(Vector3::from(model.template()[i]) + d)
        })
        .collect();

    // world transform of each joint: parent ∘ rotation about the joint
    let joints = model.joints();
    let mut world: Vec<nalgebra::Isometry3<f64>> = Vec::new();
    for (j, joint) in joints.iter().enumerate() {
        let axis = Vector3::new(ind.pose[3 * j], ind.pose[3 * j + 1], ind.pose[3 * j + 2]);
        let r = Rotation3::from_scaled_axis(axis);
        let c = Vector3::from(*joint);
        let local = nalgebra::Isometry3::from_parts((c - r * c).into(), r.into());
        world.push(match model.joint_parents()[j] {
            Some(p) => world[p] * local,
            None => local,
        });
    }
    let w = model.skin_weights();
    rest.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut out = Vector3::zeros();
            for (j, g) in world.iter().enumerate() {
                out += (g * p).coords * w[j * n + i];
            }
            [out.x, out.y, out.z]
        })
        .collect()
}

pub fn max_abs_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs())).fold(0.0, f64::max)
}

/// Exact two-sided permutation p-value of a single-column grid: the share of
/// all orderings whose weighted sum is at least as large in magnitude.
pub fn exhaustive_p(values: &[f64], weights: &[f64]) -> f64 {
    let n = values.len();
    let score = |order: &[usize]| order.iter().zip(weights).map(|(&i, w)| w * values[i]).sum::<f64>();
    let identity: Vec<usize> = (0..n).collect();
    let observed = score(&identity).abs();
    let mut orders = Vec::new();
    permutations(&mut identity.clone(), 0, &mut orders);
    let hits = orders.iter().filter(|o| score(o).abs() >= observed - 1e-12).count();
    hits as f64 / orders.len() as f64
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Holm's procedure via step-down adjusted p-values:
/// `p̃_(k) = max_{j ≤ k} min(1, (m − j + 1)·p_(j))`, reject when `p̃ < δ`.
pub fn holm_adjusted_oracle(p: &[f64], delta: f64) -> Vec<bool> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let mut reject = vec![false; m];
    let mut running = 0.0f64;
    for (j, &idx) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * p[idx]).min(1.0));
        reject[idx] = running < delta;
    }
    reject
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter().map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>()
}
