//! Procedural test head.
//!
//! A gently domed 19×21 vertex sheet clipped to an ellipse, with painted
//! lips, eyes and brows. Every basis, color and triangle is built from `|x|`
//! and `x·g(|x|)` terms, so the model is mirror-symmetric bit for bit and
//! any asymmetry in a render comes from the symmetry scalar alone.

use super::{Albedo, Blendshapes, FaceModel, FaceModelParts, Vec3};

const COLS: usize = 19;
const ROWS: usize = 21;
const X_STEP: f64 = 1.0 / 9.0;
const Y_STEP: f64 = 0.12;

const SKIN: Vec3 = [0.86, 0.69, 0.58];
const LIPS: Vec3 = [0.42, 0.12, 0.12];
const EYES: Vec3 = [0.12, 0.10, 0.10];
const BROWS: Vec3 = [0.30, 0.20, 0.15];

fn gauss(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn index(row: usize, col: usize) -> usize {
    row * COLS + col
}

fn coords(row: usize, col: usize) -> (f64, f64) {
    let x = (col as f64 - ((COLS - 1) / 2) as f64) * X_STEP;
    let y = (row as f64 - ((ROWS - 1) / 2) as f64) * Y_STEP;
    (x, y)
}

fn depth(x: f64, y: f64) -> f64 {
    let nose = 0.12 * gauss(x * x, 0.12) * gauss((y + 0.05) * (y + 0.05), 0.2);
    0.35 * (1.0 - 0.6 * x * x - 0.35 * y * y) + nose
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Skin,
    Lips,
    Eyes,
    Brows,
}

fn region(x: f64, y: f64) -> Region {
    let ax = x.abs();
    if ax <= 0.5 && (-0.73..=-0.59).contains(&y) {
        Region::Lips
    } else if (ax - 0.4) * (ax - 0.4) + (y - 0.24) * (y - 0.24) <= 0.14 * 0.14 {
        Region::Eyes
    } else if (0.18..=0.65).contains(&ax) && (0.46..=0.62).contains(&y) {
        Region::Brows
    } else {
        Region::Skin
    }
}

/// Expression shapes: smile, brow raise, jaw open, lip stretch.
fn expression(k: usize, x: f64, y: f64) -> Vec3 {
    let ax = x.abs();
    match k {
        0 => {
            let w = gauss((ax - 0.45) * (ax - 0.45) + (y + 0.64) * (y + 0.64), 0.18);
            [x * 0.12 * w, 0.10 * w * (ax / 0.45).min(1.5), 0.0]
        }
        1 => {
            let w = gauss((y - 0.54) * (y - 0.54), 0.12) * gauss((ax - 0.4) * (ax - 0.4), 0.3);
            [0.0, 0.08 * w, 0.0]
        }
        2 => {
            let w = gauss(x * x, 0.3) * ((-0.55 - y) / 0.25).clamp(0.0, 1.0);
            [0.0, -0.10 * w, 0.0]
        }
        _ => {
            let w = gauss((y + 0.64) * (y + 0.64), 0.12) * gauss(x * x, 0.5);
            [x * 0.15 * w, 0.0, 0.0]
        }
    }
}

/// Identity shapes: width, height, depth, nose, jaw width, eye-line height.
fn identity(k: usize, x: f64, y: f64) -> Vec3 {
    match k {
        0 => [0.05 * x, 0.0, 0.0],
        1 => [0.0, 0.05 * y, 0.0],
        2 => [0.0, 0.0, 0.04 * (1.0 - x * x - 0.5 * y * y)],
        3 => [0.0, 0.0, 0.04 * gauss(x * x, 0.12) * gauss((y + 0.05) * (y + 0.05), 0.2)],
        4 => [0.05 * x * (-y).clamp(0.0, 1.0), 0.0, 0.0],
        _ => [0.0, 0.03 * gauss((y - 0.3) * (y - 0.3), 0.25), 0.0],
    }
}

fn jaw_weight(y: f64) -> f64 {
    ((-0.3 - y) / 0.3).clamp(0.0, 1.0)
}

/// Pose correctives: none for the root, a small lower-face bulge per jaw axis.
fn pose_corrective(k: usize, x: f64, y: f64) -> Vec3 {
    if k < 3 {
        return [0.0; 3];
    }
    let w = jaw_weight(y) * gauss(x * x, 0.5);
    match k {
        3 => [0.0, 0.0, 0.02 * w],
        4 => [0.0, 0.01 * w, 0.0],
        _ => [0.0, 0.0, -0.01 * w],
    }
}

/// Appearance shapes: brightness, redness, lip tone, brow tone.
fn appearance(k: usize, r: Region) -> Vec3 {
    match (k, r) {
        (0, Region::Skin) => [0.05, 0.05, 0.05],
        (1, Region::Skin) => [0.04, -0.01, -0.02],
        (2, Region::Lips) => [-0.05, -0.02, -0.02],
        (3, Region::Brows) => [-0.05, -0.04, -0.03],
        _ => [0.0; 3],
    }
}

pub(super) fn build() -> FaceModel {
    let n = ROWS * COLS;
    let pts: Vec<(f64, f64)> = (0..ROWS).flat_map(|r| (0..COLS).map(move |c| coords(r, c))).collect();

    let template: Vec<Vec3> = pts.iter().map(|&(x, y)| [x, y, depth(x, y)]).collect();

    // Cells left of the midline get one diagonal; each is paired with its
    // mirror cell using corresponding vertex order.
    let mirror = |i: usize| {
        let (r, c) = (i / COLS, i % COLS);
        index(r, COLS - 1 - c)
    };
    let mut faces = Vec::new();
    for r in 0..ROWS - 1 {
        for c in 0..(COLS - 1) / 2 {
            let (a, b, cc, d) = (index(r, c), index(r, c + 1), index(r + 1, c + 1), index(r + 1, c));
            let (x0, y0) = pts[a];
            let (cx, cy) = (x0 + 0.5 * X_STEP, y0 + 0.5 * Y_STEP);
            if cx * cx + (cy / 1.2) * (cy / 1.2) > 1.02 {
                continue;
            }
            for tri in [[a, b, cc], [a, cc, d]] {
                faces.push(tri.map(|i| i as u32));
                faces.push(tri.map(|i| mirror(i) as u32));
            }
        }
    }

    let expression = Blendshapes::from_fn(4, n, |k, i| expression(k, pts[i].0, pts[i].1));
    let identity = Blendshapes::from_fn(6, n, |k, i| identity(k, pts[i].0, pts[i].1));
    let pose = Blendshapes::from_fn(6, n, |k, i| pose_corrective(k, pts[i].0, pts[i].1));

    let joints = vec![[0.0, 0.0, -0.3], [0.0, -0.35, -0.2]];
    let mut skin_weights = vec![0.0; 2 * n];
    for (i, &(_, y)) in pts.iter().enumerate() {
        let w = jaw_weight(y);
        skin_weights[i] = 1.0 - w;
        skin_weights[n + i] = w;
    }

    let regions: Vec<Region> = pts.iter().map(|&(x, y)| region(x, y)).collect();
    let mean = regions
        .iter()
        .map(|r| match r {
            Region::Skin => SKIN,
            Region::Lips => LIPS,
            Region::Eyes => EYES,
            Region::Brows => BROWS,
        })
        .collect();
    let albedo = Albedo { mean, basis: Blendshapes::from_fn(4, n, |k, i| appearance(k, regions[i])) };

    FaceModel::new(FaceModelParts {
        template,
        faces,
        identity,
        expression,
        pose,
        joints,
        joint_parents: vec![None, Some(0)],
        skin_weights,
        albedo: Some(albedo),
    })
    .expect("builtin model is valid")
}
