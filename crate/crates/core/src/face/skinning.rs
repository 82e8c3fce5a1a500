use super::{Vec3, WEIGHT_SUM_TOL};
use crate::error::{Error, Result};

type Mat3 = [[f64; 3]; 3];

/// Rigid transform `x ↦ r·x + t`.
#[derive(Debug, Clone, Copy)]
struct Rigid {
    r: Mat3,
    t: Vec3,
}

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

impl Rigid {
    fn apply(&self, v: &Vec3) -> Vec3 {
        let p = mat_vec(&self.r, v);
        [p[0] + self.t[0], p[1] + self.t[1], p[2] + self.t[2]]
    }

    fn then(&self, inner: &Rigid) -> Rigid {
        // self ∘ inner
        let r = mat_mul(&self.r, &inner.r);
        let t = self.apply(&inner.t);
        Rigid { r, t }
    }
}

/// Rodrigues' formula for an axis-angle vector.
pub fn axis_angle_to_matrix(w: Vec3) -> [[f64; 3]; 3] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if theta == 0.0 {
        return IDENTITY;
    }
    let k = [w[0] / theta, w[1] / theta, w[2] / theta];
    let (s, c) = theta.sin_cos();
    let v = 1.0 - c;
    [
        [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
        [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
        [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
    ]
}

pub(super) fn validate_weights(weights: &[f64], joints: usize, vertices: usize) -> Result<()> {
    if weights.len() != joints * vertices {
        return Err(Error::ModelValidation(format!(
            "skin weights have {} entries, expected {joints}×{vertices}",
            weights.len()
        )));
    }
    for i in 0..vertices {
        let mut sum = 0.0;
        for j in 0..joints {
            let w = weights[j * vertices + i];
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::ModelValidation(format!("negative or non-finite weight {w} for vertex {i}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::ModelValidation(format!("weights of vertex {i} sum to {sum}")));
        }
    }
    Ok(())
}

/// Pose rest-shape vertices with linear blend skinning.
///
/// `pose` holds one axis-angle rotation per joint (3 values each); joint `j`
/// rotates about its rest position and inherits its parent's transform.
/// `weights` is `joints × vertices`, every column summing to one.
/// Identity rotations leave the input untouched.
pub fn linear_blend_skin(
    rest: &[Vec3],
    joints: &[Vec3],
    parents: &[Option<usize>],
    pose: &[f64],
    weights: &[f64],
) -> Result<Vec<Vec3>> {
    let kj = joints.len();
    if pose.len() != 3 * kj {
        return Err(Error::ParameterDomain(format!("pose has {} values, expected {}", pose.len(), 3 * kj)));
    }
    if parents.len() != kj {
        return Err(Error::ModelValidation("parent list length differs from joint count".into()));
    }
    validate_weights(weights, kj, rest.len())?;
    if pose.iter().any(|p| !p.is_finite()) {
        return Err(Error::ParameterDomain("non-finite pose value".into()));
    }
    if pose.iter().all(|&p| p == 0.0) {
        return Ok(rest.to_vec());
    }

    let mut global: Vec<Rigid> = Vec::with_capacity(kj);
    for (j, joint) in joints.iter().enumerate() {
        let r = axis_angle_to_matrix([pose[3 * j], pose[3 * j + 1], pose[3 * j + 2]]);
        // rotate about the joint: x ↦ r (x − J) + J
        let rj = mat_vec(&r, joint);
        let local = Rigid { r, t: [joint[0] - rj[0], joint[1] - rj[1], joint[2] - rj[2]] };
        let g = match parents[j] {
            Some(p) if p < j => global[p].then(&local),
            Some(p) => {
                return Err(Error::ModelValidation(format!("joint {j} has parent {p}; parents must precede children")))
            }
            None => local,
        };
        global.push(g);
    }

    let n = rest.len();
    Ok(rest
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut out = [0.0; 3];
            for (j, g) in global.iter().enumerate() {
                let w = weights[j * n + i];
                if w != 0.0 {
                    let p = g.apply(v);
                    out[0] += w * p[0];
                    out[1] += w * p[1];
                    out[2] += w * p[2];
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verts() -> Vec<Vec3> {
        vec![[0.3, 0.1, -0.2], [1.0, 2.0, 3.0], [-0.5, 0.25, 0.0]]
    }

    #[test]
    fn identity_pose_is_noop() {
        let v = verts();
        let w = vec![0.25, 0.5, 1.0, 0.75, 0.5, 0.0];
        let out = linear_blend_skin(&v, &[[0.0; 3], [0.0, 1.0, 0.0]], &[None, Some(0)], &[0.0; 6], &w).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn single_joint_rotates_rigidly() {
        let v = verts();
        let joint = [0.2, -0.1, 0.4];
        let aa = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let out = linear_blend_skin(&v, &[joint], &[None], &aa, &[1.0; 3]).unwrap();
        // 90° about z: (x, y) ↦ (−y, x) around the joint
        for (p, q) in v.iter().zip(&out) {
            let d = [p[0] - joint[0], p[1] - joint[1], p[2] - joint[2]];
            let want = [joint[0] - d[1], joint[1] + d[0], joint[2] + d[2]];
            for c in 0..3 {
                assert!((q[c] - want[c]).abs() <= 1e-9, "{q:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn half_weights_give_midpoint() {
        let v = vec![[1.0, 0.0, 0.0]];
        let joints = [[0.0; 3], [0.0, 0.0, 0.0]];
        let pose = [0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::PI];
        let out = linear_blend_skin(&v, &joints, &[None, Some(0)], &pose, &[0.5, 0.5]).unwrap();
        // copies at (1,0,0) and (−1,0,0)
        assert!(out[0].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn child_inherits_parent_rotation() {
        let v = vec![[0.0, 2.0, 0.0]];
        let joints = [[0.0; 3], [0.0, 1.0, 0.0]];
        let quarter = std::f64::consts::FRAC_PI_2;
        let pose = [0.0, 0.0, quarter, 0.0, 0.0, 0.0];
        let out = linear_blend_skin(&v, &joints, &[None, Some(0)], &pose, &[0.0, 1.0]).unwrap();
        assert!((out[0][0] + 2.0).abs() < 1e-12 && out[0][1].abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_rejected() {
        let v = vec![[0.0; 3]];
        let pose = [0.1, 0.0, 0.0];
        for w in [[0.9], [-0.1], [f64::NAN]] {
            assert!(matches!(linear_blend_skin(&v, &[[0.0; 3]], &[None], &pose, &w), Err(Error::ModelValidation(_))));
        }
    }

    #[test]
    fn rodrigues_is_orthonormal() {
        let r = axis_angle_to_matrix([0.3, -1.2, 0.7]);
        let rtr = mat_mul(&[[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]], &r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((rtr[i][j] - IDENTITY[i][j]).abs() < 1e-12);
            }
        }
    }
}
