//! Blendshape face model with a controllable symmetry scalar.
//!
//! A [`FaceModel`] holds a template mesh plus identity, expression and pose
//! displacement bases, a small joint hierarchy and skinning weights. The
//! expression basis can be split into a left and a right half
//! ([`split_expression_basis`]); [`evaluate_geometry`] scales the left half by
//! the symmetry scalar `s` and the expression coefficients by the onset `t`
//! before skinning.
//!
//! Coordinates: `x` grows towards the subject's left, `y` up, `z` towards the
//! camera.

mod builtin;
mod container;
mod individual;
mod skinning;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{decode_model, load_model, save_model_binary, save_model_json, MAGIC, VERSION};
pub use individual::{sample_individual, IndividualParams};
pub use skinning::{axis_angle_to_matrix, linear_blend_skin};

pub type Vec3 = [f64; 3];

/// Vertices with `|x| <= MIDLINE_EPS` belong to the right side of the face.
pub const MIDLINE_EPS: f64 = 1e-6;

/// Expression coefficients are searched and accepted in `[-EXPR_BOUND, EXPR_BOUND]`.
pub const EXPR_BOUND: f64 = 3.0;

/// Tolerance on skinning-weight column sums.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A stack of per-vertex displacement fields, `count × vertices × 3`,
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blendshapes {
    count: usize,
    vertices: usize,
    data: Vec<f64>,
}

impl Blendshapes {
    pub fn new(count: usize, vertices: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != count * vertices * 3 {
            return Err(Error::ModelValidation(format!(
                "blendshape data has {} values, expected {count}×{vertices}×3",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelValidation("non-finite blendshape value".into()));
        }
        Ok(Self { count, vertices, data })
    }

    pub fn zeros(count: usize, vertices: usize) -> Self {
        Self { count, vertices, data: vec![0.0; count * vertices * 3] }
    }

    /// Build from one closure evaluated per (shape, vertex).
    pub fn from_fn(count: usize, vertices: usize, mut f: impl FnMut(usize, usize) -> Vec3) -> Self {
        let mut data = Vec::with_capacity(count * vertices * 3);
        for k in 0..count {
            for i in 0..vertices {
                data.extend_from_slice(&f(k, i));
            }
        }
        Self { count, vertices, data }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Displacement of vertex `i` in shape `k`.
    pub fn get(&self, k: usize, i: usize) -> Vec3 {
        let o = (k * self.vertices + i) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Keep only the shapes listed in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Self {
        let stride = self.vertices * 3;
        let mut data = Vec::with_capacity(keep.len() * stride);
        for &k in keep {
            data.extend_from_slice(&self.data[k * stride..(k + 1) * stride]);
        }
        Self { count: keep.len(), vertices: self.vertices, data }
    }

    /// The basis multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            count: self.count,
            vertices: self.vertices,
            data: self.data.iter().map(|v| factor * v).collect(),
        }
    }

    /// Linear blend `Σ_k coeffs[k] · shape_k`.
    pub fn blend(&self, coeffs: &[f64]) -> Vec<Vec3> {
        let mut out = vec![[0.0; 3]; self.vertices];
        self.blend_into(coeffs, 1.0, &mut out);
        out
    }

    /// Accumulate `Σ_k coeffs[k] · (basis_scale · shape_k)` into `out`.
    ///
    /// The basis is scaled before it is weighted, matching a blend with
    /// [`Blendshapes::scaled`] without allocating the scaled copy.
    pub fn blend_into(&self, coeffs: &[f64], basis_scale: f64, out: &mut [Vec3]) {
        debug_assert_eq!(coeffs.len(), self.count);
        debug_assert_eq!(out.len(), self.vertices);
        let mut acc = vec![[0.0; 3]; self.vertices];
        for (k, &c) in coeffs.iter().enumerate() {
            let shape = &self.data[k * self.vertices * 3..(k + 1) * self.vertices * 3];
            for (a, d) in acc.iter_mut().zip(shape.chunks_exact(3)) {
                a[0] += c * (basis_scale * d[0]);
                a[1] += c * (basis_scale * d[1]);
                a[2] += c * (basis_scale * d[2]);
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            o[0] += a[0];
            o[1] += a[1];
            o[2] += a[2];
        }
    }

    /// Copy with every vertex for which `keep(i)` is false zeroed.
    fn masked(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut data = self.data.clone();
        for k in 0..self.count {
            for i in 0..self.vertices {
                if !keep(i) {
                    let o = (k * self.vertices + i) * 3;
                    data[o..o + 3].fill(0.0);
                }
            }
        }
        Self { count: self.count, vertices: self.vertices, data }
    }
}

/// Per-vertex base color and a linear color basis driven by the
/// appearance parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Albedo {
    pub mean: Vec<Vec3>,
    pub basis: Blendshapes,
}

/// Parts from which a [`FaceModel`] is assembled; the left-side mask is
/// derived, never supplied.
#[derive(Debug, Clone)]
pub struct FaceModelParts {
    pub template: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub identity: Blendshapes,
    pub expression: Blendshapes,
    pub pose: Blendshapes,
    pub joints: Vec<Vec3>,
    pub joint_parents: Vec<Option<usize>>,
    /// `joints × vertices`, row-major.
    pub skin_weights: Vec<f64>,
    pub albedo: Option<Albedo>,
}

/// Immutable, validated face model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceModel {
    template: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    identity: Blendshapes,
    expression: Blendshapes,
    pose: Blendshapes,
    joints: Vec<Vec3>,
    joint_parents: Vec<Option<usize>>,
    skin_weights: Vec<f64>,
    left_mask: Vec<bool>,
    albedo: Option<Albedo>,
}

/// The expression basis split at the face midline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitExpressionBasis {
    pub left: Blendshapes,
    pub right: Blendshapes,
}

fn left_of_midline(v: &Vec3) -> bool {
    v[0] > MIDLINE_EPS
}

impl FaceModel {
    pub fn new(parts: FaceModelParts) -> Result<Self> {
        let left_mask = parts.template.iter().map(left_of_midline).collect();
        let model = Self {
            template: parts.template,
            faces: parts.faces,
            identity: parts.identity,
            expression: parts.expression,
            pose: parts.pose,
            joints: parts.joints,
            joint_parents: parts.joint_parents,
            skin_weights: parts.skin_weights,
            left_mask,
            albedo: parts.albedo,
        };
        model.validate()?;
        Ok(model)
    }

    /// The procedural test head shipped with the crate.
    pub fn builtin() -> Self {
        builtin::build()
    }

    /// Check every structural invariant. Called by the constructor and by
    /// the container loader.
    pub fn validate(&self) -> Result<()> {
        let n = self.template.len();
        let bad = |m: String| Err(Error::ModelValidation(m));
        if n == 0 {
            return bad("template has no vertices".into());
        }
        if self.template.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite template coordinate".into());
        }
        for (name, b) in [
            ("identity", &self.identity),
            ("expression", &self.expression),
            ("pose", &self.pose),
        ] {
            if b.vertices != n {
                return bad(format!("{name} basis covers {} vertices, template has {n}", b.vertices));
            }
            if b.data.len() != b.count * n * 3 {
                return bad(format!("{name} basis has inconsistent length"));
            }
        }
        if let Some(face) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return bad(format!("face {face:?} indexes past {n} vertices"));
        }
        let kj = self.joints.len();
        if kj == 0 {
            return bad("model needs at least one joint".into());
        }
        if self.joint_parents.len() != kj {
            return bad("joint parent list length differs from joint count".into());
        }
        for (j, p) in self.joint_parents.iter().enumerate() {
            match p {
                Some(p) if *p >= j => return bad(format!("joint {j} has parent {p}; parents must precede children")),
                None if j != 0 => return bad(format!("joint {j} has no parent; only joint 0 may be the root")),
                _ => {}
            }
        }
        if self.joint_parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        if self.pose.count != 3 * kj {
            return bad(format!(
                "pose basis has {} shapes; expected 3 per joint ({})",
                self.pose.count,
                3 * kj
            ));
        }
        skinning::validate_weights(&self.skin_weights, kj, n)?;
        if self.left_mask.len() != n
            || self.template.iter().zip(&self.left_mask).any(|(v, &m)| left_of_midline(v) != m)
        {
            return bad("left mask disagrees with template x > midline rule".into());
        }
        if let Some(albedo) = &self.albedo {
            if albedo.mean.len() != n || albedo.basis.vertices != n {
                return bad("albedo does not cover every vertex".into());
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }
    pub fn template(&self) -> &[Vec3] {
        &self.template
    }
    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }
    pub fn identity_basis(&self) -> &Blendshapes {
        &self.identity
    }
    pub fn expression_basis(&self) -> &Blendshapes {
        &self.expression
    }
    pub fn pose_basis(&self) -> &Blendshapes {
        &self.pose
    }
    pub fn joints(&self) -> &[Vec3] {
        &self.joints
    }
    pub fn joint_parents(&self) -> &[Option<usize>] {
        &self.joint_parents
    }
    pub fn skin_weights(&self) -> &[f64] {
        &self.skin_weights
    }
    pub fn left_mask(&self) -> &[bool] {
        &self.left_mask
    }
    pub fn albedo(&self) -> Option<&Albedo> {
        self.albedo.as_ref()
    }
    pub fn identity_dim(&self) -> usize {
        self.identity.count
    }
    pub fn expression_dim(&self) -> usize {
        self.expression.count
    }
    pub fn pose_dim(&self) -> usize {
        self.pose.count
    }
    pub fn appearance_dim(&self) -> usize {
        self.albedo.as_ref().map_or(0, |a| a.basis.count)
    }

    /// Copy of the model keeping only the listed expression shapes.
    pub fn with_expression_subset(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&k) = keep.iter().find(|&&k| k >= self.expression.count) {
            return Err(Error::InvalidInput(format!("expression shape {k} does not exist")));
        }
        Ok(Self { expression: self.expression.select(keep), ..self.clone() })
    }

    /// Per-vertex colors for the given appearance parameters, clamped to [0, 1].
    /// Models without albedo return `None`.
    pub fn vertex_colors(&self, appearance: &[f64]) -> Option<Vec<Vec3>> {
        let albedo = self.albedo.as_ref()?;
        let mut colors = albedo.mean.clone();
        let k = appearance.len().min(albedo.basis.count);
        albedo.basis.select(&(0..k).collect::<Vec<_>>()).blend_into(&appearance[..k], 1.0, &mut colors);
        for c in &mut colors {
            for ch in c.iter_mut() {
                *ch = ch.clamp(0.0, 1.0);
            }
        }
        Some(colors)
    }

    /// Rest shape before skinning:
    /// `T + B(identity) + B(pose) + B(t·e, E^R) + B(t·e, s·E^L)`.
    fn rest_shape(&self, split: &SplitExpressionBasis, ind: &IndividualParams, expr: &[f64], s: f64, t: f64) -> Vec<Vec3> {
        let mut v = self.template.clone();
        self.identity.blend_into(&ind.identity, 1.0, &mut v);
        self.pose.blend_into(&ind.pose, 1.0, &mut v);
        let onset: Vec<f64> = expr.iter().map(|e| t * e).collect();
        split.right.blend_into(&onset, 1.0, &mut v);
        split.left.blend_into(&onset, s, &mut v);
        v
    }
}

/// Split the expression basis into left and right parts at the midline.
///
/// Entries are copied, never recomputed, so `left + right` reproduces the
/// original basis bit for bit.
pub fn split_expression_basis(model: &FaceModel) -> SplitExpressionBasis {
    let mask = &model.left_mask;
    SplitExpressionBasis {
        left: model.expression.masked(|i| mask[i]),
        right: model.expression.masked(|i| !mask[i]),
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::ParameterDomain(format!("{name} = {v} is outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_expression(model: &FaceModel, expr: &[f64]) -> Result<()> {
    if expr.len() != model.expression_dim() {
        return Err(Error::ParameterDomain(format!(
            "expression has {} coefficients, model has {}",
            expr.len(),
            model.expression_dim()
        )));
    }
    if let Some(e) = expr.iter().find(|e| !(-EXPR_BOUND..=EXPR_BOUND).contains(*e)) {
        return Err(Error::ParameterDomain(format!("expression coefficient {e} outside [-3, 3]")));
    }
    Ok(())
}

/// Geometry evaluator bound to one model, with the expression split cached.
#[derive(Debug, Clone)]
pub struct GeometryEvaluator<'m> {
    model: &'m FaceModel,
    split: SplitExpressionBasis,
}

impl<'m> GeometryEvaluator<'m> {
    pub fn new(model: &'m FaceModel) -> Self {
        Self { model, split: split_expression_basis(model) }
    }

    pub fn model(&self) -> &'m FaceModel {
        self.model
    }

    /// Posed vertices for symmetry `s` and onset `t`, both in `[0, 1]`.
    pub fn evaluate(&self, ind: &IndividualParams, expr: &[f64], s: f64, t: f64) -> Result<Vec<Vec3>> {
        check_unit("s", s)?;
        check_unit("t", t)?;
        check_expression(self.model, expr)?;
        ind.check_dims(self.model)?;
        let rest = self.model.rest_shape(&self.split, ind, expr, s, t);
        linear_blend_skin(
            &rest,
            &self.model.joints,
            &self.model.joint_parents,
            &ind.pose,
            &self.model.skin_weights,
        )
    }
}

/// One-off geometry evaluation; see [`GeometryEvaluator`] for repeated calls.
pub fn evaluate_geometry(model: &FaceModel, ind: &IndividualParams, expr: &[f64], s: f64, t: f64) -> Result<Vec<Vec3>> {
    GeometryEvaluator::new(model).evaluate(ind, expr, s, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn model() -> FaceModel {
        FaceModel::builtin()
    }

    /// Unsplit evaluation written out directly, as the reference path.
    fn direct(model: &FaceModel, ind: &IndividualParams, expr: &[f64]) -> Vec<Vec3> {
        let mut rest = model.template().to_vec();
        for (i, v) in rest.iter_mut().enumerate() {
            for (k, c) in ind.identity.iter().enumerate() {
                let d = model.identity_basis().get(k, i);
                (0..3).for_each(|a| v[a] += c * d[a]);
            }
            for (k, c) in ind.pose.iter().enumerate() {
                let d = model.pose_basis().get(k, i);
                (0..3).for_each(|a| v[a] += c * d[a]);
            }
            for (k, c) in expr.iter().enumerate() {
                let d = model.expression_basis().get(k, i);
                (0..3).for_each(|a| v[a] += c * d[a]);
            }
        }
        linear_blend_skin(&rest, model.joints(), model.joint_parents(), &ind.pose, model.skin_weights()).unwrap()
    }

    fn random_expr(rng: &mut impl Rng, k: usize) -> Vec<f64> {
        (0..k).map(|_| rng.random_range(-3.0..=3.0)).collect()
    }

    #[test]
    fn split_left_only_basis_has_empty_right() {
        let m = model();
        let n = m.vertex_count();
        let mask = m.left_mask().to_vec();
        let basis = Blendshapes::from_fn(2, n, |k, i| if mask[i] { [1.0 + k as f64, 2.0, 3.0] } else { [0.0; 3] });
        let m2 = FaceModel { expression: basis, ..m };
        let split = split_expression_basis(&m2);
        assert!(split.right.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(split.left, *m2.expression_basis());
    }

    #[test]
    fn split_recomposes_exactly() {
        let m = model();
        let mut rng = crate::seed::rng(7);
        let n = m.vertex_count();
        let basis = Blendshapes::from_fn(5, n, |_, _| [rng.random(), rng.random(), rng.random()]);
        let m2 = FaceModel { expression: basis, ..m };
        let split = split_expression_basis(&m2);
        for ((l, r), o) in split.left.as_slice().iter().zip(split.right.as_slice()).zip(m2.expression_basis().as_slice()) {
            assert_eq!(l + r, *o);
            assert!(*l == 0.0 || *r == 0.0);
        }
    }

    #[test]
    fn midline_vertices_go_right() {
        let m = model();
        let split = split_expression_basis(&m);
        let mid: Vec<usize> = (0..m.vertex_count()).filter(|&i| m.template()[i][0] == 0.0).collect();
        assert!(!mid.is_empty());
        for &i in &mid {
            assert!(!m.left_mask()[i]);
            for k in 0..m.expression_dim() {
                assert_eq!(split.left.get(k, i), [0.0; 3]);
                assert_eq!(split.right.get(k, i), m.expression_basis().get(k, i));
            }
        }
    }

    #[test]
    fn zero_onset_is_neutral_for_every_s() {
        let m = model();
        let ind = sample_individual(&m, 3);
        let expr = vec![2.0, -1.0, 0.5, 3.0];
        let neutral = evaluate_geometry(&m, &ind, &[0.0; 4], 1.0, 1.0).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(evaluate_geometry(&m, &ind, &expr, s, 0.0).unwrap(), neutral);
        }
    }

    #[test]
    fn full_symmetry_matches_unsplit_model() {
        let m = model();
        let mut rng = crate::seed::rng(11);
        for seed in 0..20 {
            let mut ind = sample_individual(&m, seed);
            ind.pose = (0..m.pose_dim()).map(|_| rng.random_range(-0.3..0.3)).collect();
            let e = random_expr(&mut rng, m.expression_dim());
            let got = evaluate_geometry(&m, &ind, &e, 1.0, 1.0).unwrap();
            let want = direct(&m, &ind, &e);
            for (a, b) in got.iter().zip(&want) {
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_symmetry_matches_zeroed_left_basis() {
        let m = model();
        let ind = sample_individual(&m, 5);
        let e = vec![3.0, 1.0, -2.0, 0.5];
        let got = evaluate_geometry(&m, &ind, &e, 0.0, 1.0).unwrap();
        let zeroed = FaceModel { expression: split_expression_basis(&m).right, ..m.clone() };
        let want = direct(&zeroed, &ind, &e);
        let neutral = evaluate_geometry(&m, &ind, &[0.0; 4], 1.0, 1.0).unwrap();
        for i in 0..m.vertex_count() {
            for c in 0..3 {
                assert!((got[i][c] - want[i][c]).abs() <= 1e-12);
            }
            if m.left_mask()[i] {
                assert_eq!(got[i], neutral[i]);
            }
        }
    }

    #[test]
    fn symmetry_never_moves_right_side() {
        let m = model();
        let ind = sample_individual(&m, 9);
        let e = vec![3.0, 2.0, 1.0, -3.0];
        let a = evaluate_geometry(&m, &ind, &e, 0.0, 0.7).unwrap();
        let b = evaluate_geometry(&m, &ind, &e, 0.55, 0.7).unwrap();
        for i in (0..m.vertex_count()).filter(|&i| !m.left_mask()[i]) {
            assert_eq!(a[i], b[i]);
        }
    }

    #[test]
    fn affine_in_onset() {
        let m = model();
        let ind = sample_individual(&m, 2);
        let e = vec![1.5, -2.0, 2.5, 0.3];
        let g = |t| evaluate_geometry(&m, &ind, &e, 0.4, t).unwrap();
        let (a, b, c) = (g(0.2), g(0.5), g(0.8));
        for i in 0..m.vertex_count() {
            for k in 0..3 {
                assert!((b[i][k] - 0.5 * (a[i][k] + c[i][k])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn domain_errors() {
        let m = model();
        let ind = sample_individual(&m, 0);
        let e = vec![0.0; 4];
        for (s, t) in [(-0.1, 0.5), (1.1, 0.5), (0.5, -1e-9), (0.5, 2.0), (f64::NAN, 0.5)] {
            assert!(matches!(evaluate_geometry(&m, &ind, &e, s, t), Err(Error::ParameterDomain(_))));
        }
        assert!(matches!(
            evaluate_geometry(&m, &ind, &[3.5, 0.0, 0.0, 0.0], 1.0, 1.0),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(evaluate_geometry(&m, &ind, &[0.0; 3], 1.0, 1.0), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn bad_left_mask_rejected() {
        let mut m = model();
        m.left_mask[0] = !m.left_mask[0];
        assert!(matches!(m.validate(), Err(Error::ModelValidation(_))));
    }

    #[test]
    fn builtin_is_mirror_symmetric() {
        let m = model();
        let t = m.template();
        let colors = m.vertex_colors(&[0.5, -0.2, 0.1, 0.3]).unwrap();
        for (i, v) in t.iter().enumerate() {
            let j = t.iter().position(|w| w[0] == -v[0] && w[1] == v[1]).expect("mirror partner");
            assert_eq!(t[j][2], v[2]);
            assert_eq!(colors[i], colors[j]);
            for k in 0..m.expression_dim() {
                let (a, b) = (m.expression_basis().get(k, i), m.expression_basis().get(k, j));
                assert_eq!([a[0], a[1], a[2]], [-b[0], b[1], b[2]]);
            }
        }
    }
}
