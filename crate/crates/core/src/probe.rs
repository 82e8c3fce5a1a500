//! Symmetry interventions and their effect on a classifier.
//!
//! For one individual and emotion, the face is rendered on an `(s, t)` grid
//! (`s` scales the left-side expression, `t` is the onset) and the
//! classifier's activation is recorded per cell. The impact score is the
//! mean of the finite-difference derivative along `s` over all cells;
//! positive means the classifier rewards symmetric expressions.

use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, ClassifierInfo, Provenance};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::exec;
use crate::face::{FaceModel, GeometryEvaluator, IndividualParams};
use crate::render::{render, AlbedoMode, Image, RenderSettings};

/// Axis resolution of an intervention grid. Both axes span `[0, 1]`
/// inclusive and are equidistant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub s_steps: usize,
    pub t_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { s_steps: 10, t_steps: 90 }
    }
}

fn linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

impl GridSpec {
    pub fn new(s_steps: usize, t_steps: usize) -> Result<Self> {
        let spec = Self { s_steps, t_steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_steps < 3 {
            return Err(Error::Config(format!("s_steps = {} but the stencils need at least 3", self.s_steps)));
        }
        if self.t_steps == 0 {
            return Err(Error::Config("t_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn s_axis(&self) -> Vec<f64> {
        linspace(self.s_steps)
    }

    /// A single onset step sits at full onset.
    pub fn t_axis(&self) -> Vec<f64> {
        if self.t_steps == 1 {
            vec![1.0]
        } else {
            linspace(self.t_steps)
        }
    }

    pub fn cells(&self) -> usize {
        self.s_steps * self.t_steps
    }
}

/// Classifier activations over an `(s, t)` grid, stored row-major with one
/// row per `s` value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionGrid {
    pub spec: GridSpec,
    pub emotion: EmotionLabel,
    pub individual: u64,
    pub s_axis: Vec<f64>,
    pub t_axis: Vec<f64>,
    pub values: Vec<f64>,
    pub classifier: Option<ClassifierInfo>,
}

impl InterventionGrid {
    /// Grid with `values[i][j] = f(s_i, t_j)`.
    pub fn from_fn(spec: GridSpec, emotion: EmotionLabel, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        spec.validate()?;
        let (s_axis, t_axis) = (spec.s_axis(), spec.t_axis());
        let values = s_axis.iter().flat_map(|&s| t_axis.iter().map(move |&t| (s, t))).map(|(s, t)| f(s, t)).collect();
        Self::from_values(spec, emotion, values)
    }

    pub fn from_values(spec: GridSpec, emotion: EmotionLabel, values: Vec<f64>) -> Result<Self> {
        let grid = Self {
            spec,
            emotion,
            individual: 0,
            s_axis: spec.s_axis(),
            t_axis: spec.t_axis(),
            values,
            classifier: None,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.s_axis.len() != self.spec.s_steps || self.t_axis.len() != self.spec.t_steps {
            return Err(Error::InvalidInput("grid axes do not match the spec".into()));
        }
        if self.values.len() != self.spec.cells() {
            return Err(Error::InvalidInput(format!(
                "grid holds {} values, spec needs {}",
                self.values.len(),
                self.spec.cells()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("grid value {v} is not finite")));
        }
        Ok(())
    }

    pub fn value(&self, s_index: usize, t_index: usize) -> f64 {
        self.values[s_index * self.spec.t_steps + t_index]
    }

    /// One row (fixed `s`) of the grid.
    pub fn row(&self, s_index: usize) -> &[f64] {
        let t = self.spec.t_steps;
        &self.values[s_index * t..(s_index + 1) * t]
    }
}

/// Render the intervened face `I(s, t)` of `individual` with expression `expr`.
pub fn render_intervention(
    model: &FaceModel,
    individual: &IndividualParams,
    expr: &[f64],
    s: f64,
    t: f64,
    settings: &RenderSettings,
) -> Result<Image> {
    render_with(&GeometryEvaluator::new(model), individual, expr, s, t, settings)
}

fn render_with(
    eval: &GeometryEvaluator<'_>,
    individual: &IndividualParams,
    expr: &[f64],
    s: f64,
    t: f64,
    settings: &RenderSettings,
) -> Result<Image> {
    let model = eval.model();
    let vertices = eval.evaluate(individual, expr, s, t)?;
    let colors = match settings.albedo {
        AlbedoMode::PerVertex => model.vertex_colors(&individual.appearance),
        AlbedoMode::Flat(_) => None,
    };
    render(&vertices, model.faces(), colors.as_deref(), settings)
}

/// Evaluate the classifier on every cell of the intervention grid.
///
/// Cells run in parallel; each result lands in its own slot, so the grid
/// does not depend on scheduling. A failing cell reports its coordinates.
pub fn build_grid(
    model: &FaceModel,
    individual: &IndividualParams,
    individual_id: u64,
    emotion: EmotionLabel,
    classifier: &dyn Classifier,
    spec: GridSpec,
    settings: &RenderSettings,
) -> Result<InterventionGrid> {
    spec.validate()?;
    if !classifier.info().declares(emotion) {
        return Err(Error::UnknownLabel(emotion.to_string()));
    }
    let expr = individual.expression(emotion)?;
    let eval = GeometryEvaluator::new(model);
    let (s_axis, t_axis) = (spec.s_axis(), spec.t_axis());
    let values = exec::try_map_indexed(spec.cells(), |k| {
        let (s, t) = (s_axis[k / spec.t_steps], t_axis[k % spec.t_steps]);
        let cell = || -> Result<f64> {
            let image = render_with(&eval, individual, expr, s, t, settings)?;
            classifier.activation(&image, &Provenance::at(s, t, individual_id), emotion)
        };
        cell().map_err(|e| Error::Cell { s, t, source: Box::new(e) })
    })?;
    let grid = InterventionGrid {
        spec,
        emotion,
        individual: individual_id,
        s_axis,
        t_axis,
        values,
        classifier: Some(classifier.info().clone()),
    };
    grid.validate()?;
    Ok(grid)
}

/// Common spacing of an equidistant, strictly increasing axis.
fn spacing(axis: &[f64]) -> Result<f64> {
    if axis.len() < 3 {
        return Err(Error::InvalidInput(format!("axis has {} points, stencils need 3", axis.len())));
    }
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    let tol = 1e-9 * h.abs().max(1.0);
    if !(h > 0.0) || axis.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > tol) {
        return Err(Error::InvalidInput("axis is not equidistant and increasing".into()));
    }
    Ok(h)
}

/// Derivative along `s` of every cell of a row-major `s × t` matrix.
///
/// Second-order central differences inside, second-order one-sided
/// three-point stencils at both ends, so quadratics in `s` are exact.
pub fn gradient_matrix(values: &[f64], s_axis: &[f64], t_steps: usize) -> Result<Vec<f64>> {
    let h = spacing(s_axis)?;
    let n = s_axis.len();
    if values.len() != n * t_steps {
        return Err(Error::InvalidInput("value count does not match the axes".into()));
    }
    let f = |i: usize, j: usize| values[i * t_steps + j];
    let mut out = vec![0.0; values.len()];
    for j in 0..t_steps {
        out[j] = (-3.0 * f(0, j) + 4.0 * f(1, j) - f(2, j)) / (2.0 * h);
        for i in 1..n - 1 {
            out[i * t_steps + j] = (f(i + 1, j) - f(i - 1, j)) / (2.0 * h);
        }
        out[(n - 1) * t_steps + j] = (3.0 * f(n - 1, j) - 4.0 * f(n - 2, j) + f(n - 3, j)) / (2.0 * h);
    }
    Ok(out)
}

pub fn gradient_along_s(grid: &InterventionGrid) -> Result<Vec<f64>> {
    gradient_matrix(&grid.values, &grid.s_axis, grid.spec.t_steps)
}

/// Weights `w` such that the sum of all stencil outputs of one column equals
/// `Σ_i w_i f_i`. The impact score of a grid is then
/// `Σ_ij w_i f_ij / (s_steps · t_steps)`.
pub fn column_weights(s_axis: &[f64]) -> Result<Vec<f64>> {
    let h2 = 2.0 * spacing(s_axis)?;
    let n = s_axis.len();
    let mut w = vec![0.0; n];
    w[0] -= 3.0 / h2;
    w[1] += 4.0 / h2;
    w[2] -= 1.0 / h2;
    for i in 1..n - 1 {
        w[i + 1] += 1.0 / h2;
        w[i - 1] -= 1.0 / h2;
    }
    w[n - 1] += 3.0 / h2;
    w[n - 2] -= 4.0 / h2;
    w[n - 3] += 1.0 / h2;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactScore {
    pub gradient: Vec<f64>,
    pub local_score: f64,
    pub p_value: Option<f64>,
}

pub fn local_score(grid: &InterventionGrid) -> Result<ImpactScore> {
    grid.validate()?;
    let gradient = gradient_along_s(grid)?;
    let local_score = gradient.iter().sum::<f64>() / gradient.len() as f64;
    Ok(ImpactScore { gradient, local_score, p_value: None })
}

/// Mean local score over a population of individuals.
pub fn global_score(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("global score of an empty population".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Occlusion heatmap: `values[u][v]` is the activation drop when a square
/// `patch × patch` block at row `u·stride`, column `v·stride` is filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub rows: usize,
    pub cols: usize,
    pub baseline: f64,
    pub values: Vec<f64>,
}

impl Saliency {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.cols + v]
    }
}

pub fn occlusion_saliency(
    classifier: &dyn Classifier,
    image: &Image,
    emotion: EmotionLabel,
    patch: u32,
    stride: u32,
    fill: [u8; 3],
) -> Result<Saliency> {
    let (w, h) = (image.width(), image.height());
    if patch == 0 || stride == 0 || patch > w || patch > h {
        return Err(Error::InvalidInput(format!("patch {patch} / stride {stride} do not fit a {w}x{h} image")));
    }
    let rows = ((h - patch) / stride + 1) as usize;
    let cols = ((w - patch) / stride + 1) as usize;
    let prov = Provenance::none();
    let baseline = classifier.activation(image, &prov, emotion)?;
    let values = exec::try_map_indexed(rows * cols, |k| {
        let (y0, x0) = ((k / cols) as u32 * stride, (k % cols) as u32 * stride);
        let mut occluded = image.clone();
        for y in y0..y0 + patch {
            for x in x0..x0 + patch {
                occluded.set_pixel(x, y, fill);
            }
        }
        Ok(baseline - classifier.activation(&occluded, &prov, emotion)?)
    })?;
    Ok(Saliency { rows, cols, baseline, values })
}
