//! Differential evolution (DE/rand/1/bin) over a bounded box, and the search
//! for an expression vector a classifier recognizes as a target emotion.
//!
//! Each generation builds all trial vectors from the RNG first, evaluates
//! them (in parallel with the `parallel` feature), then applies selection in
//! population index order. The result is bitwise identical to a serial run.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, Provenance};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::face::{FaceModel, IndividualParams};
use crate::probe::render_intervention;
use crate::render::RenderSettings;
use crate::{exec, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    /// `None` means `15·dim`, capped at 150 and at least 4.
    pub population_size: Option<usize>,
    /// Differential weight.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    pub max_generations: usize,
    /// Stop once the activation reaches this value (expression search only).
    pub target_activation_stop: f64,
    /// Stop after this many generations without improvement of the best.
    pub stagnation_generations: usize,
    pub lower: f64,
    pub upper: f64,
    /// Fitted activations below this value are flagged in the result.
    pub activation_floor: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population_size: None,
            f: 0.8,
            cr: 0.9,
            max_generations: 300,
            target_activation_stop: 0.995,
            stagnation_generations: 50,
            lower: -3.0,
            upper: 3.0,
            activation_floor: 0.5,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn population_for(&self, dim: usize) -> usize {
        self.population_size.unwrap_or_else(|| (15 * dim).min(150)).max(4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cr > 0.0 && self.cr <= 1.0) {
            return Err(Error::Config(format!("crossover rate {} outside (0, 1]", self.cr)));
        }
        if !(self.f > 0.0 && self.f <= 2.0) {
            return Err(Error::Config(format!("differential weight {} outside (0, 2]", self.f)));
        }
        if self.population_size.is_some_and(|p| p < 4) {
            return Err(Error::Config("population must hold at least 4 members".into()));
        }
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(Error::Config(format!("bad bounds [{}, {}]", self.lower, self.upper)));
        }
        if self.max_generations == 0 {
            return Err(Error::Config("max_generations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GenerationCap,
    TargetReached,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Best objective after initialization (index 0) and after each generation.
    pub best_per_generation: Vec<f64>,
    pub best: Vec<f64>,
    pub best_value: f64,
    pub evaluations: u64,
    /// Evaluated candidates that lay inside the bounds. Equals `evaluations`.
    pub in_bounds: u64,
    pub stop: StopReason,
}

fn evaluate<F>(objective: &F, candidates: &[Vec<f64>]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    exec::try_map_indexed(candidates.len(), |i| {
        let x = &candidates[i];
        let v = objective(x)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective { value: v, point: x.clone() });
        }
        Ok(v)
    })
}

/// Three distinct indices in `0..n`, all different from `skip`.
fn pick3(rng: &mut impl Rng, n: usize, skip: usize) -> [usize; 3] {
    let mut out = [skip; 3];
    for k in 0..3 {
        loop {
            let r = rng.random_range(0..n);
            if r != skip && !out[..k].contains(&r) {
                out[k] = r;
                break;
            }
        }
    }
    out
}

/// Minimize `objective` over `[lower, upper]^dim`.
///
/// Stops at the generation cap, after `stagnation_generations` without
/// improvement, or as soon as the best value is `≤ stop_value`.
pub fn minimize<F>(objective: F, dim: usize, config: &DeConfig, stop_value: Option<f64>) -> Result<(Vec<f64>, OptimizationTrace)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    config.validate()?;
    if dim == 0 {
        return Err(Error::Config("cannot optimize over zero dimensions".into()));
    }
    let np = config.population_for(dim);
    let (lo, hi) = (config.lower, config.upper);
    let mut rng = seed::rng(config.seed);
    let in_box = |x: &[f64]| x.iter().all(|v| (lo..=hi).contains(v)) as u64;

    let mut pop: Vec<Vec<f64>> = (0..np).map(|_| (0..dim).map(|_| rng.random_range(lo..=hi)).collect()).collect();
    let mut fit = evaluate(&objective, &pop)?;
    let mut evaluations = np as u64;
    let mut in_bounds: u64 = pop.iter().map(|x| in_box(x)).sum();

    let argmin = |fit: &[f64]| (0..fit.len()).fold(0, |b, i| if fit[i] < fit[b] { i } else { b });
    let mut best = argmin(&fit);
    let mut history = vec![fit[best]];
    let mut stagnant = 0;
    let reached = |v: f64| stop_value.is_some_and(|s| v <= s);
    let mut stop = StopReason::GenerationCap;

    if reached(fit[best]) {
        stop = StopReason::TargetReached;
    } else {
        for _ in 0..config.max_generations {
            let trials: Vec<Vec<f64>> = (0..np)
                .map(|i| {
                    let [a, b, c] = pick3(&mut rng, np, i);
                    let jrand = rng.random_range(0..dim);
                    (0..dim)
                        .map(|j| {
                            if j == jrand || rng.random::<f64>() < config.cr {
                                (pop[a][j] + config.f * (pop[b][j] - pop[c][j])).clamp(lo, hi)
                            } else {
                                pop[i][j]
                            }
                        })
                        .collect()
                })
                .collect();
            let trial_fit = evaluate(&objective, &trials)?;
            evaluations += np as u64;
            in_bounds += trials.iter().map(|x| in_box(x)).sum::<u64>();

            let previous = fit[best];
            for (i, (x, v)) in trials.into_iter().zip(trial_fit).enumerate() {
                if v <= fit[i] {
                    pop[i] = x;
                    fit[i] = v;
                }
            }
            best = argmin(&fit);
            history.push(fit[best]);

            if reached(fit[best]) {
                stop = StopReason::TargetReached;
                break;
            }
            stagnant = if fit[best] < previous { 0 } else { stagnant + 1 };
            if stagnant >= config.stagnation_generations {
                stop = StopReason::Stagnation;
                break;
            }
        }
    }

    let trace = OptimizationTrace {
        best_per_generation: history,
        best: pop[best].clone(),
        best_value: fit[best],
        evaluations,
        in_bounds,
        stop,
    };
    Ok((pop[best].clone(), trace))
}

/// Minimize without an objective-value stop.
pub fn optimize<F>(objective: F, dim: usize, config: &DeConfig) -> Result<(Vec<f64>, OptimizationTrace)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    minimize(objective, dim, config, None)
}

/// Outcome of fitting a target expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFit {
    pub emotion: EmotionLabel,
    pub expression: Vec<f64>,
    /// Classifier activation of the fitted expression at `s = t = 1`.
    pub activation: f64,
    /// Set when `activation` is below the configured floor. The fit is kept.
    pub below_floor: bool,
    pub trace: OptimizationTrace,
}

/// Search the expression vector that maximizes the classifier's activation
/// for `emotion` on the fully symmetric, full-onset face of `individual`,
/// and store it in `individual`.
///
/// `individual_id` is only forwarded to the classifier as provenance.
#[allow(clippy::too_many_arguments)]
pub fn optimize_expression(
    model: &FaceModel,
    individual: &mut IndividualParams,
    individual_id: u64,
    emotion: EmotionLabel,
    classifier: &dyn Classifier,
    settings: &RenderSettings,
    config: &DeConfig,
) -> Result<ExpressionFit> {
    if !classifier.info().declares(emotion) {
        return Err(Error::UnknownLabel(emotion.to_string()));
    }
    let provenance = Provenance::at(1.0, 1.0, individual_id);
    let ind: &IndividualParams = individual;
    let objective = |e: &[f64]| -> Result<f64> {
        let image = render_intervention(model, ind, e, 1.0, 1.0, settings)?;
        Ok(1.0 - classifier.activation(&image, &provenance, emotion)?)
    };
    let stop = 1.0 - config.target_activation_stop;
    let (best, trace) = minimize(objective, model.expression_dim(), config, Some(stop))?;
    let activation = 1.0 - trace.best_value;
    individual.set_expression(model, emotion, best.clone())?;
    Ok(ExpressionFit { emotion, expression: best, activation, below_floor: activation < config.activation_floor, trace })
}
