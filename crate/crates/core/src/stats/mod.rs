//! Significance testing: the shuffle test along the symmetry axis,
//! Holm-Bonferroni correction, and the conditional-independence battery
//! ([`ci`]).

pub mod ci;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierInfo;
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::probe::{column_weights, InterventionGrid};
use crate::{exec, seed};

pub use ci::{cmi_knn, cond_hsic, majority_ci, regression_ci, CiConfig, CiDecision, CITestSample, SyntheticCase};

/// How permuted scores equal to the observed one are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// `p = (1 + #{|perm| ≥ |orig|}) / (K + 1)`; never 0.
    #[default]
    Inclusive,
    /// `p = #{|perm| > |orig|} / K`; constant grids get `p = 0`.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationConfig {
    pub permutations: usize,
    pub delta: f64,
    pub seed: u64,
    pub tie_rule: TieRule,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self { permutations: 10_000, delta: 0.05, seed: 0, tie_rule: TieRule::Inclusive }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(Error::Config("at least one permutation is required".into()));
        }
        check_delta(self.delta)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("significance level {delta} outside (0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub score: f64,
    pub p_value: f64,
    /// Rounds whose absolute score reached (inclusive) or exceeded (strict)
    /// the observed one.
    pub exceedances: usize,
}

/// Shuffle test of the impact score.
///
/// Each round shuffles every `t` column independently along `s` and
/// recomputes the score; round `r` draws from its own seeded stream, so the
/// outcome does not depend on how rounds are scheduled. Two scores count as
/// tied when they agree to 1e-12 of the grid's magnitude.
pub fn permutation_test(grid: &InterventionGrid, config: &PermutationConfig) -> Result<PermutationOutcome> {
    grid.validate()?;
    config.validate()?;
    let w = column_weights(&grid.s_axis)?;
    let (ns, nt) = (grid.spec.s_steps, grid.spec.t_steps);
    let cells = (ns * nt) as f64;
    let columns: Vec<Vec<f64>> = (0..nt).map(|j| (0..ns).map(|i| grid.value(i, j)).collect()).collect();
    let score_of = |order: &dyn Fn(usize, usize) -> usize| -> f64 {
        let mut total = 0.0;
        for (j, col) in columns.iter().enumerate() {
            for (i, wi) in w.iter().enumerate() {
                total += wi * col[order(j, i)];
            }
        }
        total / cells
    };
    let observed = score_of(&|_, i| i);
    let magnitude: f64 = columns.iter().flat_map(|c| c.iter().zip(&w).map(|(f, wi)| (f * wi).abs())).sum::<f64>() / cells;
    let tol = 1e-12 * magnitude;
    let target = observed.abs();

    let exceedances = exec::count_indexed(config.permutations, |r| {
        let mut rng = seed::stream_rng(config.seed, r as u64);
        let perms: Vec<Vec<usize>> = (0..nt)
            .map(|_| {
                let mut p: Vec<usize> = (0..ns).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let s = score_of(&|j, i| perms[j][i]).abs();
        match config.tie_rule {
            TieRule::Inclusive => s >= target - tol,
            TieRule::Strict => s > target + tol,
        }
    });
    let k = config.permutations as f64;
    let p_value = match config.tie_rule {
        TieRule::Inclusive => (1.0 + exceedances as f64) / (k + 1.0),
        TieRule::Strict => exceedances as f64 / k,
    };
    Ok(PermutationOutcome { score: observed, p_value, exceedances })
}

/// Holm's step-down procedure. Returns reject flags in input order.
pub fn holm_bonferroni(p_values: &[f64], delta: f64) -> Result<Vec<bool>> {
    check_delta(delta)?;
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; m];
    for (k, &idx) in order.iter().enumerate() {
        if p_values[idx] < delta / (m - k) as f64 {
            reject[idx] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

/// Fraction of individuals whose corrected test rejected.
pub fn significant_ratio(rejects: &[bool]) -> Result<f64> {
    if rejects.is_empty() {
        return Err(Error::InvalidInput("significant ratio of an empty population".into()));
    }
    Ok(rejects.iter().filter(|&&r| r).count() as f64 / rejects.len() as f64)
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Per-emotion significance summary over a population of individuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub schema_version: u32,
    pub emotion: EmotionLabel,
    pub individuals: Vec<u64>,
    pub scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub reject: Vec<bool>,
    pub significant_count: usize,
    pub n: usize,
    pub significant_ratio: f64,
    pub global_score: f64,
    pub config: PermutationConfig,
    pub classifier: Option<ClassifierInfo>,
}

impl SignificanceReport {
    /// Apply Holm's correction at `config.delta` and summarize.
    pub fn new(
        emotion: EmotionLabel,
        individuals: Vec<u64>,
        scores: Vec<f64>,
        p_values: Vec<f64>,
        config: PermutationConfig,
        classifier: Option<ClassifierInfo>,
    ) -> Result<Self> {
        if individuals.len() != scores.len() || scores.len() != p_values.len() {
            return Err(Error::InvalidInput("individuals, scores and p-values differ in length".into()));
        }
        let reject = holm_bonferroni(&p_values, config.delta)?;
        let significant_ratio = significant_ratio(&reject)?;
        let global_score = crate::probe::global_score(&scores)?;
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            emotion,
            n: individuals.len(),
            significant_count: reject.iter().filter(|&&r| r).count(),
            individuals,
            scores,
            p_values,
            reject,
            significant_ratio,
            global_score,
            config,
            classifier,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::GridSpec;

    fn grid(s: usize, t: usize, f: impl Fn(f64, f64) -> f64) -> InterventionGrid {
        InterventionGrid::from_fn(GridSpec::new(s, t).unwrap(), EmotionLabel::Happy, f).unwrap()
    }

    #[test]
    fn constant_grid() {
        let g = grid(10, 5, |_, _| 0.7);
        let inc = permutation_test(&g, &PermutationConfig { permutations: 500, ..Default::default() }).unwrap();
        assert_eq!(inc.p_value, 1.0);
        let strict = PermutationConfig { permutations: 500, tie_rule: TieRule::Strict, ..Default::default() };
        assert_eq!(permutation_test(&g, &strict).unwrap().p_value, 0.0);
    }

    #[test]
    fn linear_in_s_is_significant() {
        let g = grid(10, 90, |s, _| s);
        let out = permutation_test(&g, &PermutationConfig::default()).unwrap();
        assert!((out.score - 1.0).abs() < 1e-12);
        assert!(out.p_value <= 0.001, "{}", out.p_value);
    }

    #[test]
    fn score_only_sees_boundary_rows() {
        // interior stencils telescope, so with two columns many shuffles of
        // a linear ramp beat the ramp itself
        let g = grid(10, 2, |s, _| s);
        let out = permutation_test(&g, &PermutationConfig { permutations: 4000, ..Default::default() }).unwrap();
        assert!(out.p_value > 0.1, "{}", out.p_value);
        let w = column_weights(&g.s_axis).unwrap();
        assert!(w[3..7].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn seeded_and_thread_independent() {
        let g = grid(6, 7, |s, t| (7.0 * s * t).sin() + 0.1 * s);
        let cfg = PermutationConfig { permutations: 2000, seed: 5, ..Default::default() };
        let a = permutation_test(&g, &cfg).unwrap();
        let b = exec::with_threads(1, || permutation_test(&g, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn holm_reference_case() {
        let r = holm_bonferroni(&[0.04, 0.005, 0.03, 0.01], 0.05).unwrap();
        assert_eq!(r, vec![false, true, false, true]);
        assert_eq!(holm_bonferroni(&[1.0; 5], 0.05).unwrap(), vec![false; 5]);
        assert_eq!(holm_bonferroni(&[0.049], 0.05).unwrap(), vec![true]);
        assert_eq!(holm_bonferroni(&[0.05], 0.05).unwrap(), vec![false]);
        assert!(holm_bonferroni(&[1.2], 0.05).is_err());
        assert!(holm_bonferroni(&[f64::NAN], 0.05).is_err());
        assert!(holm_bonferroni(&[0.1], 1.0).is_err());
    }

    #[test]
    fn ratio_and_report() {
        assert_eq!(significant_ratio(&[true, true]).unwrap(), 1.0);
        assert_eq!(significant_ratio(&[false]).unwrap(), 0.0);
        assert!(significant_ratio(&[]).is_err());
        let rep = SignificanceReport::new(
            EmotionLabel::Sad,
            vec![0, 1, 2],
            vec![0.1, 0.2, 0.3],
            vec![0.001, 0.9, 0.02],
            PermutationConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(rep.reject, vec![true, false, true]);
        assert_eq!(rep.significant_count, 2);
        assert!((rep.global_score - 0.2).abs() < 1e-15);
    }
}
