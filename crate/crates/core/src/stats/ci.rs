//! Conditional-independence tests of `X ⫫ Y | Z` for scalar columns.
//!
//! Three tests vote: a kernel test on conditional cross-covariance
//! ([`cond_hsic`]), a nearest-neighbor conditional mutual information test
//! with a local permutation null ([`cmi_knn`]), and a held-out regression
//! test ([`regression_ci`]). [`majority_ci`] calls `X` and `Y` dependent
//! when at least two of them reject.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::{exec, seed};

/// Paired observations of a feature `x`, an output `y`, and a conditioning
/// variable `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CITestSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl CITestSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        let s = Self { x, y, z };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.y.len() != self.z.len() {
            return Err(Error::InvalidInput("x, y and z differ in length".into()));
        }
        if [&self.x, &self.y, &self.z].iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("sample contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn require(&self, min: usize, test: &str) -> Result<()> {
        self.validate()?;
        if self.len() < min {
            return Err(Error::InvalidInput(format!("{test} needs at least {min} rows, got {}", self.len())));
        }
        Ok(())
    }
}

/// Synthetic generators with known answers. `X` and `Z` are independent
/// standard normals in all cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticCase {
    /// `Y = Z + sin(2Z) + 0.5·ε`
    Independent,
    /// `Y = Z + 0.5·X + 0.5·ε`
    Dependent,
    /// `Y = X`
    Duplicate,
}

impl SyntheticCase {
    pub fn is_dependent(self) -> bool {
        !matches!(self, SyntheticCase::Independent)
    }

    pub fn sample(self, n: usize, seed: u64) -> CITestSample {
        let mut rng = seed::rng(seed);
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let mut s = CITestSample { x: Vec::with_capacity(n), y: Vec::with_capacity(n), z: Vec::with_capacity(n) };
        for _ in 0..n {
            let (x, z, e) = (normal(), normal(), normal());
            let y = match self {
                SyntheticCase::Independent => z + (2.0 * z).sin() + 0.5 * e,
                SyntheticCase::Dependent => z + 0.5 * x + 0.5 * e,
                SyntheticCase::Duplicate => x,
            };
            s.x.push(x);
            s.y.push(y);
            s.z.push(z);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiConfig {
    pub hsic_permutations: usize,
    /// Ridge added to the centered `Z` kernel before inversion.
    pub hsic_ridge: f64,
    pub cmi_permutations: usize,
    /// Neighborhood size for the local permutation scheme.
    pub k_perm: usize,
    /// Neighbors in the CMI estimator; `None` means `⌈0.1·n⌉`.
    pub k_cmi: Option<usize>,
    /// Split/permutation rounds of the regression test.
    pub regression_rounds: usize,
    pub regression_neighbors: usize,
    pub seed: u64,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            hsic_permutations: 199,
            hsic_ridge: 1e-3,
            cmi_permutations: 199,
            k_perm: 5,
            k_cmi: None,
            regression_rounds: 8,
            regression_neighbors: 10,
            seed: 0,
        }
    }
}

const HSIC_STREAM: u64 = 1;
const CMI_STREAM: u64 = 2;
const REGRESSION_STREAM: u64 = 3;

fn standardize(v: &[f64], name: &str) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-24) {
        return Err(Error::DegenerateInput(format!("{name} has zero variance")));
    }
    let sd = var.sqrt();
    Ok(v.iter().map(|a| (a - mean) / sd).collect())
}

fn add_one_p(exceed: usize, rounds: usize) -> f64 {
    (1.0 + exceed as f64) / (rounds as f64 + 1.0)
}

/// Median pairwise distance, the usual RBF width heuristic. Falls back to
/// the mean nonzero distance when more than half the pairs coincide.
fn median_width(v: &[f64]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(v.len() * (v.len() - 1) / 2);
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            d.push((v[i] - v[j]).abs());
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        return *m;
    }
    let nonzero: Vec<f64> = d.into_iter().filter(|&x| x > 0.0).collect();
    nonzero.iter().sum::<f64>() / nonzero.len().max(1) as f64
}

fn rbf(v: &[f64]) -> DMatrix<f64> {
    let w = median_width(v);
    let g = 1.0 / (2.0 * w * w);
    DMatrix::from_fn(v.len(), v.len(), |i, j| (-(v[i] - v[j]).powi(2) * g).exp())
}

fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let total = row.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row[i] - row[j] + total)
}

/// Groups of indices inside which `x` may be permuted under the null.
///
/// A `z` with few distinct values is stratified by value; otherwise rows
/// sorted by `z` are cut into consecutive blocks of `max(5, n/20)`.
fn z_strata(z: &[f64]) -> Vec<Vec<usize>> {
    let n = z.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let distinct = 1 + order.windows(2).filter(|w| z[w[0]] != z[w[1]]).count();
    if distinct * 5 <= n {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            if k == 0 || z[i] != z[order[k - 1]] {
                groups.push(Vec::new());
            }
            groups.last_mut().unwrap().push(i);
        }
        return groups;
    }
    let block = (n / 20).max(5);
    order.chunks(block).map(<[usize]>::to_vec).collect()
}

/// Kernel conditional-independence test.
///
/// With RBF Gram matrices on standardized variables (median-distance
/// widths), extended variables `Ẍ = (X, Z)` and `Ÿ = (Y, Z)` as product
/// kernels, `R = ε(K̃_Z + εI)⁻¹` and centered `K̃`, the statistic is
/// `tr(R K̃_Ẍ R · R K̃_Ÿ R) / n²`. The null permutes `X` within `Z` strata.
pub fn cond_hsic(sample: &CITestSample, config: &CiConfig) -> Result<f64> {
    sample.require(20, "cond_hsic")?;
    let n = sample.len();
    let x = standardize(&sample.x, "x")?;
    let y = standardize(&sample.y, "y")?;
    let z = standardize(&sample.z, "z")?;
    let (kx, ky, kz) = (rbf(&x), rbf(&y), rbf(&z));
    let kyz = ky.component_mul(&kz);

    let eps = config.hsic_ridge;
    let reg = center(&kz) + DMatrix::identity(n, n) * eps;
    let inv = reg
        .cholesky()
        .ok_or_else(|| Error::DegenerateInput("regularized z kernel is not positive definite".into()))?
        .inverse();
    let r = inv * eps;
    let a = center(&(&r * &r));
    let m = &a * kyz * &a;
    // T(π) = Σ_ij K_X[π_i, π_j] · K_Z[i, j] · M[i, j] / n²
    let q: Vec<f64> = (0..n * n).map(|k| kz[(k / n, k % n)] * m[(k / n, k % n)]).collect();
    let kx: Vec<f64> = (0..n * n).map(|k| kx[(k / n, k % n)]).collect();
    let stat = |perm: &[usize]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let row = &kx[perm[i] * n..(perm[i] + 1) * n];
            let qrow = &q[i * n..(i + 1) * n];
            for j in 0..n {
                total += row[perm[j]] * qrow[j];
            }
        }
        total / (n * n) as f64
    };
    let identity: Vec<usize> = (0..n).collect();
    let observed = stat(&identity);
    let tol = 1e-12 * observed.abs().max(f64::MIN_POSITIVE);

    let strata = z_strata(&z);
    let stream = seed::derive(config.seed, HSIC_STREAM);
    let exceed = exec::count_indexed(config.hsic_permutations, |b| {
        let mut rng = seed::stream_rng(stream, b as u64);
        let mut perm = identity.clone();
        for group in &strata {
            let mut shuffled = group.clone();
            shuffled.shuffle(&mut rng);
            for (&dst, &src) in group.iter().zip(&shuffled) {
                perm[dst] = src;
            }
        }
        stat(&perm) >= observed - tol
    });
    Ok(add_one_p(exceed, config.hsic_permutations))
}

/// Rank transform to `[0, 1]` after a tiny seeded jitter that breaks ties.
fn jittered_ranks(v: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let n = v.len();
    let jittered: Vec<f64> = v.iter().map(|a| a + 1e-10 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| jittered[a].total_cmp(&jittered[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as f64 / (n - 1) as f64;
    }
    ranks
}

/// Pairwise max-norm distances that do not involve `x`, each row also kept
/// sorted for counting by binary search.
struct CmiTables {
    n: usize,
    dz: Vec<f64>,
    dyz: Vec<f64>,
    dz_sorted: Vec<f64>,
    dyz_sorted: Vec<f64>,
}

impl CmiTables {
    fn new(y: &[f64], z: &[f64]) -> Self {
        let n = y.len();
        let mut dz = vec![0.0; n * n];
        let mut dyz = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let a = (z[i] - z[j]).abs();
                dz[i * n + j] = a;
                dyz[i * n + j] = a.max((y[i] - y[j]).abs());
            }
        }
        let sorted = |d: &[f64]| {
            let mut s = d.to_vec();
            s.chunks_mut(n).for_each(|row| row.sort_by(f64::total_cmp));
            s
        };
        Self { n, dz_sorted: sorted(&dz), dyz_sorted: sorted(&dyz), dz, dyz }
    }

    /// Frenzel-Pompe estimate of `I(X; Y | Z)` with `k` neighbors.
    fn cmi(&self, x: &[f64], k: usize) -> f64 {
        let n = self.n;
        let mut d = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                d[j] = (x[i] - x[j]).abs().max(self.dyz[i * n + j]);
            }
            d[i] = f64::INFINITY;
            let (_, eps, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            let eps = *eps;
            let mut k_xz = 0usize;
            for j in 0..n {
                if j != i && (x[i] - x[j]).abs().max(self.dz[i * n + j]) < eps {
                    k_xz += 1;
                }
            }
            // rows include the zero self-distance
            let below = |row: &[f64]| row.partition_point(|&v| v < eps) - 1;
            let k_yz = below(&self.dyz_sorted[i * n..(i + 1) * n]);
            let k_z = below(&self.dz_sorted[i * n..(i + 1) * n]);
            total += digamma((k_xz + 1) as f64) + digamma((k_yz + 1) as f64) - digamma((k_z + 1) as f64);
        }
        digamma(k as f64) - total / n as f64
    }
}

/// Nearest-neighbor CMI test with a local permutation null.
///
/// Variables are rank-transformed after a 1e-10 seeded jitter, so
/// duplicated points do not collapse neighborhoods. Each null draw replaces
/// `x_i` by the `x` of one of the `k_perm` nearest `Z`-neighbors of `i`,
/// using each donor at most once where possible.
pub fn cmi_knn(sample: &CITestSample, config: &CiConfig) -> Result<f64> {
    sample.require(50, "cmi_knn")?;
    let n = sample.len();
    for (v, name) in [(&sample.x, "x"), (&sample.y, "y"), (&sample.z, "z")] {
        standardize(v, name)?;
    }
    let stream = seed::derive(config.seed, CMI_STREAM);
    let mut rng = seed::stream_rng(stream, u64::MAX);
    let x = jittered_ranks(&sample.x, &mut rng);
    let y = jittered_ranks(&sample.y, &mut rng);
    let z = jittered_ranks(&sample.z, &mut rng);
    let k = config.k_cmi.unwrap_or_else(|| (n as f64 * 0.1).ceil() as usize).clamp(1, n - 1);
    let k_perm = config.k_perm.clamp(1, n);

    let tables = CmiTables::new(&y, &z);
    let observed = tables.cmi(&x, k);

    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| tables.dz[i * n + a].total_cmp(&tables.dz[i * n + b]).then(a.cmp(&b)));
            idx.truncate(k_perm);
            idx
        })
        .collect();

    let exceed = exec::count_indexed(config.cmi_permutations, |b| {
        let mut rng = seed::stream_rng(stream, b as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut used = vec![false; n];
        let mut xp = vec![0.0; n];
        for &i in &order {
            let mut cand = neighbors[i].clone();
            cand.shuffle(&mut rng);
            let donor = cand.iter().copied().find(|&j| !used[j]).unwrap_or(cand[0]);
            used[donor] = true;
            xp[i] = x[donor];
        }
        tables.cmi(&xp, k) >= observed
    });
    Ok(add_one_p(exceed, config.cmi_permutations))
}

/// Mean of the `k` nearest training targets (Euclidean in `features`).
fn knn_predict(train: &[([f64; 2], f64)], query: [f64; 2], k: usize, scratch: &mut Vec<(f64, f64)>) -> f64 {
    scratch.clear();
    scratch.extend(train.iter().map(|(f, y)| ((f[0] - query[0]).powi(2) + (f[1] - query[1]).powi(2), *y)));
    let k = k.min(scratch.len());
    scratch.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    scratch[..k].iter().map(|p| p.1).sum::<f64>() / k as f64
}

/// Held-out regression test in the style of FCIT, with a k-nearest-neighbor
/// regressor in place of decision trees.
///
/// Every round draws a random 90/10 split and a permutation of `x`, and
/// records how much the test error of predicting `y` from `(x_perm, z)`
/// exceeds that from `(x, z)`. A one-sided one-sample t-test on these
/// differences gives the p-value.
pub fn regression_ci(sample: &CITestSample, config: &CiConfig) -> Result<f64> {
    sample.require(50, "regression_ci")?;
    if config.regression_rounds < 2 {
        return Err(Error::Config("regression_ci needs at least two rounds".into()));
    }
    let n = sample.len();
    let x = standardize(&sample.x, "x")?;
    let y = standardize(&sample.y, "y")?;
    let z = standardize(&sample.z, "z")?;
    let n_test = (n / 10).max(1);
    let stream = seed::derive(config.seed, REGRESSION_STREAM);

    let diffs = exec::map_indexed(config.regression_rounds, |r| {
        let mut rng = seed::stream_rng(stream, r as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut xp = x.clone();
        xp.shuffle(&mut rng);
        let (test, train) = idx.split_at(n_test);
        let mut scratch = Vec::with_capacity(train.len());
        let mut mse = |xs: &[f64]| {
            let rows: Vec<([f64; 2], f64)> = train.iter().map(|&i| ([xs[i], z[i]], y[i])).collect();
            test.iter()
                .map(|&i| (knn_predict(&rows, [xs[i], z[i]], config.regression_neighbors, &mut scratch) - y[i]).powi(2))
                .sum::<f64>()
                / test.len() as f64
        };
        let with_x = mse(&x);
        let permuted = mse(&xp);
        permuted - with_x
    });
    let m = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / m;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    if sd == 0.0 {
        return Ok(if mean > 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (sd / m.sqrt());
    let dist = StudentsT::new(0.0, 1.0, m - 1.0).expect("positive degrees of freedom");
    Ok(1.0 - dist.cdf(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiDecision {
    pub dependent: bool,
    pub hsic_p: Option<f64>,
    pub cmi_p: Option<f64>,
    pub regression_p: Option<f64>,
    pub rejections: usize,
    /// A variable had no variance; the decision defaults to independent.
    pub degenerate: bool,
}

/// Majority vote of the three tests at level `delta`.
pub fn majority_ci(sample: &CITestSample, delta: f64, config: &CiConfig) -> Result<CiDecision> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("significance level {delta} outside (0, 1)")));
    }
    let run = || -> Result<[f64; 3]> { Ok([cond_hsic(sample, config)?, cmi_knn(sample, config)?, regression_ci(sample, config)?]) };
    match run() {
        Ok(p) => {
            let rejections = p.iter().filter(|&&v| v < delta).count();
            Ok(CiDecision {
                dependent: rejections >= 2,
                hsic_p: Some(p[0]),
                cmi_p: Some(p[1]),
                regression_p: Some(p[2]),
                rejections,
                degenerate: false,
            })
        }
        Err(Error::DegenerateInput(_)) => Ok(CiDecision {
            dependent: false,
            hsic_p: None,
            cmi_p: None,
            regression_p: None,
            rejections: 0,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strata_shapes() {
        let z: Vec<f64> = (0..100).map(|i| f64::from(i % 4)).collect();
        let g = z_strata(&z);
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|grp| grp.iter().all(|&i| z[i] == z[grp[0]])));
        let z: Vec<f64> = (0..100).map(|i| f64::from(i) * 0.37 % 1.0).collect();
        let g = z_strata(&z);
        assert_eq!(g.len(), 20);
        assert_eq!(g.iter().map(Vec::len).sum::<usize>(), 100);
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let mut s = SyntheticCase::Dependent.sample(60, 1);
        s.x = vec![2.0; 60];
        assert!(matches!(cond_hsic(&s, &CiConfig::default()), Err(Error::DegenerateInput(_))));
        let d = majority_ci(&s, 0.01, &CiConfig::default()).unwrap();
        assert!(d.degenerate && !d.dependent);
    }

    #[test]
    fn duplicate_is_dependent() {
        let s = SyntheticCase::Duplicate.sample(120, 3);
        let cfg = CiConfig { hsic_permutations: 99, cmi_permutations: 99, ..CiConfig::default() };
        let d = majority_ci(&s, 0.05, &cfg).unwrap();
        assert!(d.dependent, "{d:?}");
        assert_eq!(d.rejections, 3);
    }

    #[test]
    fn p_values_in_unit_interval() {
        let s = SyntheticCase::Independent.sample(80, 4);
        let cfg = CiConfig { hsic_permutations: 49, cmi_permutations: 49, ..CiConfig::default() };
        for p in [cond_hsic(&s, &cfg).unwrap(), cmi_knn(&s, &cfg).unwrap()] {
            assert!(p > 0.0 && p <= 1.0);
        }
        let p = regression_ci(&s, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn size_and_shape_checks() {
        let s = SyntheticCase::Independent.sample(10, 0);
        assert!(cond_hsic(&s, &CiConfig::default()).is_err());
        assert!(CITestSample::new(vec![1.0], vec![], vec![1.0]).is_err());
        assert!(CITestSample::new(vec![f64::NAN], vec![1.0], vec![1.0]).is_err());
    }
}
