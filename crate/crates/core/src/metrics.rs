//! Divergences between gridded densities, sample-based joint metrics, and
//! calibration and scoring of predictive mixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GriddedDensity, SampleBlock};
use crate::error::{Error, Result};
use crate::predictive::PredictiveMixture;
use crate::stats::trapezoid_weights;

/// Density floor applied before logarithms in the symmetric KL.
pub const KL_FLOOR: f64 = 1e-12;
pub const COVERAGE_LEVELS: [f64; 3] = [0.5, 0.9, 0.95];
pub const DEFAULT_SLICES: usize = 64;
/// Nodes of the quadrature grid used for CRPS.
const CRPS_NODES: usize = 4001;

/// Reference and predicted densities on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    pub grid: Vec<f64>,
    pub p_ref: Vec<f64>,
    pub q_pred: Vec<f64>,
    pub quad_weights: Vec<f64>,
}

impl DensityPair {
    /// Checks shapes and that both densities integrate to 1 within `1e-6`.
    pub fn new(grid: Vec<f64>, p_ref: Vec<f64>, q_pred: Vec<f64>, quad_weights: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if m < 2 || p_ref.len() != m || q_pred.len() != m || quad_weights.len() != m {
            return Err(Error::DimensionMismatch("density pair arrays differ in length".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        for (name, d) in [("reference", &p_ref), ("predicted", &q_pred)] {
            if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} density must be finite and nonnegative")));
            }
            let mass: f64 = d.iter().zip(&quad_weights).map(|(a, b)| a * b).sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("{name} density has mass {mass}, not 1")));
            }
        }
        Ok(Self {
            grid,
            p_ref,
            q_pred,
            quad_weights,
        })
    }

    /// Evaluates a univariate predictive analytically on the reference
    /// grid and renormalizes it there.
    pub fn from_mixture(reference: &GriddedDensity, mix: &PredictiveMixture) -> Result<Self> {
        let mut q: Vec<f64> = reference.grid.iter().map(|y| mix.density(&[*y])).collect();
        let mass: f64 = q.iter().zip(&reference.quad_weights).map(|(a, b)| a * b).sum();
        if !(mass > 0.0) {
            return Err(Error::Numerical("predictive has no mass on the reference grid".into()));
        }
        q.iter_mut().for_each(|v| *v /= mass);
        Self::new(
            reference.grid.clone(),
            reference.density.clone(),
            q,
            reference.quad_weights.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    pub bhattacharyya: f64,
    pub symmetric_kl: f64,
    pub wasserstein1: f64,
    pub l1: f64,
}

pub fn divergences(pair: &DensityPair) -> Divergences {
    let mut bc = 0.0;
    let mut skl = 0.0;
    let mut l1 = 0.0;
    let mut w1 = 0.0;
    let (mut cp, mut cq) = (0.0, 0.0);
    for i in 0..pair.grid.len() {
        let (p, q, w) = (pair.p_ref[i], pair.q_pred[i], pair.quad_weights[i]);
        bc += (p * q).sqrt() * w;
        let (pf, qf) = (p.max(KL_FLOOR), q.max(KL_FLOOR));
        skl += w * (pf - qf) * (pf / qf).ln();
        l1 += (p - q).abs() * w;
        cp += p * w;
        cq += q * w;
        w1 += (cp - cq).abs() * w;
    }
    Divergences {
        bhattacharyya: (-bc.min(1.0).ln()).max(0.0),
        symmetric_kl: skl.max(0.0),
        wasserstein1: w1,
        l1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDivergences {
    pub energy: f64,
    pub sliced_w1: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let total: f64 = a.par_iter().map(|x| b.iter().map(|y| euclid(x, y)).sum::<f64>()).collect::<Vec<_>>().iter().sum();
    total / (a.len() * b.len()) as f64
}

/// Energy distance `2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖` between the empirical
/// distributions of the two sample sets.
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    (2.0 * mean_pair_distance(x, y) - mean_pair_distance(x, x) - mean_pair_distance(y, y)).max(0.0)
}

/// `∫|F − G|` between two empirical distributions on the line.
pub fn empirical_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - last);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        last = next;
    }
    total
}

/// Mean one-dimensional W1 over projections onto the given directions.
pub fn sliced_w1_with_directions(x: &[Vec<f64>], y: &[Vec<f64>], directions: &[Vec<f64>]) -> f64 {
    let proj = |s: &[Vec<f64>], d: &[f64]| -> Vec<f64> {
        s.iter().map(|v| v.iter().zip(d).map(|(a, b)| a * b).sum()).collect()
    };
    let vals: Vec<f64> = directions
        .par_iter()
        .map(|d| empirical_w1(&proj(x, d), &proj(y, d)))
        .collect();
    vals.iter().sum::<f64>() / directions.len() as f64
}

/// Unit directions drawn uniformly on the sphere from a seed.
pub fn random_directions(p: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|a| a / norm).collect();
            }
        })
        .collect()
}

pub fn joint_divergences(x: &[Vec<f64>], y: &[Vec<f64>], n_slices: usize, seed: u64) -> Result<JointDivergences> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("sample sets must be nonempty".into()));
    }
    let p = x[0].len();
    if p == 0 || x.iter().chain(y).any(|v| v.len() != p) {
        return Err(Error::DimensionMismatch("sample sets have different dimensions".into()));
    }
    if n_slices == 0 {
        return Err(Error::InvalidArgument("need at least one slice".into()));
    }
    let dirs = random_directions(p, n_slices, seed);
    Ok(JointDivergences {
        energy: energy_distance(x, y),
        sliced_w1: sliced_w1_with_directions(x, y, &dirs),
    })
}

/// Per-observation calibration diagnostics. For multivariate outputs PIT,
/// coverage and CRPS hold one entry per (observation, coordinate).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub pit_values: Vec<f64>,
    /// One list of interval hits per level in [`COVERAGE_LEVELS`].
    pub coverage_hits: Vec<Vec<bool>>,
    pub log_scores: Vec<f64>,
    pub crps_values: Vec<f64>,
    /// Test input index of each log score.
    pub input_index: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub pit_mean: f64,
    pub pit_std: f64,
    pub cov50: f64,
    pub cov90: f64,
    pub cov95: f64,
    pub log_score: f64,
    pub crps: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl CalibrationRecord {
    pub fn summary(&self) -> CalibrationSummary {
        let (pit_mean, pit_std) = mean_std(&self.pit_values);
        let rate = |hits: &[bool]| hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
        CalibrationSummary {
            pit_mean,
            pit_std,
            cov50: rate(&self.coverage_hits[0]),
            cov90: rate(&self.coverage_hits[1]),
            cov95: rate(&self.coverage_hits[2]),
            log_score: mean_std(&self.log_scores).0,
            crps: mean_std(&self.crps_values).0,
        }
    }

    fn extend(&mut self, other: CalibrationRecord) {
        self.pit_values.extend(other.pit_values);
        if self.coverage_hits.is_empty() {
            self.coverage_hits = vec![Vec::new(); COVERAGE_LEVELS.len()];
        }
        for (a, b) in self.coverage_hits.iter_mut().zip(other.coverage_hits) {
            a.extend(b);
        }
        self.log_scores.extend(other.log_scores);
        self.crps_values.extend(other.crps_values);
        self.input_index.extend(other.input_index);
    }
}

/// CRPS of a univariate mixture at several observations, by trapezoidal
/// quadrature of `F²` below and `(1 − F)²` above each observation over a
/// grid spanning ±10 standard deviations.
pub struct CrpsEvaluator<'a> {
    mix: &'a PredictiveMixture,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    /// `below[i] = ∫_{lo}^{grid[i]} F²`.
    below: Vec<f64>,
    /// `above[i] = ∫_{grid[i]}^{hi} (1 − F)²`.
    above: Vec<f64>,
}

impl<'a> CrpsEvaluator<'a> {
    pub fn new(mix: &'a PredictiveMixture) -> Self {
        let (m, v) = mix.moments();
        let s = v.sqrt().max(1e-12);
        let (lo, hi) = (m - 10.0 * s, m + 10.0 * s);
        let grid: Vec<f64> = (0..CRPS_NODES)
            .map(|i| lo + (hi - lo) * i as f64 / (CRPS_NODES - 1) as f64)
            .collect();
        let cdf: Vec<f64> = grid.iter().map(|y| mix.cdf(*y)).collect();
        let mut below = vec![0.0; CRPS_NODES];
        let mut above = vec![0.0; CRPS_NODES];
        for i in 1..CRPS_NODES {
            let h = grid[i] - grid[i - 1];
            below[i] = below[i - 1] + 0.5 * h * (cdf[i - 1].powi(2) + cdf[i].powi(2));
        }
        for i in (0..CRPS_NODES - 1).rev() {
            let h = grid[i + 1] - grid[i];
            above[i] = above[i + 1] + 0.5 * h * ((1.0 - cdf[i]).powi(2) + (1.0 - cdf[i + 1]).powi(2));
        }
        Self {
            mix,
            grid,
            cdf,
            below,
            above,
        }
    }

    pub fn crps(&self, y: f64) -> f64 {
        let last = self.grid.len() - 1;
        let (lo, hi) = (self.grid[0], self.grid[last]);
        if y <= lo {
            return (lo - y) + self.above[0];
        }
        if y >= hi {
            return self.below[last] + (y - hi);
        }
        let i = self.grid.partition_point(|g| *g <= y) - 1;
        let fy = self.mix.cdf(y);
        let left = self.below[i] + 0.5 * (y - self.grid[i]) * (self.cdf[i].powi(2) + fy * fy);
        let right = self.above[i + 1] + 0.5 * (self.grid[i + 1] - y) * ((1.0 - fy).powi(2) + (1.0 - self.cdf[i + 1]).powi(2));
        left + right
    }
}

fn calibrate_one(index: usize, mix: &PredictiveMixture, block: &SampleBlock) -> Result<CalibrationRecord> {
    let p = mix.dim();
    if block.dim() != p {
        return Err(Error::DimensionMismatch("observations and predictive differ in dimension".into()));
    }
    let mut rec = CalibrationRecord {
        coverage_hits: vec![Vec::new(); COVERAGE_LEVELS.len()],
        ..Default::default()
    };
    rec.log_scores = block.rows().map(|y| mix.log_density(y)).collect();
    rec.input_index = vec![index; block.len()];
    for j in 0..p {
        let marginal = mix.marginal(j);
        let intervals = COVERAGE_LEVELS
            .iter()
            .map(|g| Ok((marginal.quantile((1.0 - g) / 2.0)?, marginal.quantile((1.0 + g) / 2.0)?)))
            .collect::<Result<Vec<_>>>()?;
        let crps = CrpsEvaluator::new(&marginal);
        for y in block.rows().map(|r| r[j]) {
            rec.pit_values.push(marginal.cdf(y));
            for (hits, (a, b)) in rec.coverage_hits.iter_mut().zip(&intervals) {
                hits.push(y >= *a && y <= *b);
            }
            rec.crps_values.push(crps.crps(y));
        }
    }
    Ok(rec)
}

/// PIT, central-interval coverage, log score and CRPS of held-out
/// observations under per-input predictive mixtures. Multivariate outputs
/// are scored marginally per coordinate, except the joint log score.
pub fn calibration(predictives: &[PredictiveMixture], blocks: &[SampleBlock]) -> Result<CalibrationRecord> {
    if predictives.len() != blocks.len() || predictives.is_empty() {
        return Err(Error::DimensionMismatch("one predictive per observation block required".into()));
    }
    let parts = predictives
        .par_iter()
        .zip(blocks)
        .enumerate()
        .map(|(i, (m, b))| calibrate_one(i, m, b))
        .collect::<Result<Vec<_>>>()?;
    let mut rec = CalibrationRecord::default();
    for p in parts {
        rec.extend(p);
    }
    Ok(rec)
}

/// Mean and population standard deviation, as reported per metric.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    mean_std(values)
}

/// Predictive density values and trapezoidal weights on `grid`.
pub fn tabulate(mix: &PredictiveMixture, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (grid.iter().map(|y| mix.density(&[*y])).collect(), trapezoid_weights(grid))
}
