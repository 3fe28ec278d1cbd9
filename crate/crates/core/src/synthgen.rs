//! Synthetic distribution-valued benchmark.
//!
//! The conditional density at `x ∈ [−3, 3]` is a hierarchical mixture of
//! three blocks with four Gaussian sub-components each, centred on the
//! latent trend `f(x)`. A separation field `s(x)` pushes the two outer
//! blocks away from the central one and raises their weights. Where `s`
//! is small the outer blocks lose their weight and collapse onto the
//! centre, leaving a single mode; where it is large there are three.
//! Parameter curves are fixed smooth functions; the seed only drives
//! sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataEntry, DistributionValuedDataset, GriddedDensity, InputPoint, SampleBlock};
use crate::error::{Error, Result};
use crate::predictive::PredictiveMixture;
use crate::stats::{derive_seed, normal_cdf, normal_pdf};

pub const BLOCKS: usize = 3;
pub const SUBCOMPONENTS: usize = 4;

/// `0.95 sin(1.05x − 0.30) + 0.55 sin(2.45x + 0.80) − 0.38 tanh(1.8x) + 0.075x³`.
pub fn latent_trend(x: f64) -> f64 {
    0.95 * (1.05 * x - 0.30).sin() + 0.55 * (2.45 * x + 0.80).sin() - 0.38 * (1.8 * x).tanh() + 0.075 * x.powi(3)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Separation field `1.6 · sigmoid(2 sin(1.3x))`.
pub fn separation(x: f64) -> f64 {
    1.6 * sigmoid(2.0 * (1.3 * x).sin())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mixture parameters of the field at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub block_weights: [f64; BLOCKS],
    pub sub_weights: [[f64; SUBCOMPONENTS]; BLOCKS],
    pub means: [[f64; SUBCOMPONENTS]; BLOCKS],
    pub sds: [[f64; SUBCOMPONENTS]; BLOCKS],
}

/// Spread of the outer blocks per unit of separation.
const OFFSET_SCALE: f64 = 3.2;
const SD_MIN: f64 = 0.08;
const SD_MAX: f64 = 0.35;
/// Base spacing of the sub-component means within a block.
const JITTER_BASE: f64 = 0.38;
/// Extra spacing switched on where the separation is large.
const JITTER_GATED: f64 = 0.3;

pub fn field_params(x: f64) -> FieldParams {
    let f = latent_trend(x);
    let s = separation(x);
    // Outer-block logit: raised where s is large, pushed down hard where s is small.
    let side = -2.0 + 3.5 * sigmoid(6.0 * (s - 0.8)) - 3.0 * sigmoid(12.0 * (0.45 - s));
    let wiggle = 0.3 * (0.8 * x).sin();
    let bw = softmax(&[side + wiggle, 0.0, side - wiggle]);
    let mut p = FieldParams {
        block_weights: [bw[0], bw[1], bw[2]],
        sub_weights: [[0.0; SUBCOMPONENTS]; BLOCKS],
        means: [[0.0; SUBCOMPONENTS]; BLOCKS],
        sds: [[0.0; SUBCOMPONENTS]; BLOCKS],
    };
    let gate = sigmoid(6.0 * (s - 0.8));
    let sd = SD_MIN + (SD_MAX - SD_MIN) * sigmoid(0.4 * (s - 0.8));
    for b in 0..BLOCKS {
        // The outer blocks merge into the central one as s shrinks.
        let offset = (b as f64 - 1.0) * OFFSET_SCALE * s * sigmoid(8.0 * (s - 0.5));
        let bf = b as f64;
        let logits: Vec<f64> = (0..SUBCOMPONENTS)
            .map(|j| 0.2 * (0.7 * x + 1.3 * j as f64 + 0.9 * bf).sin())
            .collect();
        let a = softmax(&logits);
        for j in 0..SUBCOMPONENTS {
            let delta = j as f64 - 1.5;
            let jitter = (JITTER_BASE + JITTER_GATED * gate) * delta + 0.05 * delta * (0.9 * x + bf).sin();
            p.sub_weights[b][j] = a[j];
            p.means[b][j] = f + offset + jitter;
            p.sds[b][j] = sd;
        }
    }
    p
}

impl FieldParams {
    /// The field as a flat 12-component univariate mixture.
    pub fn to_mixture(&self) -> PredictiveMixture {
        let mut w = Vec::with_capacity(BLOCKS * SUBCOMPONENTS);
        let mut m = Vec::with_capacity(BLOCKS * SUBCOMPONENTS);
        let mut v = Vec::with_capacity(BLOCKS * SUBCOMPONENTS);
        for b in 0..BLOCKS {
            for j in 0..SUBCOMPONENTS {
                w.push(self.block_weights[b] * self.sub_weights[b][j]);
                m.push(vec![self.means[b][j]]);
                v.push(vec![self.sds[b][j].powi(2)]);
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        PredictiveMixture {
            weights: w,
            means: m,
            vars: v,
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        let mut d = 0.0;
        for b in 0..BLOCKS {
            for j in 0..SUBCOMPONENTS {
                d += self.block_weights[b] * self.sub_weights[b][j] * normal_pdf(y, self.means[b][j], self.sds[b][j].powi(2));
            }
        }
        d
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let mut c = 0.0;
        for b in 0..BLOCKS {
            for j in 0..SUBCOMPONENTS {
                c += self.block_weights[b] * self.sub_weights[b][j] * normal_cdf(y, self.means[b][j], self.sds[b][j].powi(2));
            }
        }
        c.clamp(0.0, 1.0)
    }

    fn support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b in 0..BLOCKS {
            for j in 0..SUBCOMPONENTS {
                lo = lo.min(self.means[b][j] - 12.0 * self.sds[b][j]);
                hi = hi.max(self.means[b][j] + 12.0 * self.sds[b][j]);
            }
        }
        (lo, hi)
    }

    /// Inverse CDF by bisection to `1e-12`.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = self.support();
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub t: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub grid_points: usize,
    /// Margin added on both sides of the field's global range.
    pub grid_margin: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 300,
            t: 2000,
            x_min: -3.0,
            x_max: 3.0,
            grid_points: 512,
            grid_margin: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticField {
    pub config: SyntheticConfig,
}

impl SyntheticField {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.n == 0 || config.t == 0 {
            return Err(Error::InvalidArgument("N and T must be positive".into()));
        }
        if !(config.x_max > config.x_min) || config.grid_points < 2 {
            return Err(Error::InvalidArgument("invalid domain or grid size".into()));
        }
        Ok(Self { config })
    }

    /// Evenly spaced inputs on `[x_min, x_max]`.
    pub fn inputs(&self) -> Vec<f64> {
        let c = &self.config;
        if c.n == 1 {
            return vec![0.5 * (c.x_min + c.x_max)];
        }
        (0..c.n)
            .map(|i| c.x_min + (c.x_max - c.x_min) * i as f64 / (c.n - 1) as f64)
            .collect()
    }

    pub fn id(&self, i: usize) -> String {
        format!("x{i:04}")
    }

    /// Uniform grid spanning the global range of component means over all
    /// inputs, widened by the margin.
    pub fn global_grid(&self) -> Vec<f64> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in self.inputs() {
            let p = field_params(x);
            for row in &p.means {
                for m in row {
                    lo = lo.min(*m);
                    hi = hi.max(*m);
                }
            }
        }
        let (lo, hi) = (lo - self.config.grid_margin, hi + self.config.grid_margin);
        let m = self.config.grid_points;
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    }

    /// True density at `x` on `grid`, normalized by trapezoidal quadrature.
    /// Values are floored at the smallest normal double so they stay
    /// strictly positive in the far tails.
    pub fn conditional_density(&self, x: f64, grid: &[f64]) -> Result<Vec<f64>> {
        let p = field_params(x);
        let d: Vec<f64> = grid.iter().map(|y| p.density(*y).max(f64::MIN_POSITIVE)).collect();
        Ok(GriddedDensity::new("", grid.to_vec(), d)?.density)
    }

    /// `t` draws from the conditional at `x` by inverse-CDF sampling.
    pub fn draw_samples(&self, x: f64, t: usize, seed: u64) -> Vec<f64> {
        let p = field_params(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| p.quantile(rng.random::<f64>())).collect()
    }

    /// Samples at every input (per-input streams derived from the seed)
    /// plus the exact gridded densities.
    pub fn realize(&self) -> Result<DistributionValuedDataset> {
        let grid = self.global_grid();
        let xs = self.inputs();
        let entries = xs
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                let id = self.id(i);
                let samples = self.draw_samples(x, self.config.t, derive_seed(self.config.seed, i as u64));
                let density = self.conditional_density(x, &grid)?;
                Ok(DataEntry {
                    input: InputPoint { id: id.clone(), x: vec![x] },
                    samples: Some(SampleBlock::scalar(id.clone(), samples)?),
                    grid: Some(GriddedDensity::new(id, grid.clone(), density)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DistributionValuedDataset::new(entries)
    }
}

/// Two-output field with two separated component tracks:
/// `(f(x) ± 1.5, ±0.8 sin x)` with weights `0.45 / 0.55` and diagonal
/// standard deviations `(0.25, 0.2)`.
#[derive(Debug, Clone, Copy)]
pub struct TwoTrackField {
    pub n: usize,
    pub t: usize,
    pub seed: u64,
}

impl TwoTrackField {
    pub const WEIGHTS: [f64; 2] = [0.45, 0.55];
    pub const SDS: [f64; 2] = [0.25, 0.2];

    pub fn means(x: f64) -> [[f64; 2]; 2] {
        let f = latent_trend(x);
        [[f + 1.5, 0.8 * x.sin()], [f - 1.5, -0.8 * x.sin()]]
    }

    pub fn mixture(x: f64) -> PredictiveMixture {
        let m = Self::means(x);
        let v = vec![Self::SDS[0].powi(2), Self::SDS[1].powi(2)];
        PredictiveMixture {
            weights: Self::WEIGHTS.to_vec(),
            means: vec![m[0].to_vec(), m[1].to_vec()],
            vars: vec![v.clone(), v],
        }
    }

    pub fn realize(&self) -> Result<DistributionValuedDataset> {
        let n = self.n.max(2);
        let entries = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, i as u64));
                let m = Self::means(x);
                let mut values = Vec::with_capacity(2 * self.t);
                for _ in 0..self.t {
                    let c = usize::from(rng.random::<f64>() >= Self::WEIGHTS[0]);
                    for j in 0..2 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        values.push(m[c][j] + Self::SDS[j] * z);
                    }
                }
                let id = format!("x{i:04}");
                Ok(DataEntry {
                    input: InputPoint { id: id.clone(), x: vec![x] },
                    samples: Some(SampleBlock::new(id, 2, values)?),
                    grid: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DistributionValuedDataset::new(entries)
    }
}
