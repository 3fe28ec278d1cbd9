//! Gaussian mixtures with diagonal component covariances: the closed-form
//! predictive densities produced by a fitted model.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{log_sum_exp, normal_cdf, normal_log_pdf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMixture {
    pub weights: Vec<f64>,
    /// `K × p` component means.
    pub means: Vec<Vec<f64>>,
    /// `K × p` component variances (diagonal covariances).
    pub vars: Vec<Vec<f64>>,
}

impl PredictiveMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || vars.len() != k {
            return Err(Error::DimensionMismatch("mixture parameter lengths differ".into()));
        }
        let p = means[0].len();
        if means.iter().chain(&vars).any(|r| r.len() != p) || p == 0 {
            return Err(Error::DimensionMismatch("ragged mixture parameters".into()));
        }
        if vars.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("component variances must be positive".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument("weights must lie on the simplex".into()));
        }
        Ok(Self { weights, means, vars })
    }

    /// Univariate mixture from scalar parameters.
    pub fn univariate(weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        Self::new(
            weights,
            means.into_iter().map(|m| vec![m]).collect(),
            vars.into_iter().map(|v| vec![v]).collect(),
        )
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Per-component `log w_k + log N(y | μ_k, Σ_k)`.
    pub fn component_log_terms(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n_components())
            .map(|k| {
                let lw = self.weights[k].ln();
                if lw == f64::NEG_INFINITY {
                    return lw;
                }
                lw + y
                    .iter()
                    .zip(&self.means[k])
                    .zip(&self.vars[k])
                    .map(|((yi, m), v)| normal_log_pdf(*yi, *m, *v))
                    .sum::<f64>()
            })
            .collect()
    }

    /// Log-density, with the largest component term factored out.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_terms(y))
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        self.log_density(y).exp()
    }

    /// Marginal mixture of output coordinate `j`.
    pub fn marginal(&self, j: usize) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| vec![m[j]]).collect(),
            vars: self.vars.iter().map(|v| vec![v[j]]).collect(),
        }
    }

    fn require_univariate(&self) {
        assert_eq!(self.dim(), 1, "operation requires a univariate mixture; use marginal()");
    }

    /// Mixture CDF (univariate).
    pub fn cdf(&self, y: f64) -> f64 {
        self.require_univariate();
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((w, m), v)| w * normal_cdf(y, m[0], v[0]))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Mean and variance (univariate).
    pub fn moments(&self) -> (f64, f64) {
        self.require_univariate();
        let mean: f64 = self.weights.iter().zip(&self.means).map(|(w, m)| w * m[0]).sum();
        let second: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((w, m), v)| w * (v[0] + m[0] * m[0]))
            .sum();
        (mean, (second - mean * mean).max(0.0))
    }

    /// Inverse CDF by bisection to `1e-10`; the bracket starts at the
    /// component range and is doubled up to ten times if it does not
    /// contain the target probability.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        self.require_univariate();
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {prob} outside (0, 1)")));
        }
        let (mut lo, mut hi) = self
            .means
            .iter()
            .zip(&self.vars)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (m, v)| {
                let s = v[0].sqrt();
                (a.min(m[0] - 8.0 * s), b.max(m[0] + 8.0 * s))
            });
        let mut widenings = 0;
        while !(self.cdf(lo) <= prob && self.cdf(hi) >= prob) {
            if widenings == 10 {
                return Err(Error::Numerical(format!("could not bracket quantile {prob}")));
            }
            let w = (hi - lo).max(1.0);
            lo -= w;
            hi += w;
            widenings += 1;
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Ancestral sampling: a component by weight, then a diagonal Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let idx = WeightedIndex::new(&self.weights).expect("weights on the simplex");
        (0..n)
            .map(|_| {
                let k = idx.sample(rng);
                self.means[k]
                    .iter()
                    .zip(&self.vars[k])
                    .map(|(m, v)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + v.sqrt() * z
                    })
                    .collect()
            })
            .collect()
    }
}
