//! Single-output Gaussian process regression with known, per-observation
//! (heteroscedastic) noise variances.
//!
//! The covariance of the training targets is `K + V`, where `K` is the
//! kernel matrix and `V = diag(s²)`. Hyperparameters are trained by
//! maximizing the log marginal likelihood in log-parameter space.

mod kernel;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kernel::{kernel_matrix, KernelFamily, KernelParams};

use crate::error::{Error, Result};
use crate::optim::{self, LbfgsConfig};
use crate::stats::{self, LN_2PI};

/// Relative jitter schedule tried in order when a Cholesky factorization fails.
const JITTER_SCHEDULE: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpTrainingData {
    pub x: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub noise_vars: Vec<f64>,
    pub prior_mean: f64,
}

impl GpTrainingData {
    /// Training data with the prior mean set to the target mean.
    pub fn new(x: Vec<Vec<f64>>, targets: Vec<f64>, noise_vars: Vec<f64>) -> Result<Self> {
        let m = stats::mean(&targets);
        Self::with_prior_mean(x, targets, noise_vars, m)
    }

    pub fn with_prior_mean(
        x: Vec<Vec<f64>>,
        targets: Vec<f64>,
        noise_vars: Vec<f64>,
        prior_mean: f64,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::InvalidArgument("GP training data is empty".into()));
        }
        if targets.len() != n || noise_vars.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} inputs, {} targets, {} noise variances",
                targets.len(),
                noise_vars.len()
            )));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("ragged GP inputs".into()));
        }
        if targets.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) || !prior_mean.is_finite() {
            return Err(Error::InvalidArgument("non-finite GP training data".into()));
        }
        if noise_vars.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("noise variances must be finite and >= 0".into()));
        }
        Ok(Self {
            x,
            targets,
            noise_vars,
            prior_mean,
        })
    }

    /// Training data whose noise variances are floored at `1e-8` times the
    /// target variance, keeping `K + V` nonsingular when a local fit collapses.
    pub fn floored(x: Vec<Vec<f64>>, targets: Vec<f64>, noise_vars: Vec<f64>) -> Result<Self> {
        let m = stats::mean(&targets);
        let var = targets.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / targets.len().max(1) as f64;
        let floor = 1e-8 * var;
        let noise_vars = noise_vars.into_iter().map(|s| s.max(floor)).collect();
        Self::with_prior_mean(x, targets, noise_vars, m)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x[0].len()
    }

    fn centered(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.targets.iter().map(|t| t - self.prior_mean))
    }
}

/// Covariance of the targets, `K + V`.
pub fn training_covariance(params: &KernelParams, data: &GpTrainingData) -> Result<DMatrix<f64>> {
    let mut k = kernel_matrix(params, &data.x, &data.x)?;
    for (i, s) in data.noise_vars.iter().enumerate() {
        k[(i, i)] += s;
    }
    Ok(k)
}

/// Cholesky factorization with escalating diagonal jitter.
fn factorize(cov: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = cov.nrows();
    let mean_diag = (0..n).map(|i| cov[(i, i)]).sum::<f64>() / n as f64;
    for rel in JITTER_SCHEDULE {
        let mut m = cov.clone();
        if rel > 0.0 {
            for i in 0..n {
                m[(i, i)] += rel * mean_diag;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch);
        }
    }
    Err(Error::NotPositiveDefinite)
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> (f64, DVector<f64>) {
    let n = resid.len() as f64;
    let alpha = chol.solve(resid);
    let l = chol.l_dirty();
    let log_det: f64 = (0..resid.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n * LN_2PI;
    (lml, alpha)
}

/// `log N(y | m, K + V)` evaluated through a Cholesky factorization.
pub fn log_marginal_likelihood(params: &KernelParams, data: &GpTrainingData) -> Result<f64> {
    let chol = factorize(training_covariance(params, data)?)?;
    Ok(lml_from_factor(&chol, &data.centered()).0)
}

/// Log marginal likelihood and its gradient with respect to the flattened
/// log-parameters (`log ℓ_1..log ℓ_d`, `log σ_f²`).
pub fn lml_with_gradient(params: &KernelParams, data: &GpTrainingData) -> Result<(f64, Vec<f64>)> {
    let chol = factorize(training_covariance(params, data)?)?;
    let (lml, alpha) = lml_from_factor(&chol, &data.centered());
    let inv = chol.inverse();
    let n = data.len();
    let d = params.dim();
    let w = params.inv_sq_lengthscales();
    let sf2 = params.signal_variance();
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..=i {
            let a = alpha[i] * alpha[j] - inv[(i, j)];
            let mult = if i == j { 0.5 } else { 1.0 };
            let xi = &data.x[i];
            let xj = &data.x[j];
            let r2: f64 = (0..d).map(|q| (xi[q] - xj[q]).powi(2) * w[q]).sum();
            let kij = params.eval_r2(sf2, r2);
            grad[d] += mult * a * kij;
            if i != j {
                let fac = params.lengthscale_factor(sf2, r2);
                for q in 0..d {
                    grad[q] += mult * a * fac * (xi[q] - xj[q]).powi(2) * w[q];
                }
            }
        }
    }
    Ok((lml, grad))
}

/// A GP with cached factorization of `K + V` and `α = (K + V)⁻¹ (y − m)`.
#[derive(Debug, Clone)]
pub struct TrainedGp {
    pub params: KernelParams,
    pub data: GpTrainingData,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
}

impl TrainedGp {
    /// Conditions a GP with fixed hyperparameters on `data`.
    pub fn new(params: KernelParams, data: GpTrainingData) -> Result<Self> {
        if params.dim() != data.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "kernel has d={} but data has d={}",
                params.dim(),
                data.input_dim()
            )));
        }
        let chol = factorize(training_covariance(&params, &data)?)?;
        let (lml, alpha) = lml_from_factor(&chol, &data.centered());
        Ok(Self {
            params,
            data,
            chol,
            alpha,
            lml,
        })
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Posterior mean and variance of the latent function at one input.
    pub fn predict_one(&self, xstar: &[f64]) -> Result<(f64, f64)> {
        if xstar.len() != self.params.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query has d={} but GP has d={}",
                xstar.len(),
                self.params.dim()
            )));
        }
        let w = self.params.inv_sq_lengthscales();
        let sf2 = self.params.signal_variance();
        let kstar = DVector::from_iterator(
            self.data.len(),
            self.data.x.iter().map(|xi| self.params.eval_with(&w, sf2, xi, xstar)),
        );
        let mean = self.data.prior_mean + kstar.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        let var = (self.params.eval_with(&w, sf2, xstar, xstar) - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// Posterior means and variances at each query row.
    pub fn posterior_predict(&self, xstar: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut means = Vec::with_capacity(xstar.len());
        let mut vars = Vec::with_capacity(xstar.len());
        for x in xstar {
            let (m, v) = self.predict_one(x)?;
            means.push(m);
            vars.push(v);
        }
        Ok((means, vars))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpTrainConfig {
    pub family: KernelFamily,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for GpTrainConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            restarts: 5,
            max_iters: 200,
            seed: 0,
        }
    }
}

struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    fn contains(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }
}

/// Data-derived default scales: per-dimension median pairwise distance and
/// the target variance.
fn default_scales(data: &GpTrainingData) -> (Vec<f64>, f64, Vec<f64>) {
    let d = data.input_dim();
    let n = data.len();
    let mut lengthscales = Vec::with_capacity(d);
    let mut ranges = Vec::with_capacity(d);
    for q in 0..d {
        let col: Vec<f64> = data.x.iter().map(|r| r[q]).collect();
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = if hi > lo { hi - lo } else { 1.0 };
        // Subsample pairs for large N; the median is robust to this.
        let stride = (n / 200).max(1);
        let mut dists = Vec::new();
        for i in (0..n).step_by(stride) {
            for j in (i + 1..n).step_by(stride) {
                let dd = (col[i] - col[j]).abs();
                if dd > 0.0 {
                    dists.push(dd);
                }
            }
        }
        let med = stats::median(&dists);
        lengthscales.push(if med.is_finite() && med > 0.0 { med } else { range });
        ranges.push(range);
    }
    let m = data.prior_mean;
    let var = data.targets.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n as f64;
    let noise = stats::mean(&data.noise_vars);
    let scale = if var > 0.0 {
        var
    } else if noise > 0.0 {
        noise
    } else {
        1.0
    };
    (lengthscales, scale, ranges)
}

/// Trains kernel hyperparameters by multi-start L-BFGS on the log marginal
/// likelihood. The first start is the data-derived default; the remaining
/// starts are drawn log-uniformly within a factor of 10 of it.
pub fn train_gp(data: GpTrainingData, cfg: &GpTrainConfig) -> Result<TrainedGp> {
    let (ls0, sf0, ranges) = default_scales(&data);
    let d = ls0.len();
    let mut lower: Vec<f64> = ranges.iter().map(|r| (r * 1e-3).ln()).collect();
    let mut upper: Vec<f64> = ranges.iter().map(|r| (r * 1e3).ln()).collect();
    lower.push((sf0 * 1e-8).ln());
    upper.push((sf0 * 1e4).ln());
    let bounds = Bounds { lower, upper };

    let mut start0: Vec<f64> = ls0.iter().map(|l| l.ln()).collect();
    start0.push(sf0.ln());
    for (v, (lo, hi)) in start0.iter_mut().zip(bounds.lower.iter().zip(&bounds.upper)) {
        *v = v.clamp(*lo, *hi);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![start0.clone()];
    for _ in 1..cfg.restarts.max(1) {
        starts.push(
            start0
                .iter()
                .zip(bounds.lower.iter().zip(&bounds.upper))
                .map(|(v, (lo, hi))| (v + rng.random_range(-1.0..1.0) * std::f64::consts::LN_10).clamp(*lo, *hi))
                .collect(),
        );
    }

    let lcfg = LbfgsConfig {
        max_iters: cfg.max_iters,
        grad_tol: 1e-6,
        f_tol: 1e-10,
        ..Default::default()
    };
    let family = cfg.family;
    let objective = |v: &[f64]| -> Option<(f64, Vec<f64>)> {
        if !bounds.contains(v) {
            return None;
        }
        let p = KernelParams::from_vec(family, v);
        let (lml, g) = lml_with_gradient(&p, &data).ok()?;
        Some((-lml, g.into_iter().map(|x| -x).collect()))
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in &starts {
        let Some(m) = optim::minimize(objective, s, &lcfg) else {
            continue;
        };
        if best.as_ref().is_none_or(|(v, _)| m.value < *v) {
            best = Some((m.value, m.x));
        }
    }
    let (_, v) = best.ok_or(Error::NotPositiveDefinite)?;
    debug_assert_eq!(v.len(), d + 1);
    TrainedGp::new(KernelParams::from_vec(family, &v), data)
}
