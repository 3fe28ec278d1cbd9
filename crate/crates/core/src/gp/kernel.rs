use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    SquaredExponential,
    Matern52,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "se" | "rbf" | "squared_exponential" => Ok(Self::SquaredExponential),
            "matern52" | "matern_52" | "matern" => Ok(Self::Matern52),
            other => Err(Error::InvalidArgument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Stationary ARD kernel hyperparameters, stored in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub family: KernelFamily,
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
}

const SQRT5: f64 = 2.236_067_977_499_79;

impl KernelParams {
    pub fn new(family: KernelFamily, lengthscales: &[f64], signal_variance: f64) -> Self {
        Self {
            family,
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    /// Flattened log-parameters: lengthscales first, then signal variance.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_variance);
        v
    }

    pub fn from_vec(family: KernelFamily, v: &[f64]) -> Self {
        let (ls, sv) = v.split_at(v.len() - 1);
        Self {
            family,
            log_lengthscales: ls.to_vec(),
            log_signal_variance: sv[0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.log_signal_variance.exp().is_finite()
            && self.log_signal_variance.exp() > 0.0
            && self
                .log_lengthscales
                .iter()
                .all(|l| l.exp().is_finite() && l.exp() > 0.0);
        if ok && !self.log_lengthscales.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("non-finite kernel parameters {self:?}")))
        }
    }

    /// Kernel value at prior (zero) distance.
    pub fn prior_variance(&self) -> f64 {
        self.signal_variance()
    }

    /// Scaled squared distance `Σ (a_q - b_q)^2 / ℓ_q^2`.
    #[inline]
    fn scaled_sq_dist(&self, inv_ls2: &[f64], a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(inv_ls2)
            .map(|((x, y), w)| (x - y) * (x - y) * w)
            .sum()
    }

    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    #[inline]
    pub(crate) fn eval_r2(&self, sf2: f64, r2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => sf2 * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                sf2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
        }
    }

    /// `∂k/∂(log ℓ_q) = factor(r²) · (Δ_q / ℓ_q)²`; this returns that factor.
    #[inline]
    pub(crate) fn lengthscale_factor(&self, sf2: f64, r2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => sf2 * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                sf2 * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let w = self.inv_sq_lengthscales();
        self.eval_r2(self.signal_variance(), self.scaled_sq_dist(&w, a, b))
    }

    pub(crate) fn eval_with(&self, inv_ls2: &[f64], sf2: f64, a: &[f64], b: &[f64]) -> f64 {
        self.eval_r2(sf2, self.scaled_sq_dist(inv_ls2, a, b))
    }
}

/// Cross-covariance matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix(params: &KernelParams, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    params.validate()?;
    let d = params.dim();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "kernel expects inputs of dimension {d}"
        )));
    }
    let w = params.inv_sq_lengthscales();
    let sf2 = params.signal_variance();
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        params.eval_with(&w, sf2, &a[i], &b[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_distance_value() {
        let p = KernelParams::new(KernelFamily::SquaredExponential, &[1.0], 1.0);
        let k = kernel_matrix(&p, &[vec![0.0], vec![1.0]], &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn symmetric_on_same_inputs() {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let p = KernelParams::new(family, &[0.8, 1.7], 2.0);
            let k = kernel_matrix(&p, &pts, &pts).unwrap();
            assert!((&k - k.transpose()).amax() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let mut p = KernelParams::new(KernelFamily::SquaredExponential, &[1.0], 1.0);
        p.log_signal_variance = f64::NAN;
        assert!(kernel_matrix(&p, &[vec![0.0]], &[vec![0.0]]).is_err());
        p.log_signal_variance = 1000.0;
        assert!(kernel_matrix(&p, &[vec![0.0]], &[vec![0.0]]).is_err());
    }

    #[test]
    fn matern_matches_closed_form() {
        let p = KernelParams::new(KernelFamily::Matern52, &[2.0], 1.5);
        let r: f64 = 0.5;
        let expected = 1.5 * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp();
        assert!((p.eval(&[0.0], &[1.0]) - expected).abs() < 1e-14);
    }
}
