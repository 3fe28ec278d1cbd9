//! Scalar Gaussian helpers and seeding shared across modules.

use std::f64::consts::{PI, SQRT_2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn normal_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

#[inline]
pub fn normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    normal_log_pdf(y, mean, var).exp()
}

#[inline]
pub fn normal_cdf(y: f64, mean: f64, var: f64) -> f64 {
    0.5 * libm::erfc(-(y - mean) / (SQRT_2 * var.sqrt()))
}

/// Standard normal density at `z`.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Log-density of a diagonal-covariance Gaussian.
pub fn diag_normal_log_pdf(y: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    y.iter()
        .zip(mean)
        .zip(var)
        .map(|((&yi, &mi), &vi)| normal_log_pdf(yi, mi, vi))
        .sum()
}

/// `log(sum(exp(v)))` with the max subtracted first.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// Trapezoidal quadrature weights for a strictly increasing grid:
/// half the distance between neighbours, with half-width endpoints.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    match m {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..m)
            .map(|l| {
                let lo = grid[l.saturating_sub(1)];
                let hi = grid[(l + 1).min(m - 1)];
                0.5 * (hi - lo)
            })
            .collect(),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64;
    v.sqrt()
}

/// Median of a slice, NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seed for an independent random stream, derived from a base seed and a
/// stream index with the splitmix64 finalizer.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
