//! Limited-memory BFGS minimizer with a backtracking Armijo line search.
//!
//! The objective returns `None` (or a non-finite value) for points it
//! cannot evaluate; the line search treats those as rejected steps and
//! shrinks, which is how box constraints are enforced by callers.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the gradient infinity-norm drops below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective drops below this.
    pub f_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            memory: 8,
            grad_tol: 1e-6,
            f_tol: 1e-10,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient at a point.
///
/// Returns `None` if the starting point cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut eval = |x: &[f64]| f(x).filter(|(v, g)| v.is_finite() && g.iter().all(|gi| gi.is_finite()));

    let mut x = x0.to_vec();
    let (mut fx, mut g) = eval(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let n = x.len();

    for iter in 0..cfg.max_iters {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < cfg.grad_tol {
            return Some(Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            });
        }

        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        } else {
            let gn = dot(&g, &g).sqrt();
            let scale = if gn > 1.0 { 1.0 / gn } else { 1.0 };
            q.iter_mut().for_each(|qi| *qi *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_line_search {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fxn, gn)) = accepted else {
            if history.is_empty() {
                return Some(Minimum {
                    x,
                    value: fx,
                    iterations: iter,
                    converged: false,
                });
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fxn;
        x = xn;
        g = gn;
        let prev = fx;
        fx = fxn;
        if decrease.abs() <= cfg.f_tol * prev.abs().max(fx.abs()).max(1.0) {
            return Some(Minimum {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
            });
        }
    }
    Some(Minimum {
        x,
        value: fx,
        iterations: cfg.max_iters,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Some((v, g))
        };
        let cfg = LbfgsConfig {
            max_iters: 500,
            grad_tol: 1e-8,
            f_tol: 0.0,
            ..Default::default()
        };
        let m = minimize(rosen, &[-1.2, 1.0], &cfg).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn respects_rejected_region() {
        // Minimum of (x-2)^2 restricted to x <= 1.
        let f = |x: &[f64]| (x[0] <= 1.0).then(|| ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]));
        let m = minimize(f, &[0.0], &LbfgsConfig::default()).unwrap();
        assert!(m.x[0] <= 1.0 && m.x[0] > 0.99);
    }
}
