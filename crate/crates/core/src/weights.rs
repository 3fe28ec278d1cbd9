//! Distributional log-likelihood and mixture-weight optimization.
//!
//! The objective at fixed component densities is
//! `f(w) = Σ_n Σ_s α_ns log Σ_k w_nk q_nk(y_ns)`, where the support points
//! `y_ns` and masses `α_ns` are either the samples at input `n` (mass
//! `1/T_n` each) or grid nodes (mass `p_n(y)Δy`). It is concave in the
//! weights, so shared weights are found by exponentiated-gradient ascent on
//! the simplex; input-dependent softmax-linear weights are then fitted by
//! L-BFGS starting from the shared solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GriddedDensity, SampleBlock};
use crate::error::{Error, Result};
use crate::optim::{minimize, LbfgsConfig};
use crate::stats::normal_log_pdf;

/// Where the objective is evaluated at one input.
#[derive(Debug, Clone)]
pub enum Support {
    Samples(SampleBlock),
    Grid(GriddedDensity),
}

/// Component predictive parameters and support at one training input.
#[derive(Debug, Clone)]
pub struct TableEntry {
    /// `K × p` component means.
    pub means: Vec<Vec<f64>>,
    /// `K × p` component variances.
    pub vars: Vec<Vec<f64>>,
    pub support: Support,
}

/// Component log-densities tabulated on every support point.
///
/// Stored as `exp(log q_sk − m_s)` with the per-point shift `m_s`, so the
/// objective for any weights is `Σ_s α_s (m_s + ln Σ_k w_k e_sk)`.
#[derive(Debug, Clone)]
pub struct ComponentDensityTable {
    k: usize,
    /// Support point range of each input.
    ranges: Vec<(usize, usize)>,
    mass: Vec<f64>,
    shift: Vec<f64>,
    scaled: Vec<f64>,
}

impl ComponentDensityTable {
    pub fn new(entries: &[TableEntry]) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidArgument("empty component density table".into()));
        };
        let k = first.means.len();
        if k == 0 {
            return Err(Error::InvalidArgument("table needs at least one component".into()));
        }
        let mut ranges = Vec::with_capacity(entries.len());
        let mut mass = Vec::new();
        let mut shift = Vec::new();
        let mut scaled = Vec::new();
        let mut terms = vec![0.0; k];
        for e in entries {
            if e.means.len() != k || e.vars.len() != k {
                return Err(Error::DimensionMismatch("component count differs between inputs".into()));
            }
            let p = e.means[0].len();
            if e.means.iter().chain(&e.vars).any(|r| r.len() != p) {
                return Err(Error::DimensionMismatch("ragged component parameters".into()));
            }
            if e.vars.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("component variances must be positive".into()));
            }
            let start = mass.len();
            let mut push = |y: &[f64], a: f64| {
                for (kk, t) in terms.iter_mut().enumerate() {
                    *t = y
                        .iter()
                        .zip(&e.means[kk])
                        .zip(&e.vars[kk])
                        .map(|((yi, m), v)| normal_log_pdf(*yi, *m, *v))
                        .sum();
                }
                let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mass.push(a);
                shift.push(m);
                scaled.extend(terms.iter().map(|t| (t - m).exp()));
            };
            match &e.support {
                Support::Samples(block) => {
                    if block.dim() != p {
                        return Err(Error::DimensionMismatch("sample dimension differs from components".into()));
                    }
                    let a = 1.0 / block.len() as f64;
                    block.rows().for_each(|y| push(y, a));
                }
                Support::Grid(g) => {
                    if p != 1 {
                        return Err(Error::DimensionMismatch("grid support requires univariate outputs".into()));
                    }
                    if g.quad_weights.iter().any(|w| !(*w > 0.0)) {
                        return Err(Error::InvalidArgument("grid weights must be positive".into()));
                    }
                    for ((y, d), w) in g.grid.iter().zip(&g.density).zip(&g.quad_weights) {
                        // Nodes without mass contribute nothing.
                        if d * w > 0.0 {
                            push(&[*y], d * w);
                        }
                    }
                }
            }
            ranges.push((start, mass.len()));
        }
        Ok(Self {
            k,
            ranges,
            mass,
            shift,
            scaled,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.ranges.len()
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    /// Sum of all support masses (the number of inputs for normalized data).
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn input_objective(&self, n: usize, w: &[f64]) -> f64 {
        let (a, b) = self.ranges[n];
        let k = self.k;
        (a..b)
            .map(|s| {
                let row = &self.scaled[s * k..(s + 1) * k];
                let q: f64 = row.iter().zip(w).map(|(e, wk)| e * wk).sum();
                self.mass[s] * (self.shift[s] + q.ln())
            })
            .sum()
    }

    /// Objective terms and `∂f_n/∂w_nk` for one input.
    fn input_objective_grad(&self, n: usize, w: &[f64], grad: &mut [f64]) -> f64 {
        let (a, b) = self.ranges[n];
        let k = self.k;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = 0.0;
        for s in a..b {
            let row = &self.scaled[s * k..(s + 1) * k];
            let q: f64 = row.iter().zip(w).map(|(e, wk)| e * wk).sum();
            f += self.mass[s] * (self.shift[s] + q.ln());
            let c = self.mass[s] / q;
            grad.iter_mut().zip(row).for_each(|(g, e)| *g += c * e);
        }
        f
    }

    /// Objective with one weight vector per input. Per-input terms are
    /// computed in parallel and summed in input order.
    fn objective_per_input(&self, weights: &[Vec<f64>]) -> f64 {
        let terms: Vec<f64> = (0..self.n_inputs())
            .into_par_iter()
            .map(|n| self.input_objective(n, &weights[n]))
            .collect();
        terms.iter().sum()
    }

    /// Objective and gradient for weights shared across inputs.
    pub fn shared_objective(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let parts: Vec<(f64, Vec<f64>)> = (0..self.n_inputs())
            .into_par_iter()
            .map(|n| {
                let mut g = vec![0.0; self.k];
                let f = self.input_objective_grad(n, w, &mut g);
                (f, g)
            })
            .collect();
        let mut grad = vec![0.0; self.k];
        let mut f = 0.0;
        for (fi, gi) in parts {
            f += fi;
            grad.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
        }
        (f, grad)
    }
}

fn check_simplex(w: &[f64], k: usize) -> Result<()> {
    if w.len() != k {
        return Err(Error::DimensionMismatch(format!("{} weights for {k} components", w.len())));
    }
    if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument("weights must lie on the simplex".into()));
    }
    Ok(())
}

/// Distributional log-likelihood with one simplex weight vector per input.
pub fn dist_loglik(table: &ComponentDensityTable, weights: &[Vec<f64>]) -> Result<f64> {
    if weights.len() != table.n_inputs() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight vectors for {} inputs",
            weights.len(),
            table.n_inputs()
        )));
    }
    for w in weights {
        check_simplex(w, table.n_components())?;
    }
    Ok(table.objective_per_input(weights))
}

/// Distributional log-likelihood with weights shared across inputs.
pub fn dist_loglik_shared(table: &ComponentDensityTable, w: &[f64]) -> Result<f64> {
    check_simplex(w, table.n_components())?;
    Ok(table.shared_objective(w).0)
}

/// The terms of `∫p log q = −H(p) − KL(p‖q)` evaluated by quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Terms {
    pub loglik: f64,
    pub entropy: f64,
    /// `+∞` when `q` vanishes where `p` has mass.
    pub kl: f64,
}

/// Cross-entropy decomposition of a gridded density `p` against density
/// values `q` on the same grid, using the grid's quadrature weights.
pub fn lemma1_decomposition(p: &GriddedDensity, q: &[f64]) -> Result<Lemma1Terms> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch("p and q live on different grids".into()));
    }
    if q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("q must be finite and nonnegative".into()));
    }
    let (mut loglik, mut entropy, mut kl) = (0.0, 0.0, 0.0);
    for ((pd, qd), w) in p.density.iter().zip(q).zip(&p.quad_weights) {
        if *pd == 0.0 {
            continue;
        }
        let a = pd * w;
        if *qd == 0.0 {
            return Ok(Lemma1Terms {
                loglik: f64::NEG_INFINITY,
                entropy: -p
                    .density
                    .iter()
                    .zip(&p.quad_weights)
                    .filter(|(d, _)| **d > 0.0)
                    .map(|(d, w)| d * w * d.ln())
                    .sum::<f64>(),
                kl: f64::INFINITY,
            });
        }
        loglik += a * qd.ln();
        entropy -= a * pd.ln();
        kl += a * (pd / qd).ln();
    }
    Ok(Lemma1Terms { loglik, entropy, kl })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedWeightConfig {
    /// Stop when the simplex-projected gradient norm drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Lower bound on every weight during the iterations.
    pub floor: f64,
}

impl Default for SharedWeightConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
            floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SharedWeightsResult {
    pub weights: Vec<f64>,
    pub objective: f64,
    /// Objective at equal weights `1/K`.
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Norm of the gradient projected on the simplex tangent space, with the
/// gradient normalized by total mass (so the KKT multiplier is 1).
fn projected_gradient_norm(w: &[f64], g: &[f64], total: f64) -> f64 {
    let lambda: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / total;
    w.iter()
        .zip(g)
        .map(|(a, b)| (a * (b / total - lambda)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn floor_and_normalize(w: &mut [f64], floor: f64) {
    w.iter_mut().for_each(|v| *v = v.max(floor));
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

/// Shared weights maximizing the distributional log-likelihood, by
/// exponentiated-gradient ascent from `1/K` with a monotone step-size search.
pub fn optimize_shared_weights(table: &ComponentDensityTable, cfg: &SharedWeightConfig) -> SharedWeightsResult {
    let k = table.n_components();
    let total = table.total_mass();
    let mut w = vec![1.0 / k as f64; k];
    let (mut f, mut g) = table.shared_objective(&w);
    let initial_objective = f;
    if k == 1 {
        return SharedWeightsResult {
            weights: w,
            objective: f,
            initial_objective,
            iterations: 0,
            converged: true,
        };
    }
    let mut eta = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        if projected_gradient_norm(&w, &g, total) < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..80 {
            let gmax = g.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) / total;
            let mut trial: Vec<f64> = w
                .iter()
                .zip(&g)
                .map(|(wk, gk)| wk * (eta * (gk / total - gmax)).exp())
                .collect();
            floor_and_normalize(&mut trial, cfg.floor);
            let (ft, gt) = table.shared_objective(&trial);
            if ft.is_finite() && ft >= f {
                let gain = ft - f;
                w = trial;
                f = ft;
                g = gt;
                eta = (eta * 2.0).min(1e8);
                accepted = true;
                if gain <= 1e-15 * f.abs().max(1.0) && projected_gradient_norm(&w, &g, total) < cfg.tol.sqrt() {
                    // Progress has stalled at machine precision.
                    converged = true;
                }
                break;
            }
            eta *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    SharedWeightsResult {
        weights: w,
        objective: f,
        initial_objective,
        iterations,
        converged,
    }
}

/// Softmax-linear input-dependent weights with the last class as anchor:
/// `w_k(x) ∝ exp(β_k·z + b_k)` for `k < K` and `w_K(x) ∝ 1`, where
/// `z = (x − x_mean) / x_scale` is the standardized input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDependentWeights {
    /// `(K−1) × d` slopes in standardized coordinates.
    pub beta: Vec<Vec<f64>>,
    /// Length `K−1` intercepts.
    pub bias: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
}

impl InputDependentWeights {
    /// The nested model with `β = 0` that reproduces shared weights `w`.
    pub fn from_shared(w: &[f64], x_mean: Vec<f64>, x_scale: Vec<f64>) -> Self {
        let k = w.len();
        let anchor = w[k - 1].max(1e-12);
        Self {
            beta: vec![vec![0.0; x_mean.len()]; k - 1],
            bias: w[..k - 1].iter().map(|v| (v.max(1e-12) / anchor).ln()).collect(),
            x_mean,
            x_scale,
        }
    }

    /// Standardization transform fitted to the training inputs.
    pub fn standardizer(inputs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let d = inputs[0].len();
        let n = inputs.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| inputs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let v = inputs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    }

    pub fn n_components(&self) -> usize {
        self.bias.len() + 1
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.bias)
            .map(|(b, c)| {
                c + b
                    .iter()
                    .zip(x)
                    .zip(self.x_mean.iter().zip(&self.x_scale))
                    .map(|((bj, xj), (m, s))| bj * (xj - m) / s)
                    .sum::<f64>()
            })
            .collect();
        out.push(0.0);
        out
    }

    pub fn weights_at(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    fn to_vec(&self) -> Vec<f64> {
        self.beta
            .iter()
            .zip(&self.bias)
            .flat_map(|(b, c)| b.iter().copied().chain(std::iter::once(*c)))
            .collect()
    }

    fn set_from_vec(&mut self, v: &[f64]) {
        let d = self.x_mean.len();
        for (k, chunk) in v.chunks_exact(d + 1).enumerate() {
            self.beta[k].copy_from_slice(&chunk[..d]);
            self.bias[k] = chunk[d];
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Objective of input-dependent weights at the table's training inputs.
pub fn xdep_objective(table: &ComponentDensityTable, inputs: &[Vec<f64>], model: &InputDependentWeights) -> Result<f64> {
    if inputs.len() != table.n_inputs() || model.n_components() != table.n_components() {
        return Err(Error::DimensionMismatch("weights model does not match the table".into()));
    }
    let weights: Vec<Vec<f64>> = inputs.iter().map(|x| model.weights_at(x)).collect();
    Ok(table.objective_per_input(&weights))
}

#[derive(Debug, Clone)]
pub struct XdepResult {
    pub model: InputDependentWeights,
    pub objective: f64,
    /// Objective of the shared weights the fit started from.
    pub shared_objective: f64,
    pub iterations: usize,
}

/// Fits softmax-linear weights by L-BFGS from the shared solution `w`.
pub fn optimize_xdep_weights(
    table: &ComponentDensityTable,
    inputs: &[Vec<f64>],
    shared: &[f64],
    cfg: &LbfgsConfig,
) -> Result<XdepResult> {
    if inputs.is_empty() || inputs.len() != table.n_inputs() {
        return Err(Error::DimensionMismatch("one input per table entry required".into()));
    }
    check_simplex(shared, table.n_components())?;
    let k = table.n_components();
    let d = inputs[0].len();
    let (x_mean, x_scale) = InputDependentWeights::standardizer(inputs);
    let mut model = InputDependentWeights::from_shared(shared, x_mean, x_scale);
    let shared_objective = xdep_objective(table, inputs, &model)?;
    if k == 1 {
        return Ok(XdepResult {
            model,
            objective: shared_objective,
            shared_objective,
            iterations: 0,
        });
    }
    let z: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            x.iter()
                .zip(model.x_mean.iter().zip(&model.x_scale))
                .map(|(xj, (m, s))| (xj - m) / s)
                .collect()
        })
        .collect();
    let total = table.total_mass();
    let mut work = model.clone();
    // Minimizes the negated objective per unit mass.
    let objective = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        let mut m = work.clone();
        m.set_from_vec(theta);
        let parts: Vec<(f64, Vec<f64>)> = (0..table.n_inputs())
            .into_par_iter()
            .map(|n| {
                let w = m.weights_at(&inputs[n]);
                let mut g = vec![0.0; k];
                let f = table.input_objective_grad(n, &w, &mut g);
                // ∂f_n/∂logit_k = w_k (∂f_n/∂w_k − Σ_j w_j ∂f_n/∂w_j).
                let avg: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
                let dl: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a * (b - avg)).collect();
                (f, dl)
            })
            .collect();
        let mut f = 0.0;
        let mut grad = vec![0.0; (k - 1) * (d + 1)];
        for (n, (fi, dl)) in parts.iter().enumerate() {
            f += fi;
            for kk in 0..k - 1 {
                let base = kk * (d + 1);
                for j in 0..d {
                    grad[base + j] -= dl[kk] * z[n][j] / total;
                }
                grad[base + d] -= dl[kk] / total;
            }
        }
        Some((-f / total, grad))
    };
    let x0 = model.to_vec();
    let min = minimize(objective, &x0, cfg)
        .ok_or_else(|| Error::Numerical("input-dependent weight objective is not finite at the start".into()))?;
    work.set_from_vec(&min.x);
    let fitted = xdep_objective(table, inputs, &work)?;
    let iterations = min.iterations;
    if fitted >= shared_objective {
        model = work;
    }
    let objective = fitted.max(shared_objective);
    Ok(XdepResult {
        model,
        objective,
        shared_objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_pdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn uniform_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    }

    fn gaussian_grid_density(mean: f64, var: f64, grid: Vec<f64>) -> GriddedDensity {
        let d = grid.iter().map(|y| normal_pdf(*y, mean, var)).collect();
        GriddedDensity::new("g", grid, d).unwrap()
    }

    fn scalar_entry(means: &[f64], vars: &[f64], support: Support) -> TableEntry {
        TableEntry {
            means: means.iter().map(|m| vec![*m]).collect(),
            vars: vars.iter().map(|v| vec![*v]).collect(),
            support,
        }
    }

    fn random_table(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ComponentDensityTable {
        let entries: Vec<TableEntry> = (0..n)
            .map(|_| {
                let means: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                let vars: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.5)).collect();
                let ys: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
                scalar_entry(&means, &vars, Support::Samples(SampleBlock::scalar("s", ys).unwrap()))
            })
            .collect();
        ComponentDensityTable::new(&entries).unwrap()
    }

    #[test]
    fn single_component_matches_gaussian_cross_entropy() {
        let (m, s2, mu, v) = (0.3, 0.5, -0.2, 0.8);
        let grid = uniform_grid(m - 12.0, m + 12.0, 4001);
        let p = gaussian_grid_density(m, s2, grid);
        let table = ComponentDensityTable::new(&[scalar_entry(&[mu], &[v], Support::Grid(p))]).unwrap();
        let got = dist_loglik(&table, &[vec![1.0]]).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (s2 + (mu - m) * (mu - m)) / (2.0 * v);
        assert!((got - expected).abs() < 1e-4, "{got} vs {expected}");
    }

    #[test]
    fn sample_form_averages_log_density() {
        let ys = vec![0.1, -0.4, 1.3];
        let table = ComponentDensityTable::new(&[scalar_entry(
            &[0.0, 1.0],
            &[1.0, 0.5],
            Support::Samples(SampleBlock::scalar("a", ys.clone()).unwrap()),
        )])
        .unwrap();
        let w = [0.3, 0.7];
        let direct: f64 = ys
            .iter()
            .map(|y| (w[0] * normal_pdf(*y, 0.0, 1.0) + w[1] * normal_pdf(*y, 1.0, 0.5)).ln())
            .sum::<f64>()
            / 3.0;
        let got = dist_loglik(&table, &[w.to_vec()]).unwrap();
        assert!((got - direct).abs() < 1e-13);
    }

    #[test]
    fn true_component_weighting_beats_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let entries: Vec<TableEntry> = (0..5)
            .map(|_| {
                let ys: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
                scalar_entry(&[0.0, 4.0], &[1.0, 1.0], Support::Samples(SampleBlock::scalar("s", ys).unwrap()))
            })
            .collect();
        let table = ComponentDensityTable::new(&entries).unwrap();
        let concentrated = dist_loglik_shared(&table, &[0.95, 0.05]).unwrap();
        let equal = dist_loglik_shared(&table, &[0.5, 0.5]).unwrap();
        assert!(concentrated > equal);
    }

    #[test]
    fn decomposition_discrete_example() {
        let p = GriddedDensity::with_weights("d", vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let t = lemma1_decomposition(&p, &[0.25, 0.75]).unwrap();
        let kl = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((t.kl - kl).abs() < 1e-15);
        assert!((t.kl - 0.14384).abs() < 1e-5);
        assert!((t.loglik + t.entropy + t.kl).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identity_case_and_zero_q() {
        let grid = uniform_grid(-5.0, 5.0, 201);
        let p = gaussian_grid_density(0.0, 1.0, grid);
        let t = lemma1_decomposition(&p, &p.density).unwrap();
        assert_eq!(t.kl, 0.0);
        assert!((t.loglik + t.entropy).abs() < 1e-14);
        let mut q = p.density.clone();
        q[100] = 0.0;
        let t = lemma1_decomposition(&p, &q).unwrap();
        assert_eq!(t.kl, f64::INFINITY);
        assert_eq!(t.loglik, f64::NEG_INFINITY);
    }

    #[test]
    fn grid_objective_matches_entropy_plus_kl() {
        let grid = uniform_grid(-6.0, 6.0, 301);
        let ps = [gaussian_grid_density(0.5, 0.7, grid.clone()), gaussian_grid_density(-1.0, 1.3, grid.clone())];
        let means = [[-0.5, 1.0], [0.0, -1.5]];
        let vars = [[1.0, 0.6], [0.9, 2.0]];
        let w = [0.4, 0.6];
        let entries: Vec<TableEntry> = (0..2)
            .map(|n| scalar_entry(&means[n], &vars[n], Support::Grid(ps[n].clone())))
            .collect();
        let table = ComponentDensityTable::new(&entries).unwrap();
        let f = dist_loglik_shared(&table, &w).unwrap();
        let mut rhs = 0.0;
        for n in 0..2 {
            let q: Vec<f64> = grid
                .iter()
                .map(|y| w[0] * normal_pdf(*y, means[n][0], vars[n][0]) + w[1] * normal_pdf(*y, means[n][1], vars[n][1]))
                .collect();
            let t = lemma1_decomposition(&ps[n], &q).unwrap();
            rhs += -t.entropy - t.kl;
        }
        assert!((f - rhs).abs() < 1e-8, "{f} vs {rhs}");
    }

    #[test]
    fn identical_components_are_flat() {
        let grid = uniform_grid(-5.0, 5.0, 101);
        let p = gaussian_grid_density(0.0, 1.0, grid);
        let table = ComponentDensityTable::new(&[scalar_entry(&[0.2, 0.2], &[1.1, 1.1], Support::Grid(p))]).unwrap();
        let r = optimize_shared_weights(&table, &SharedWeightConfig::default());
        for w1 in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let f = dist_loglik_shared(&table, &[w1, 1.0 - w1]).unwrap();
            assert!((f - r.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn two_component_optimum_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        // Mostly component 1 with a few samples near component 2.
        let entries: Vec<TableEntry> = (0..4)
            .map(|_| {
                let mut ys: Vec<f64> = (0..300).map(|_| normal.sample(&mut rng)).collect();
                ys.extend((0..12).map(|_| 10.0 + normal.sample(&mut rng)));
                scalar_entry(&[0.0, 10.0], &[1.0, 1.0], Support::Samples(SampleBlock::scalar("s", ys).unwrap()))
            })
            .collect();
        let table = ComponentDensityTable::new(&entries).unwrap();
        let r = optimize_shared_weights(&table, &SharedWeightConfig::default());
        let (mut best_w, mut best_f) = (0.0, f64::NEG_INFINITY);
        for i in 0..=10_000 {
            let w1 = i as f64 * 1e-4;
            let f = dist_loglik_shared(&table, &[w1, 1.0 - w1]).unwrap();
            if f > best_f {
                best_f = f;
                best_w = w1;
            }
        }
        assert!((r.weights[0] - best_w).abs() < 1e-3, "{:?} vs {best_w}", r.weights);
        assert!(r.objective >= best_f - 1e-6);
        assert!(r.objective >= r.initial_objective);
    }

    #[test]
    fn optimum_with_absent_component_goes_to_floor() {
        let grid = uniform_grid(-6.0, 6.0, 401);
        let p = gaussian_grid_density(0.0, 1.0, grid);
        let table = ComponentDensityTable::new(&[scalar_entry(&[0.0, 10.0], &[1.0, 1.0], Support::Grid(p))]).unwrap();
        let r = optimize_shared_weights(&table, &SharedWeightConfig::default());
        assert!(r.converged);
        assert!(r.weights[1] < 1e-6, "{:?}", r.weights);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concavity_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let table = random_table(&mut rng, 6, 3);
            let mut draw = || {
                let mut w: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                w
            };
            let (a, b) = (draw(), draw());
            let fa = dist_loglik_shared(&table, &a).unwrap();
            let fb = dist_loglik_shared(&table, &b).unwrap();
            for lam in [0.25, 0.5, 0.75] {
                let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
                let fm = dist_loglik_shared(&table, &mix).unwrap();
                assert!(fm >= lam * fa + (1.0 - lam) * fb - 1e-9);
            }
        }
    }

    #[test]
    fn zero_slopes_reproduce_shared_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = random_table(&mut rng, 7, 3);
        let inputs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3, (i as f64).sin()]).collect();
        let r = optimize_shared_weights(&table, &SharedWeightConfig::default());
        let (m, s) = InputDependentWeights::standardizer(&inputs);
        let nested = InputDependentWeights::from_shared(&r.weights, m, s);
        let f = xdep_objective(&table, &inputs, &nested).unwrap();
        assert!((f - r.objective).abs() < 1e-9 * r.objective.abs().max(1.0));
        let x = optimize_xdep_weights(&table, &inputs, &r.weights, &LbfgsConfig::default()).unwrap();
        assert!(x.objective - x.shared_objective >= -1e-9);
    }

    #[test]
    fn recovers_flipping_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let inputs: Vec<Vec<f64>> = (0..41).map(|i| vec![-3.0 + 0.15 * i as f64]).collect();
        let entries: Vec<TableEntry> = inputs
            .iter()
            .map(|x| {
                let c = if x[0] < 0.0 { -2.0 } else { 2.0 };
                let ys: Vec<f64> = (0..100).map(|_| c + normal.sample(&mut rng)).collect();
                scalar_entry(&[-2.0, 2.0], &[0.25, 0.25], Support::Samples(SampleBlock::scalar("s", ys).unwrap()))
            })
            .collect();
        let table = ComponentDensityTable::new(&entries).unwrap();
        let shared = optimize_shared_weights(&table, &SharedWeightConfig::default());
        let r = optimize_xdep_weights(&table, &inputs, &shared.weights, &LbfgsConfig::default()).unwrap();
        for x in &inputs {
            let w1 = r.model.weights_at(x)[0];
            if x[0] < -1.0 {
                assert!(w1 > 0.9, "w1({}) = {w1}", x[0]);
            } else if x[0] > 1.0 {
                assert!(w1 < 0.1, "w1({}) = {w1}", x[0]);
            }
        }
        assert!(r.objective > r.shared_objective);
    }

    #[test]
    fn rejects_invalid_weights_and_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = random_table(&mut rng, 2, 2);
        assert!(dist_loglik(&table, &[vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(dist_loglik(&table, &[vec![0.5, 0.5]]).is_err());
        assert!(ComponentDensityTable::new(&[]).is_err());
        let bad = scalar_entry(&[0.0], &[0.0], Support::Samples(SampleBlock::scalar("s", vec![1.0]).unwrap()));
        assert!(ComponentDensityTable::new(&[bad]).is_err());
    }
}
