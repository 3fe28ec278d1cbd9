//! Local Gaussian mixture fitting by expectation-maximization.
//!
//! Initialization uses k-means++ seeding followed by one hard-assignment
//! M-step; the best of several restarts (by final log-likelihood) is kept.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleBlock;
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// Per-input mixture parameters. Covariances are stored row-major, `p×p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMixtureFit {
    pub input_id: String,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<f64>>,
    /// Total responsibility mass of each component.
    pub responsibilities_sum: Vec<f64>,
    pub log_likelihood: f64,
}

impl LocalMixtureFit {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn cov_matrix(&self, k: usize) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_row_slice(p, p, &self.covs[k])
    }

    /// Diagonal entry `[S_k]_jj`.
    pub fn variance(&self, k: usize, j: usize) -> f64 {
        let p = self.dim();
        self.covs[k][j * p + j]
    }

    /// Relabels components so that new component `k` is old component `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            input_id: self.input_id.clone(),
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            means: perm.iter().map(|&i| self.means[i].clone()).collect(),
            covs: perm.iter().map(|&i| self.covs[i].clone()).collect(),
            responsibilities_sum: perm.iter().map(|&i| self.responsibilities_sum[i]).collect(),
            log_likelihood: self.log_likelihood,
        }
    }

    /// Mixture log-density at one point.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let comps: Vec<ComponentEval> = (0..self.n_components())
            .map(|k| ComponentEval::new(self.weights[k], &self.means[k], &self.cov_matrix(k)))
            .collect();
        let mut buf = vec![0.0; comps.len()];
        mixture_log_density(&comps, y, &mut buf)
    }

    /// Bayesian information criterion of this fit on `n_samples` points
    /// (reported as a diagnostic, lower is better).
    pub fn bic(&self, n_samples: usize) -> f64 {
        let k = self.n_components() as f64;
        let p = self.dim() as f64;
        let params = (k - 1.0) + k * p + k * p * (p + 1.0) / 2.0;
        -2.0 * self.log_likelihood + params * (n_samples as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Convergence when `|Δ loglik| < tol_per_sample · T`.
    pub tol_per_sample: f64,
    /// Variance floor relative to the block's per-coordinate variance.
    pub rel_var_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iters: 500,
            tol_per_sample: 1e-7,
            rel_var_floor: 1e-6,
            seed: 0,
        }
    }
}

/// Absolute lower bound on the variance floor, for constant blocks.
const ABS_VAR_FLOOR: f64 = 1e-10;

/// Precomputed evaluation data for one Gaussian component:
/// `log N(y) = log_norm − ½‖U (y − μ)‖²` with `U = L⁻¹`, `Σ = L Lᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct ComponentEval {
    log_norm: f64,
    mean: Vec<f64>,
    /// Lower-triangular, row-major.
    whiten: Vec<f64>,
}

impl ComponentEval {
    pub(crate) fn new(weight: f64, mean: &[f64], cov: &DMatrix<f64>) -> Self {
        let p = mean.len();
        let mut c = cov.clone();
        let chol = loop {
            if let Some(ch) = c.clone().cholesky() {
                break ch;
            }
            let bump = (0..p).map(|i| c[(i, i)].abs()).fold(ABS_VAR_FLOOR, f64::max) * 1e-9;
            for i in 0..p {
                c[(i, i)] += bump;
            }
        };
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
        let inv = l
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .expect("positive diagonal");
        let mut whiten = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                whiten[i * p + j] = inv[(i, j)];
            }
        }
        Self {
            log_norm: weight.ln() - 0.5 * (p as f64 * LN_2PI + log_det),
            mean: mean.to_vec(),
            whiten,
        }
    }

    #[inline]
    pub(crate) fn log_weighted_density(&self, y: &[f64]) -> f64 {
        let p = self.mean.len();
        if p == 1 {
            let z = (y[0] - self.mean[0]) * self.whiten[0];
            return self.log_norm - 0.5 * z * z;
        }
        let mut q = 0.0;
        for i in 0..p {
            let row = &self.whiten[i * p..i * p + i + 1];
            let z: f64 = row.iter().enumerate().map(|(j, u)| u * (y[j] - self.mean[j])).sum();
            q += z * z;
        }
        self.log_norm - 0.5 * q
    }
}

#[inline]
pub(crate) fn mixture_log_density(comps: &[ComponentEval], y: &[f64], buf: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (b, c) in buf.iter_mut().zip(comps) {
        *b = c.log_weighted_density(y);
        max = max.max(*b);
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + buf.iter().map(|b| (b - max).exp()).sum::<f64>().ln()
}

/// `Σ_t log Σ_k ω_k N(y_t | m_k, S_k)` computed with log-sum-exp.
pub fn gmm_log_likelihood(fit: &LocalMixtureFit, samples: &SampleBlock) -> Result<f64> {
    if samples.dim() != fit.dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples have p={} but mixture has p={}",
            samples.dim(),
            fit.dim()
        )));
    }
    let comps: Vec<ComponentEval> = (0..fit.n_components())
        .map(|k| ComponentEval::new(fit.weights[k], &fit.means[k], &fit.cov_matrix(k)))
        .collect();
    let mut buf = vec![0.0; comps.len()];
    Ok(samples.rows().map(|y| mixture_log_density(&comps, y, &mut buf)).sum())
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<DMatrix<f64>>,
    nk: Vec<f64>,
}

struct EmRun {
    state: EmState,
    log_likelihood: f64,
    trace: Vec<f64>,
}

fn block_stats(block: &SampleBlock) -> (Vec<f64>, DMatrix<f64>) {
    let p = block.dim();
    let t = block.len() as f64;
    let mut mean = vec![0.0; p];
    for r in block.rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / t);
    }
    let mut cov = DMatrix::zeros(p, p);
    for r in block.rows() {
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / t;
            }
        }
    }
    (mean, cov)
}

/// k-means++ seeding: returns `K` sample indices.
fn kmeans_pp(block: &SampleBlock, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let t = block.len();
    let sqd = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..t)];
    let mut d2: Vec<f64> = block.rows().map(|r| sqd(r, block.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = t - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..t)
        };
        centers.push(next);
        let c = block.row(next).to_vec();
        for (i, r) in block.rows().enumerate() {
            d2[i] = d2[i].min(sqd(r, &c));
        }
    }
    centers
}

struct Workspace<'a> {
    block: &'a SampleBlock,
    k: usize,
    p: usize,
    floor: Vec<f64>,
    block_cov: DMatrix<f64>,
    resp: Vec<f64>,
    point_ll: Vec<f64>,
    /// Scalar blocks: per-component `[Σr, Σr·u, Σr·u²]` with `u = y − center`,
    /// accumulated by the E-step that produced `resp`.
    moments: Vec<[f64; 3]>,
    moments_fresh: bool,
    center: f64,
}

impl Workspace<'_> {
    /// M-step from the responsibility matrix, with flooring and
    /// reinitialization of components that lost all their mass.
    fn m_step(&self, state: &mut EmState) {
        let (k, p) = (self.k, self.p);
        if p == 1 {
            let (nk, means, vars) = self.scalar_moments(state);
            self.finish_m_step(
                state,
                nk,
                means.into_iter().map(|m| vec![m]).collect(),
                vars.into_iter().map(|v| DMatrix::from_element(1, 1, v)).collect(),
            );
            return;
        }
        let mut nk = vec![0.0; k];
        let mut sums = vec![vec![0.0; p]; k];
        for (ti, y) in self.block.rows().enumerate() {
            let r = &self.resp[ti * k..(ti + 1) * k];
            for c in 0..k {
                nk[c] += r[c];
                for j in 0..p {
                    sums[c][j] += r[c] * y[j];
                }
            }
        }
        let mut covs = vec![DMatrix::<f64>::zeros(p, p); k];
        let means: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                if nk[c] > 0.0 {
                    sums[c].iter().map(|s| s / nk[c]).collect()
                } else {
                    state.means[c].clone()
                }
            })
            .collect();
        for (ti, y) in self.block.rows().enumerate() {
            let r = &self.resp[ti * k..(ti + 1) * k];
            for c in 0..k {
                if r[c] == 0.0 {
                    continue;
                }
                let m = &means[c];
                if p == 1 {
                    let d = y[0] - m[0];
                    covs[c][(0, 0)] += r[c] * d * d;
                } else {
                    for i in 0..p {
                        for j in 0..=i {
                            covs[c][(i, j)] += r[c] * (y[i] - m[i]) * (y[j] - m[j]);
                        }
                    }
                }
            }
        }
        for (c, cov) in covs.iter_mut().enumerate() {
            if nk[c] > 0.0 {
                *cov /= nk[c];
            }
            for i in 0..p {
                for j in 0..i {
                    cov[(j, i)] = cov[(i, j)];
                }
            }
        }
        self.finish_m_step(state, nk, means, covs);
    }

    /// Weighted means and variances of a scalar block in one pass over
    /// contiguous storage.
    fn scalar_moments(&self, state: &EmState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let acc = if self.moments_fresh {
            self.moments.clone()
        } else {
            let mut acc = vec![[0.0; 3]; k];
            for (r, &y) in self.resp.chunks_exact(k).zip(self.block.values()) {
                let u = y - self.center;
                for (s, &w) in acc.iter_mut().zip(r) {
                    s[0] += w;
                    s[1] += w * u;
                    s[2] += w * u * u;
                }
            }
            acc
        };
        let nk: Vec<f64> = acc.iter().map(|s| s[0]).collect();
        let mut means = Vec::with_capacity(k);
        let mut vars = Vec::with_capacity(k);
        for (c, s) in acc.iter().enumerate() {
            if s[0] > 0.0 {
                let mu = s[1] / s[0];
                means.push(self.center + mu);
                vars.push((s[2] / s[0] - mu * mu).max(0.0));
            } else {
                means.push(state.means[c][0]);
                vars.push(0.0);
            }
        }
        (nk, means, vars)
    }

    /// Stores normalized moments into `state`, flooring variances and
    /// rescuing empty components.
    fn finish_m_step(&self, state: &mut EmState, nk: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<DMatrix<f64>>) {
        let tf = self.block.len() as f64;
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..self.k {
            if nk[c] < 1e-6 * tf {
                // Rescue: restart at the worst-explained sample not yet used.
                let worst = self
                    .point_ll
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.push(worst);
                state.means[c] = self.block.row(worst).to_vec();
                state.covs[c] = self.floored(self.block_cov.clone());
                state.weights[c] = 1.0 / tf;
                state.nk[c] = nk[c];
                continue;
            }
            state.means[c] = means[c].clone();
            state.covs[c] = self.floored(covs[c].clone());
            state.weights[c] = nk[c] / tf;
            state.nk[c] = nk[c];
        }
        let total: f64 = state.weights.iter().sum();
        state.weights.iter_mut().for_each(|w| *w /= total);
    }

    fn floored(&self, mut s: DMatrix<f64>) -> DMatrix<f64> {
        for i in 0..self.p {
            s[(i, i)] = s[(i, i)].max(self.floor[i]);
        }
        s
    }

    /// E-step; returns the total log-likelihood under `state`.
    fn e_step(&mut self, state: &EmState) -> f64 {
        let k = self.k;
        let comps: Vec<ComponentEval> = (0..k)
            .map(|c| ComponentEval::new(state.weights[c], &state.means[c], &state.covs[c]))
            .collect();
        if self.p == 1 {
            return self.e_step_scalar(&comps);
        }
        let mut total = 0.0;
        for (ti, y) in self.block.rows().enumerate() {
            let r = &mut self.resp[ti * k..(ti + 1) * k];
            let mut max = f64::NEG_INFINITY;
            for (v, c) in r.iter_mut().zip(&comps) {
                *v = c.log_weighted_density(y);
                max = max.max(*v);
            }
            let lse = normalize_exp(r, max);
            self.point_ll[ti] = lse;
            total += lse;
        }
        total
    }

    fn e_step_scalar(&mut self, comps: &[ComponentEval]) -> f64 {
        let k = self.k;
        let a: Vec<f64> = comps.iter().map(|c| c.log_norm).collect();
        let m: Vec<f64> = comps.iter().map(|c| c.mean[0]).collect();
        let h: Vec<f64> = comps.iter().map(|c| 0.5 * c.whiten[0] * c.whiten[0]).collect();
        let mut acc = vec![[0.0; 3]; k];
        let mut total = 0.0;
        for ((r, &y), ll) in self
            .resp
            .chunks_exact_mut(k)
            .zip(self.block.values())
            .zip(self.point_ll.iter_mut())
        {
            let mut max = f64::NEG_INFINITY;
            for (((v, a), m), h) in r.iter_mut().zip(&a).zip(&m).zip(&h) {
                let d = y - m;
                *v = a - h * d * d;
                max = max.max(*v);
            }
            let lse = normalize_exp(r, max);
            let u = y - self.center;
            for (s, &w) in acc.iter_mut().zip(r.iter()) {
                s[0] += w;
                s[1] += w * u;
                s[2] += w * u * u;
            }
            *ll = lse;
            total += lse;
        }
        self.moments = acc;
        self.moments_fresh = true;
        total
    }
}

/// Turns log-weights into normalized responsibilities in place and returns
/// their log-sum-exp.
#[inline]
fn normalize_exp(r: &mut [f64], max: f64) -> f64 {
    if max == f64::NEG_INFINITY {
        let u = 1.0 / r.len() as f64;
        r.iter_mut().for_each(|v| *v = u);
        return max;
    }
    let mut sum = 0.0;
    for v in r.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    r.iter_mut().for_each(|v| *v *= inv);
    max + sum.ln()
}

fn run_em(ws: &mut Workspace<'_>, cfg: &EmConfig, rng: &mut ChaCha8Rng) -> EmRun {
    let (k, p) = (ws.k, ws.p);
    let centers = kmeans_pp(ws.block, k, rng);
    // Hard assignment to the nearest seed, then one M-step.
    ws.resp.iter_mut().for_each(|r| *r = 0.0);
    ws.moments_fresh = false;
    for (ti, y) in ws.block.rows().enumerate() {
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(c, &i)| {
                let d: f64 = y.iter().zip(ws.block.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                (c, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .unwrap_or(0);
        ws.resp[ti * k + nearest] = 1.0;
    }
    ws.point_ll.iter_mut().for_each(|v| *v = 0.0);
    let mut state = EmState {
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|&i| ws.block.row(i).to_vec()).collect(),
        covs: vec![DMatrix::identity(p, p); k],
        nk: vec![0.0; k],
    };
    ws.m_step(&mut state);

    let tol = cfg.tol_per_sample * ws.block.len() as f64;
    let mut trace = Vec::new();
    let mut ll = ws.e_step(&state);
    trace.push(ll);
    for _ in 0..cfg.max_iters {
        ws.m_step(&mut state);
        let next = ws.e_step(&state);
        trace.push(next);
        let done = (next - ll).abs() < tol;
        ll = next;
        if done {
            break;
        }
    }
    EmRun {
        state,
        log_likelihood: ll,
        trace,
    }
}

fn fit_impl(block: &SampleBlock, k: usize, cfg: &EmConfig) -> Result<(LocalMixtureFit, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let t = block.len();
    if t < k {
        return Err(Error::TooFewSamples {
            input_id: block.input_id.clone(),
            samples: t,
            components: k,
        });
    }
    let p = block.dim();
    let (_, block_cov) = block_stats(block);
    let floor: Vec<f64> = (0..p)
        .map(|i| (cfg.rel_var_floor * block_cov[(i, i)]).max(ABS_VAR_FLOOR))
        .collect();
    let mut ws = Workspace {
        block,
        k,
        p,
        floor,
        block_cov,
        resp: vec![0.0; t * k],
        point_ll: vec![0.0; t],
        moments: vec![[0.0; 3]; k],
        moments_fresh: false,
        center: block.values().iter().sum::<f64>() / t as f64,
    };
    let mut best: Option<EmRun> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run = run_em(&mut ws, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
            best = Some(run);
        }
        // K = 1 has a unique fixed point; restarts would repeat it.
        if k == 1 {
            break;
        }
    }
    let best = best.expect("at least one restart");
    let st = best.state;
    Ok((
        LocalMixtureFit {
            input_id: block.input_id.clone(),
            weights: st.weights,
            means: st.means,
            covs: st
                .covs
                .iter()
                .map(|c| {
                    let mut v = Vec::with_capacity(p * p);
                    for i in 0..p {
                        for j in 0..p {
                            v.push(c[(i, j)]);
                        }
                    }
                    v
                })
                .collect(),
            responsibilities_sum: st.nk,
            log_likelihood: best.log_likelihood,
        },
        best.trace,
    ))
}

/// Fits a `K`-component Gaussian mixture (full covariances) to one block.
pub fn fit_gmm(block: &SampleBlock, k: usize, cfg: &EmConfig) -> Result<LocalMixtureFit> {
    fit_impl(block, k, cfg).map(|(f, _)| f)
}

/// Like [`fit_gmm`], also returning the per-iteration log-likelihood trace
/// of the winning restart.
pub fn fit_gmm_traced(block: &SampleBlock, k: usize, cfg: &EmConfig) -> Result<(LocalMixtureFit, Vec<f64>)> {
    fit_impl(block, k, cfg)
}
