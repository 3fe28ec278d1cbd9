//! Cross-input component alignment.
//!
//! Mixture components fitted independently at each input carry arbitrary
//! labels. Alignment finds one permutation per input so that global label
//! `k` tracks the same mode across inputs, either by sorting component
//! means (univariate outputs) or by sequential minimum-cost matching
//! between neighbouring inputs.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hungarian;
use crate::mixture::LocalMixtureFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    SortByMean,
    SequentialHungarian,
}

/// Dissimilarity between two Gaussian components used by matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignCost {
    #[default]
    Wasserstein2,
    Hellinger,
}

/// Order in which inputs are visited by sequential matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputOrdering {
    #[default]
    Lexicographic,
    NearestNeighborChain,
}

/// `permutations[n][k]` is the local index at input `n` that receives global label `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPlan {
    pub permutations: Vec<Vec<usize>>,
    pub method: AlignMethod,
    pub input_order: Vec<usize>,
}

impl AlignmentPlan {
    pub fn identity(n: usize, k: usize, method: AlignMethod) -> Self {
        Self {
            permutations: vec![(0..k).collect(); n],
            method,
            input_order: (0..n).collect(),
        }
    }

    /// The plan undoing this one.
    pub fn inverse(&self) -> Self {
        let permutations = self
            .permutations
            .iter()
            .map(|p| {
                let mut inv = vec![0; p.len()];
                for (k, &i) in p.iter().enumerate() {
                    inv[i] = k;
                }
                inv
            })
            .collect();
        Self {
            permutations,
            method: self.method,
            input_order: self.input_order.clone(),
        }
    }

    pub fn is_valid(&self, k: usize) -> bool {
        self.permutations.iter().all(|p| {
            let mut seen = vec![false; k];
            p.len() == k && p.iter().all(|&i| i < k && !std::mem::replace(&mut seen[i], true))
        })
    }
}

/// Permutation ordering components by ascending mean (first coordinate),
/// then variance, then original index.
fn sort_permutation(fit: &LocalMixtureFit) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fit.n_components()).collect();
    idx.sort_by(|&a, &b| {
        fit.means[a][0]
            .total_cmp(&fit.means[b][0])
            .then(fit.variance(a, 0).total_cmp(&fit.variance(b, 0)))
            .then(a.cmp(&b))
    });
    idx
}

/// Labels components at every input in ascending order of their means.
pub fn sort_align(fits: &[LocalMixtureFit]) -> AlignmentPlan {
    AlignmentPlan {
        permutations: fits.iter().map(sort_permutation).collect(),
        method: AlignMethod::SortByMean,
        input_order: (0..fits.len()).collect(),
    }
}

/// Symmetric PSD square root by eigendecomposition, clamping tiny negative
/// eigenvalues to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::MatrixSqrt("non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&v| v < -tol) {
        return Err(Error::MatrixSqrt(format!(
            "matrix is not positive semidefinite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Squared 2-Wasserstein distance between two Gaussians:
/// `‖μ₁−μ₂‖² + tr(S₁ + S₂ − 2 (S₁^{1/2} S₂ S₁^{1/2})^{1/2})`.
pub fn w2_gaussian_sq(mu1: &[f64], s1: &DMatrix<f64>, mu2: &[f64], s2: &DMatrix<f64>) -> Result<f64> {
    let p = mu1.len();
    if mu2.len() != p || s1.shape() != (p, p) || s2.shape() != (p, p) {
        return Err(Error::DimensionMismatch("W2 arguments differ in dimension".into()));
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let r1 = sqrtm_psd(s1)?;
    // Validates S₂ as well.
    sqrtm_psd(s2)?;
    let cross = sqrtm_psd(&(&r1 * s2 * &r1))?;
    let trace = s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace).max(0.0))
}

/// Squared Hellinger distance between two Gaussians, `1 − BC`.
pub fn hellinger_gaussian_sq(mu1: &[f64], s1: &DMatrix<f64>, mu2: &[f64], s2: &DMatrix<f64>) -> Result<f64> {
    let p = mu1.len();
    if mu2.len() != p || s1.shape() != (p, p) || s2.shape() != (p, p) {
        return Err(Error::DimensionMismatch("Hellinger arguments differ in dimension".into()));
    }
    let avg = (s1 + s2) * 0.5;
    let chol = avg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::MatrixSqrt("average covariance not positive definite".into()))?;
    let diff = nalgebra::DVector::from_iterator(p, mu1.iter().zip(mu2).map(|(a, b)| a - b));
    let maha = diff.dot(&chol.solve(&diff));
    let ld = |m: &DMatrix<f64>| -> Result<f64> {
        let d = m.determinant();
        if d > 0.0 {
            Ok(d.ln())
        } else {
            Err(Error::MatrixSqrt("singular covariance".into()))
        }
    };
    let log_bc = 0.25 * ld(s1)? + 0.25 * ld(s2)? - 0.5 * ld(&avg)? - 0.125 * maha;
    Ok((1.0 - log_bc.exp()).max(0.0))
}

fn component_cost(cost: AlignCost, a: &LocalMixtureFit, i: usize, b: &LocalMixtureFit, j: usize) -> Result<f64> {
    let (sa, sb) = (a.cov_matrix(i), b.cov_matrix(j));
    match cost {
        AlignCost::Wasserstein2 => w2_gaussian_sq(&a.means[i], &sa, &b.means[j], &sb),
        AlignCost::Hellinger => hellinger_gaussian_sq(&a.means[i], &sa, &b.means[j], &sb),
    }
}

/// Visiting order of inputs for sequential matching.
pub fn input_order(inputs: &[Vec<f64>], ordering: InputOrdering) -> Vec<usize> {
    let mut lex: Vec<usize> = (0..inputs.len()).collect();
    lex.sort_by(|&a, &b| {
        inputs[a]
            .iter()
            .zip(&inputs[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    match ordering {
        InputOrdering::Lexicographic => lex,
        InputOrdering::NearestNeighborChain => {
            let Some(&start) = lex.first() else {
                return lex;
            };
            let mut visited = vec![false; inputs.len()];
            let mut order = vec![start];
            visited[start] = true;
            while order.len() < inputs.len() {
                let cur = &inputs[*order.last().unwrap()];
                let next = lex
                    .iter()
                    .copied()
                    .filter(|&i| !visited[i])
                    .min_by(|&a, &b| {
                        let da: f64 = inputs[a].iter().zip(cur).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = inputs[b].iter().zip(cur).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                visited[next] = true;
                order.push(next);
            }
            order
        }
    }
}

/// Sequential matching along `order`: the first input keeps its labels and
/// each subsequent input is matched to the already-aligned previous one by
/// an exact minimum-cost assignment.
pub fn hungarian_align(fits: &[LocalMixtureFit], order: &[usize], cost: AlignCost) -> Result<AlignmentPlan> {
    let n = fits.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no fits to align".into()));
    }
    if order.len() != n || {
        let mut seen = vec![false; n];
        order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
    } {
        return Err(Error::InvalidArgument("input order must be a permutation of the inputs".into()));
    }
    let k = fits[0].n_components();
    if fits.iter().any(|f| f.n_components() != k) {
        return Err(Error::DimensionMismatch("fits have different component counts".into()));
    }
    let mut permutations = vec![Vec::new(); n];
    permutations[order[0]] = (0..k).collect();
    for w in order.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        let prev_perm = permutations[prev].clone();
        let mut matrix = vec![vec![0.0; k]; k];
        for (gk, row) in matrix.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = component_cost(cost, &fits[prev], prev_perm[gk], &fits[cur], j)?;
            }
        }
        let (assignment, _) = hungarian::solve(&matrix);
        permutations[cur] = assignment;
    }
    Ok(AlignmentPlan {
        permutations,
        method: AlignMethod::SequentialHungarian,
        input_order: order.to_vec(),
    })
}

/// Total matching cost of a plan along its input order.
pub fn chain_cost(fits: &[LocalMixtureFit], plan: &AlignmentPlan, cost: AlignCost) -> Result<f64> {
    let mut total = 0.0;
    for w in plan.input_order.windows(2) {
        let (a, b) = (w[0], w[1]);
        for k in 0..fits[a].n_components() {
            total += component_cost(cost, &fits[a], plan.permutations[a][k], &fits[b], plan.permutations[b][k])?;
        }
    }
    Ok(total)
}

/// Relabels each fit's weights, means and covariances jointly.
pub fn apply_alignment(fits: &[LocalMixtureFit], plan: &AlignmentPlan) -> Result<Vec<LocalMixtureFit>> {
    if plan.permutations.len() != fits.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} inputs but there are {} fits",
            plan.permutations.len(),
            fits.len()
        )));
    }
    let k = fits.first().map_or(0, LocalMixtureFit::n_components);
    if !plan.is_valid(k) {
        return Err(Error::InvalidArgument("plan contains a non-bijective permutation".into()));
    }
    Ok(fits
        .iter()
        .zip(&plan.permutations)
        .map(|(f, p)| f.permuted(p))
        .collect())
}

/// Composes two plans: applies `first`, then `second` to the result.
pub fn compose(first: &AlignmentPlan, second: &AlignmentPlan) -> AlignmentPlan {
    AlignmentPlan {
        permutations: first
            .permutations
            .iter()
            .zip(&second.permutations)
            .map(|(a, b)| b.iter().map(|&i| a[i]).collect())
            .collect(),
        method: second.method,
        input_order: second.input_order.clone(),
    }
}
