//! The fitted model: local mixtures, aligned component tracks, one GP per
//! component and output coordinate, and a weight model.
//!
//! Fitting runs in stages that can also be invoked separately:
//! [`local_fits`], [`align_fits`] and [`fit_aligned`]. Each stage tags its
//! errors with a [`Stage`], and no partial model is ever returned.

use std::io::{Read, Write};
use std::path::Path;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    apply_alignment, hungarian_align, input_order, sort_align, AlignCost, AlignMethod, AlignmentPlan, InputOrdering,
};
use crate::dataset::{to_histogram, DistributionValuedDataset, DEFAULT_BINS};
use crate::error::{Error, Result, Stage};
use crate::gp::{train_gp, GpTrainConfig, GpTrainingData, KernelFamily, KernelParams, TrainedGp};
use crate::mixture::{fit_gmm, EmConfig, LocalMixtureFit};
use crate::optim::LbfgsConfig;
use crate::predictive::PredictiveMixture;
use crate::stats::{derive_seed, normal_log_pdf};
use crate::weights::{
    dist_loglik_shared, optimize_shared_weights, optimize_xdep_weights, ComponentDensityTable, InputDependentWeights,
    SharedWeightConfig, Support, TableEntry,
};

pub const FORMAT_NAME: &str = "ggmp-model";
pub const FORMAT_VERSION: u32 = 1;

/// Largest number of assignment vectors the brute-force likelihood visits.
pub const BRUTE_FORCE_BUDGET: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Equal,
    #[default]
    Shared,
    InputDependent,
}

/// Evaluation support for the weight objective at training inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSupport {
    /// Histograms for univariate outputs, samples otherwise.
    #[default]
    Auto,
    Samples,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GgmpConfig {
    pub k: usize,
    pub kernel: KernelFamily,
    /// `None` picks sort-by-mean for `p = 1` and sequential Hungarian otherwise.
    pub align_method: Option<AlignMethod>,
    pub align_cost: AlignCost,
    pub input_ordering: InputOrdering,
    pub weight_mode: WeightMode,
    pub weight_support: WeightSupport,
    pub histogram_bins: usize,
    pub em: EmConfig,
    pub gp_restarts: usize,
    pub gp_max_iters: usize,
    pub shared_weights: SharedWeightConfig,
    pub xdep_max_iters: usize,
    pub seed: u64,
}

impl Default for GgmpConfig {
    fn default() -> Self {
        Self {
            k: 3,
            kernel: KernelFamily::SquaredExponential,
            align_method: None,
            align_cost: AlignCost::Wasserstein2,
            input_ordering: InputOrdering::Lexicographic,
            weight_mode: WeightMode::Shared,
            weight_support: WeightSupport::Auto,
            histogram_bins: DEFAULT_BINS,
            em: EmConfig::default(),
            gp_restarts: 5,
            gp_max_iters: 200,
            shared_weights: SharedWeightConfig::default(),
            xdep_max_iters: 500,
            seed: 0,
        }
    }
}

impl GgmpConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.histogram_bins < 2 {
            return Err(Error::InvalidArgument("histogram needs at least 2 bins".into()));
        }
        if !(self.shared_weights.tol > 0.0) || !(self.em.tol_per_sample > 0.0) || !(self.em.rel_var_floor > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.em.restarts == 0 || self.gp_restarts == 0 {
            return Err(Error::InvalidArgument("restart counts must be positive".into()));
        }
        Ok(())
    }

    fn align_method_for(&self, p: usize) -> AlignMethod {
        self.align_method.unwrap_or(if p == 1 {
            AlignMethod::SortByMean
        } else {
            AlignMethod::SequentialHungarian
        })
    }

    /// GP training settings for component `k`, coordinate `j` of a `p`-output model.
    pub fn gp_config(&self, k: usize, j: usize, p: usize) -> GpTrainConfig {
        GpTrainConfig {
            family: self.kernel,
            restarts: self.gp_restarts,
            max_iters: self.gp_max_iters,
            seed: derive_seed(self.seed ^ 0x6770, (k * p + j) as u64),
        }
    }

    /// EM settings for the input at position `n`.
    pub fn em_config(&self, n: usize) -> EmConfig {
        EmConfig {
            seed: derive_seed(self.seed, n as u64),
            ..self.em
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightModel {
    Equal { k: usize },
    Shared { weights: Vec<f64> },
    InputDependent(InputDependentWeights),
}

impl WeightModel {
    pub fn weights_at(&self, x: &[f64]) -> Vec<f64> {
        match self {
            WeightModel::Equal { k } => vec![1.0 / *k as f64; *k],
            WeightModel::Shared { weights } => weights.clone(),
            WeightModel::InputDependent(m) => m.weights_at(x),
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            WeightModel::Equal { k } => *k,
            WeightModel::Shared { weights } => weights.len(),
            WeightModel::InputDependent(m) => m.n_components(),
        }
    }
}

/// Training objectives of the weight stages, as reported in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightObjectives {
    pub equal: f64,
    pub shared: Option<f64>,
    pub input_dependent: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GgmpModel {
    pub config: GgmpConfig,
    pub input_ids: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    /// Local fits after alignment.
    pub fits: Vec<LocalMixtureFit>,
    pub alignment: AlignmentPlan,
    /// `K × p` component GPs.
    pub gps: Vec<Vec<TrainedGp>>,
    pub weight_model: WeightModel,
    /// `K × p` training means of the within-component variances.
    pub avg_within_var: Vec<Vec<f64>>,
    pub objectives: WeightObjectives,
    /// Input ids held out from training, if the caller split the data.
    pub holdout_ids: Vec<String>,
}

fn check_samples(ds: &DistributionValuedDataset, k: usize) -> Result<()> {
    for e in ds.entries() {
        let t = e.samples.as_ref().map_or(0, |b| b.len());
        if t < k {
            return Err(Error::TooFewSamples {
                input_id: e.input.id.clone(),
                samples: t,
                components: k,
            });
        }
        if t < 10 * k {
            warn!("input '{}' has {t} samples for K={k}; local fits may be unstable", e.input.id);
        }
    }
    Ok(())
}

/// Fits a `K`-component local mixture at every input, in parallel.
pub fn local_fits(ds: &DistributionValuedDataset, cfg: &GgmpConfig) -> Result<Vec<LocalMixtureFit>> {
    let tag = Error::at(Stage::LocalFit);
    cfg.validate().map_err(Error::at(Stage::LocalFit))?;
    check_samples(ds, cfg.k).map_err(Error::at(Stage::LocalFit))?;
    ds.entries()
        .par_iter()
        .enumerate()
        .map(|(n, e)| {
            let block = e.samples.as_ref().expect("checked above");
            fit_gmm(block, cfg.k, &cfg.em_config(n))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(tag)
}

/// Aligns local fits across inputs; returns the plan and the relabeled fits.
pub fn align_fits(
    inputs: &[Vec<f64>],
    fits: &[LocalMixtureFit],
    cfg: &GgmpConfig,
) -> Result<(AlignmentPlan, Vec<LocalMixtureFit>)> {
    let run = || -> Result<(AlignmentPlan, Vec<LocalMixtureFit>)> {
        if fits.is_empty() || fits.len() != inputs.len() {
            return Err(Error::DimensionMismatch("one local fit per input required".into()));
        }
        let p = fits[0].dim();
        let plan = match cfg.align_method_for(p) {
            AlignMethod::SortByMean => sort_align(fits),
            AlignMethod::SequentialHungarian => {
                let order = input_order(inputs, cfg.input_ordering);
                // Label the reference input by ascending mean so labels are reproducible.
                let reference = order[0];
                let ref_perm = sort_align(&fits[reference..=reference]).permutations.remove(0);
                let mut relabeled = fits.to_vec();
                relabeled[reference] = fits[reference].permuted(&ref_perm);
                let mut plan = hungarian_align(&relabeled, &order, cfg.align_cost)?;
                plan.permutations[reference] = ref_perm;
                plan
            }
        };
        let aligned = apply_alignment(fits, &plan)?;
        Ok((plan, aligned))
    };
    run().map_err(Error::at(Stage::Alignment))
}

/// GP training set of component `k`, coordinate `j`: aligned means as
/// targets and local variances (floored) as noise.
pub fn component_training_data(
    inputs: &[Vec<f64>],
    aligned: &[LocalMixtureFit],
    k: usize,
    j: usize,
) -> Result<GpTrainingData> {
    GpTrainingData::floored(
        inputs.to_vec(),
        aligned.iter().map(|f| f.means[k][j]).collect(),
        aligned.iter().map(|f| f.variance(k, j)).collect(),
    )
}

/// Trains the component GPs and weights on already-aligned fits.
pub fn fit_aligned(
    ds: &DistributionValuedDataset,
    aligned: Vec<LocalMixtureFit>,
    plan: AlignmentPlan,
    cfg: &GgmpConfig,
) -> Result<GgmpModel> {
    let inputs = ds.inputs();
    if aligned.len() != ds.len() {
        return Err(Error::Stage {
            stage: Stage::GpTraining,
            source: Box::new(Error::DimensionMismatch("one aligned fit per input required".into())),
        });
    }
    let k = cfg.k;
    let p = ds.output_dim();
    if aligned.iter().any(|f| f.n_components() != k || f.dim() != p) {
        return Err(Error::Stage {
            stage: Stage::GpTraining,
            source: Box::new(Error::DimensionMismatch("fits do not match K and p".into())),
        });
    }

    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|kk| (0..p).map(move |j| (kk, j))).collect();
    let trained: Vec<TrainedGp> = jobs
        .par_iter()
        .map(|&(kk, j)| {
            let data = component_training_data(&inputs, &aligned, kk, j)?;
            let gp = train_gp(data, &cfg.gp_config(kk, j, p))?;
            debug!("component {kk} coordinate {j}: lml {:.4}", gp.log_marginal_likelihood());
            Ok(gp)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at(Stage::GpTraining))?;
    let mut it = trained.into_iter();
    let gps: Vec<Vec<TrainedGp>> = (0..k).map(|_| it.by_ref().take(p).collect()).collect();

    let n = aligned.len() as f64;
    let avg_within_var: Vec<Vec<f64>> = (0..k)
        .map(|kk| (0..p).map(|j| aligned.iter().map(|f| f.variance(kk, j)).sum::<f64>() / n).collect())
        .collect();

    let mut model = GgmpModel {
        config: cfg.clone(),
        input_ids: ds.ids().into_iter().map(String::from).collect(),
        inputs: inputs.clone(),
        fits: aligned,
        alignment: plan,
        gps,
        weight_model: WeightModel::Equal { k },
        avg_within_var,
        objectives: WeightObjectives::default(),
        holdout_ids: Vec::new(),
    };
    model.optimize_weights(ds, cfg.weight_mode).map_err(Error::at(Stage::WeightOptimization))?;
    Ok(model)
}

/// Runs the full pipeline: local fits, alignment, component GPs, weights.
pub fn fit(ds: &DistributionValuedDataset, cfg: &GgmpConfig) -> Result<GgmpModel> {
    let fits = local_fits(ds, cfg)?;
    let (plan, aligned) = align_fits(&ds.inputs(), &fits, cfg)?;
    fit_aligned(ds, aligned, plan, cfg)
}

impl GgmpModel {
    pub fn n_components(&self) -> usize {
        self.gps.len()
    }

    pub fn output_dim(&self) -> usize {
        self.gps[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    fn check_query(&self, xstar: &[f64]) -> Result<()> {
        if xstar.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "query has d={} but the model has d={}",
                xstar.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Closed-form predictive mixture at `xstar`: component means are GP
    /// posterior means, variances are posterior variance plus the averaged
    /// within-component variance.
    pub fn component_predictive(&self, xstar: &[f64]) -> Result<PredictiveMixture> {
        self.check_query(xstar)?;
        let mut means = Vec::with_capacity(self.n_components());
        let mut vars = Vec::with_capacity(self.n_components());
        for (row, s2) in self.gps.iter().zip(&self.avg_within_var) {
            let mut m = Vec::with_capacity(row.len());
            let mut v = Vec::with_capacity(row.len());
            for (gp, s2j) in row.iter().zip(s2) {
                let (mu, nu) = gp.predict_one(xstar)?;
                m.push(mu);
                v.push(nu + s2j);
            }
            means.push(m);
            vars.push(v);
        }
        Ok(PredictiveMixture {
            weights: self.weight_model.weights_at(xstar),
            means,
            vars,
        })
    }

    pub fn log_density(&self, xstar: &[f64], y: &[f64]) -> Result<f64> {
        if y.len() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "output has p={} but the model has p={}",
                y.len(),
                self.output_dim()
            )));
        }
        Ok(self.component_predictive(xstar)?.log_density(y))
    }

    /// Ancestral samples from the predictive at `xstar`.
    pub fn sample(&self, xstar: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mix = self.component_predictive(xstar)?;
        Ok(mix.sample(n, &mut ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Weight-objective table at the training inputs, with component
    /// variances `ν_nk + s²_nk` built from the local fits.
    pub fn training_table(&self, ds: &DistributionValuedDataset, support: WeightSupport, bins: usize) -> Result<ComponentDensityTable> {
        let p = self.output_dim();
        let use_hist = match support {
            WeightSupport::Auto => p == 1,
            WeightSupport::Samples => false,
            WeightSupport::Histogram => {
                if p != 1 {
                    return Err(Error::InvalidArgument("histogram support needs univariate outputs".into()));
                }
                true
            }
        };
        let by_id: std::collections::HashMap<&str, usize> =
            ds.ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        let entries: Vec<TableEntry> = self
            .input_ids
            .par_iter()
            .enumerate()
            .map(|(n, id)| {
                let x = &self.inputs[n];
                let idx = *by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::InvalidArgument(format!("training input '{id}' missing from dataset")))?;
                let block = ds.entries()[idx]
                    .samples
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument(format!("input '{id}' has no samples")))?;
                let mut means = Vec::with_capacity(self.n_components());
                let mut vars = Vec::with_capacity(self.n_components());
                for row in &self.gps {
                    let mut m = Vec::with_capacity(p);
                    let mut v = Vec::with_capacity(p);
                    for gp in row {
                        let (mu, nu) = gp.predict_one(x)?;
                        m.push(mu);
                        // The GP noise is the floored local variance s²_nk.
                        v.push(nu + gp.data.noise_vars[n]);
                    }
                    means.push(m);
                    vars.push(v);
                }
                let support = if use_hist {
                    match to_histogram(block, bins) {
                        Ok(g) => Support::Grid(g),
                        Err(Error::DegenerateSupport) => Support::Samples(block.clone()),
                        Err(e) => return Err(e),
                    }
                } else {
                    Support::Samples(block.clone())
                };
                Ok(TableEntry { means, vars, support })
            })
            .collect::<Result<Vec<_>>>()?;
        ComponentDensityTable::new(&entries)
    }

    /// Re-optimizes the weight model on `ds` (which must contain the
    /// training inputs) and records the objectives.
    pub fn optimize_weights(&mut self, ds: &DistributionValuedDataset, mode: WeightMode) -> Result<()> {
        let k = self.n_components();
        let table = self.training_table(ds, self.config.weight_support, self.config.histogram_bins)?;
        let equal = dist_loglik_shared(&table, &vec![1.0 / k as f64; k])?;
        self.objectives = WeightObjectives {
            equal,
            shared: None,
            input_dependent: None,
        };
        self.weight_model = WeightModel::Equal { k };
        if mode == WeightMode::Equal {
            return Ok(());
        }
        let shared = optimize_shared_weights(&table, &self.config.shared_weights);
        if !shared.converged {
            warn!("shared weights stopped after {} iterations without meeting the tolerance", shared.iterations);
        }
        self.objectives.shared = Some(shared.objective);
        self.weight_model = WeightModel::Shared {
            weights: shared.weights.clone(),
        };
        if mode == WeightMode::InputDependent {
            let lbfgs = LbfgsConfig {
                max_iters: self.config.xdep_max_iters,
                grad_tol: 1e-9,
                f_tol: 1e-12,
                ..LbfgsConfig::default()
            };
            let r = optimize_xdep_weights(&table, &self.inputs, &shared.weights, &lbfgs)?;
            self.objectives.input_dependent = Some(r.objective);
            self.weight_model = WeightModel::InputDependent(r.model);
        }
        Ok(())
    }

    /// Serializes the model as a single JSON document.
    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &ModelDocument::from_model(self))
            .map_err(|e| Error::Schema(format!("cannot serialize model: {e}")))
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_reader(input).map_err(|e| Error::Schema(format!("cannot parse model document: {e}")))?;
        doc.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GpRecord {
    params: KernelParams,
    data: GpTrainingData,
}

/// On-disk layout. GP factorizations are recomputed on load from the
/// stored hyperparameters and training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    format_version: u32,
    config: GgmpConfig,
    k: usize,
    p: usize,
    d: usize,
    input_ids: Vec<String>,
    inputs: Vec<Vec<f64>>,
    fits: Vec<LocalMixtureFit>,
    alignment: AlignmentPlan,
    gps: Vec<Vec<GpRecord>>,
    weight_model: WeightModel,
    avg_within_var: Vec<Vec<f64>>,
    objectives: WeightObjectives,
    #[serde(default)]
    holdout_ids: Vec<String>,
}

impl ModelDocument {
    fn from_model(m: &GgmpModel) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            format_version: FORMAT_VERSION,
            config: m.config.clone(),
            k: m.n_components(),
            p: m.output_dim(),
            d: m.input_dim(),
            input_ids: m.input_ids.clone(),
            inputs: m.inputs.clone(),
            fits: m.fits.clone(),
            alignment: m.alignment.clone(),
            gps: m
                .gps
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|g| GpRecord {
                            params: g.params.clone(),
                            data: g.data.clone(),
                        })
                        .collect()
                })
                .collect(),
            weight_model: m.weight_model.clone(),
            avg_within_var: m.avg_within_var.clone(),
            objectives: m.objectives,
            holdout_ids: m.holdout_ids.clone(),
        }
    }

    fn into_model(self) -> Result<GgmpModel> {
        let schema = |msg: &str| Error::Schema(msg.to_string());
        if self.format != FORMAT_NAME {
            return Err(schema("not a GGMP model document"));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let (k, p, d) = (self.k, self.p, self.d);
        if k == 0 || p == 0 || d == 0 {
            return Err(schema("K, p and d must be positive"));
        }
        if self.gps.len() != k || self.gps.iter().any(|r| r.len() != p) {
            return Err(schema("component GP grid is incomplete"));
        }
        if self.avg_within_var.len() != k || self.avg_within_var.iter().any(|r| r.len() != p || r.iter().any(|v| !(*v > 0.0))) {
            return Err(schema("averaged within-component variances malformed"));
        }
        if self.inputs.len() != self.input_ids.len() || self.inputs.iter().any(|x| x.len() != d) {
            return Err(schema("training inputs malformed"));
        }
        if self.weight_model.n_components() != k {
            return Err(schema("weight model has the wrong number of components"));
        }
        if let WeightModel::Shared { weights } = &self.weight_model {
            if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return Err(schema("shared weights are not on the simplex"));
            }
        }
        if let WeightModel::InputDependent(m) = &self.weight_model {
            if m.beta.iter().any(|b| b.len() != d) || m.x_mean.len() != d || m.x_scale.len() != d {
                return Err(schema("input-dependent weights have the wrong input dimension"));
            }
        }
        let gps = self
            .gps
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|r| {
                        if r.params.dim() != d {
                            return Err(schema("GP kernel dimension does not match d"));
                        }
                        TrainedGp::new(r.params, r.data)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GgmpModel {
            config: self.config,
            input_ids: self.input_ids,
            inputs: self.inputs,
            fits: self.fits,
            alignment: self.alignment,
            gps,
            weight_model: self.weight_model,
            avg_within_var: self.avg_within_var,
            objectives: self.objectives,
            holdout_ids: self.holdout_ids,
        })
    }
}

/// Joint likelihood `Σ_r Π_n w_{n,r_n} N(y_n | g_{n r_n}, σ²_{n r_n})`
/// over all `K^N` assignment vectors, for univariate local fits. Only
/// feasible for tiny instances; it equals the product over inputs of the
/// per-input mixture densities.
pub fn brute_force_joint_likelihood(fits: &[LocalMixtureFit], weights: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let n = fits.len();
    if n == 0 || weights.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch("fits, weights and y must have one entry per input".into()));
    }
    let k = fits[0].n_components();
    if fits.iter().any(|f| f.n_components() != k || f.dim() != 1) || weights.iter().any(|w| w.len() != k) {
        return Err(Error::DimensionMismatch("brute force needs univariate fits with equal K".into()));
    }
    let terms = (k as f64).powi(n as i32);
    if terms > BRUTE_FORCE_BUDGET {
        return Err(Error::BudgetExceeded {
            terms,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let dens: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..k)
                .map(|kk| weights[i][kk] * normal_log_pdf(y[i], fits[i].means[kk][0], fits[i].covs[kk][0]).exp())
                .collect()
        })
        .collect();
    let mut assignment = vec![0usize; n];
    let mut total = 0.0;
    loop {
        total += assignment.iter().enumerate().map(|(i, &r)| dens[i][r]).product::<f64>();
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(total);
            }
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}
