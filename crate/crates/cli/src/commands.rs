use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;

use ggmp::dataset::{load_csv, load_samples, split_train_test, write_grids, write_samples, DistributionValuedDataset};
use ggmp::metrics::{calibration, divergences, joint_divergences, summarize, DensityPair, DEFAULT_SLICES};
use ggmp::model::{self, GgmpModel, WeightMode};
use ggmp::predictive::PredictiveMixture;
use ggmp::stats::derive_seed;
use ggmp::synthgen::{SyntheticConfig, SyntheticField};

use crate::config::{ModelArgs, RunConfig};
use crate::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Existing directory receiving `samples.csv` (and `truth.csv`).
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub t: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub grid_points: usize,
    /// Also write the exact gridded densities to `truth.csv`.
    #[arg(long)]
    pub truth: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sample CSV (`input_id,x1..xd,y1..yp`).
    #[arg(long)]
    pub data: PathBuf,
    /// Destination of the model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Existing model whose local fits and alignment are reused.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query input as comma-separated coordinates; repeatable.
    #[arg(long = "x", value_delimiter = ';', required = true, allow_hyphen_values = true)]
    pub xs: Vec<String>,
    /// Emit density values on `lo,hi,m` instead of component parameters.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Emit this many predictive samples per query instead.
    #[arg(long, conflicts_with = "grid")]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sample CSV with the evaluation inputs.
    #[arg(long)]
    pub data: PathBuf,
    /// Gridded reference densities, required for divergence metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Metric groups: divergence, calibration, joint. Defaults to
    /// calibration, plus divergence when truth is given.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<MetricGroup>,
    /// Evaluate every input in the data rather than the model's holdout set.
    #[arg(long)]
    pub all_inputs: bool,
    /// Model label in the report (default `GGMP_K`, or `GP_1` for K=1).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SLICES)]
    pub slices: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write predictive density slices as `input_id,x1..xd,y,density`.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricGroup {
    Divergence,
    Calibration,
    Joint,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Component counts to compare.
    #[arg(long, value_delimiter = ',', default_value = "3,5,10,25")]
    pub ks: Vec<usize>,
    /// Also fit softmax-linear input-dependent weights.
    #[arg(long)]
    pub input_dependent: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn write_provenance<W: Write>(out: &mut W, command: &str, pairs: &[(String, String)]) -> std::io::Result<()> {
    writeln!(out, "# ggmp {} {command}", env!("CARGO_PKG_VERSION"))?;
    for (k, v) in pairs {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    if !a.out_dir.is_dir() {
        return Err(CliError::Usage(format!("output directory {} does not exist", a.out_dir.display())));
    }
    let cfg = SyntheticConfig {
        n: a.n,
        t: a.t,
        grid_points: a.grid_points,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let field = SyntheticField::new(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = field.realize()?;
    let pairs = vec![
        ("n".to_string(), a.n.to_string()),
        ("t".to_string(), a.t.to_string()),
        ("seed".to_string(), a.seed.to_string()),
        ("grid_points".to_string(), a.grid_points.to_string()),
    ];
    let mut out = create(&a.out_dir.join("samples.csv"))?;
    write_provenance(&mut out, "synth", &pairs)?;
    write_samples(&ds, &mut out)?;
    out.flush()?;
    if a.truth {
        let mut out = create(&a.out_dir.join("truth.csv"))?;
        write_provenance(&mut out, "synth --truth", &pairs)?;
        write_grids(&ds, &mut out)?;
        out.flush()?;
    }
    info!("wrote {} inputs to {}", ds.len(), a.out_dir.display());
    Ok(())
}

pub fn fit(io: FitArgs, flags: ModelArgs, config_file: Option<&Path>) -> Result<(), CliError> {
    let rc = RunConfig::resolve(flags, config_file)?;
    let ds = load_samples(&io.data)?;
    let (train, holdout) = match rc.test_fraction {
        Some(f) => {
            let (tr, te) = split_train_test(&ds, f, rc.model.seed)?;
            let ids = te.ids().into_iter().map(String::from).collect();
            (tr, ids)
        }
        None => (ds, Vec::new()),
    };
    let mut fitted = match &io.resume {
        Some(path) => {
            let prev = GgmpModel::load(path)?;
            let ids: Vec<String> = train.ids().into_iter().map(String::from).collect();
            if prev.input_ids != ids || prev.n_components() != rc.model.k {
                return Err(CliError::Usage(
                    "--resume model was fitted to different inputs or a different K".into(),
                ));
            }
            model::fit_aligned(&train, prev.fits, prev.alignment, &rc.model)?
        }
        None => model::fit(&train, &rc.model)?,
    };
    fitted.holdout_ids = holdout;
    fitted.save(&io.out)?;
    let o = fitted.objectives;
    info!(
        "fitted K={} on {} inputs; objective equal {:.6}, shared {:?}, input-dependent {:?}",
        rc.model.k,
        train.len(),
        o.equal,
        o.shared,
        o.input_dependent
    );
    Ok(())
}

fn parse_point(s: &str, d: usize) -> Result<Vec<f64>, CliError> {
    let x = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("cannot parse input '{s}'")))?;
    if x.len() != d || x.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("input '{s}' must have {d} finite coordinates")));
    }
    Ok(x)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let model = GgmpModel::load(&a.model)?;
    let (d, p) = (model.input_dim(), model.output_dim());
    let xs = a.xs.iter().map(|s| parse_point(s, d)).collect::<Result<Vec<_>, _>>()?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let xcols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let ycols: Vec<String> = (1..=p).map(|j| format!("y{j}")).collect();
    if let Some(spec) = &a.grid {
        if p != 1 {
            return Err(CliError::Usage("--grid needs a univariate model".into()));
        }
        let parts: Vec<&str> = spec.split(',').collect();
        let parsed = (parts.len() == 3)
            .then(|| (parts[0].trim().parse::<f64>(), parts[1].trim().parse::<f64>(), parts[2].trim().parse::<usize>()));
        let Some((Ok(lo), Ok(hi), Ok(m))) = parsed else {
            return Err(CliError::Usage("--grid expects lo,hi,m".into()));
        };
        if !(hi > lo) || m < 2 {
            return Err(CliError::Usage("--grid needs lo < hi and m >= 2".into()));
        }
        writeln!(out, "{},y,density", xcols.join(","))?;
        for x in &xs {
            let mix = model.component_predictive(x)?;
            for i in 0..m {
                let y = lo + (hi - lo) * i as f64 / (m - 1) as f64;
                writeln!(out, "{},{y},{}", join(x), mix.density(&[y]))?;
            }
        }
    } else if let Some(n) = a.samples {
        writeln!(out, "{},{}", xcols.join(","), ycols.join(","))?;
        for (i, x) in xs.iter().enumerate() {
            for s in model.sample(x, n, derive_seed(a.seed, i as u64))? {
                writeln!(out, "{},{}", join(x), join(&s))?;
            }
        }
    } else {
        let means: Vec<String> = (1..=p).map(|j| format!("mean{j}")).collect();
        let vars: Vec<String> = (1..=p).map(|j| format!("var{j}")).collect();
        writeln!(out, "{},component,weight,{},{}", xcols.join(","), means.join(","), vars.join(","))?;
        for x in &xs {
            let mix = model.component_predictive(x)?;
            for k in 0..mix.n_components() {
                writeln!(out, "{},{k},{},{},{}", join(x), mix.weights[k], join(&mix.means[k]), join(&mix.vars[k]))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn metric_row<W: Write>(out: &mut W, label: &str, k: usize, metric: &str, values: &[f64]) -> std::io::Result<()> {
    let (m, s) = summarize(values);
    writeln!(out, "{label},{k},{metric},{m},{s}")
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let model = GgmpModel::load(&a.model)?;
    let data = load_samples(&a.data)?;
    let k = model.n_components();
    let label = a.label.clone().unwrap_or_else(|| if k == 1 { "GP_1".into() } else { format!("GGMP_{k}") });
    let groups = if a.metrics.is_empty() {
        let mut g = vec![MetricGroup::Calibration];
        if a.truth.is_some() {
            g.insert(0, MetricGroup::Divergence);
        }
        g
    } else {
        a.metrics.clone()
    };
    if groups.contains(&MetricGroup::Divergence) && a.truth.is_none() {
        return Err(CliError::Usage("divergence metrics need reference densities: pass --truth".into()));
    }
    let test = if a.all_inputs || model.holdout_ids.is_empty() {
        data
    } else {
        data.subset(&model.holdout_ids)?
    };
    let truth: Option<HashMap<String, ggmp::dataset::GriddedDensity>> = match &a.truth {
        Some(path) => Some(
            load_csv(path)?
                .entries()
                .iter()
                .filter_map(|e| e.grid.clone().map(|g| (e.input.id.clone(), g)))
                .collect(),
        ),
        None => None,
    };
    let preds: Vec<PredictiveMixture> = test
        .entries()
        .iter()
        .map(|e| model.component_predictive(&e.input.x))
        .collect::<Result<_, _>>()?;

    let mut out = create(&a.out)?;
    let mut pairs = vec![
        ("model".to_string(), a.model.display().to_string()),
        ("data".to_string(), a.data.display().to_string()),
        ("test_inputs".to_string(), test.len().to_string()),
    ];
    pairs.extend(
        RunConfig {
            model: model.config.clone(),
            test_fraction: None,
            config_file: None,
        }
        .describe(),
    );
    write_provenance(&mut out, "eval", &pairs)?;
    writeln!(out, "model,K,metric,mean,std")?;

    if groups.contains(&MetricGroup::Divergence) {
        let truth = truth.as_ref().expect("checked above");
        if model.output_dim() != 1 {
            return Err(CliError::Usage("divergence metrics need univariate outputs".into()));
        }
        let mut rows: [Vec<f64>; 4] = Default::default();
        for (e, mix) in test.entries().iter().zip(&preds) {
            let g = truth
                .get(&e.input.id)
                .ok_or_else(|| CliError::Data(format!("no reference density for input '{}'", e.input.id)))?;
            let d = divergences(&DensityPair::from_mixture(g, mix)?);
            for (r, v) in rows.iter_mut().zip([d.bhattacharyya, d.symmetric_kl, d.wasserstein1, d.l1]) {
                r.push(v);
            }
        }
        for (name, vals) in ["bhattacharyya", "symmetric_kl", "wasserstein1", "l1"].iter().zip(&rows) {
            metric_row(&mut out, &label, k, name, vals)?;
        }
    }
    if groups.contains(&MetricGroup::Calibration) {
        let blocks: Vec<_> = test.entries().iter().map(|e| e.samples.clone().expect("sample layout")).collect();
        let per_input = preds
            .iter()
            .zip(&blocks)
            .map(|(m, b)| Ok(calibration(std::slice::from_ref(m), std::slice::from_ref(b))?.summary()))
            .collect::<Result<Vec<_>, ggmp::Error>>()?;
        let pooled = calibration(&preds, &blocks)?.summary();
        let pick: [(&str, f64, fn(&ggmp::metrics::CalibrationSummary) -> f64); 7] = [
            ("pit_mean", pooled.pit_mean, |s| s.pit_mean),
            ("pit_std", pooled.pit_std, |s| s.pit_std),
            ("cov50", pooled.cov50, |s| s.cov50),
            ("cov90", pooled.cov90, |s| s.cov90),
            ("cov95", pooled.cov95, |s| s.cov95),
            ("log_score", pooled.log_score, |s| s.log_score),
            ("crps", pooled.crps, |s| s.crps),
        ];
        for (name, value, f) in pick {
            let spread = summarize(&per_input.iter().map(f).collect::<Vec<_>>()).1;
            writeln!(out, "{label},{k},{name},{value},{spread}")?;
        }
    }
    if groups.contains(&MetricGroup::Joint) {
        let (mut energy, mut sliced) = (Vec::new(), Vec::new());
        for (i, e) in test.entries().iter().enumerate() {
            let block = e.samples.as_ref().expect("sample layout");
            let observed: Vec<Vec<f64>> = block.rows().map(<[f64]>::to_vec).collect();
            let drawn = model.sample(&e.input.x, observed.len(), derive_seed(a.seed, i as u64))?;
            let j = joint_divergences(&observed, &drawn, a.slices, derive_seed(a.seed ^ 0x51, i as u64))?;
            energy.push(j.energy);
            sliced.push(j.sliced_w1);
        }
        metric_row(&mut out, &label, k, "energy", &energy)?;
        metric_row(&mut out, &label, k, "sliced_w1", &sliced)?;
    }
    out.flush()?;

    if let Some(path) = &a.plot_data {
        write_plot_data(path, &model, &test, &preds, truth.as_ref())?;
    }
    Ok(())
}

fn write_plot_data(
    path: &Path,
    model: &GgmpModel,
    test: &DistributionValuedDataset,
    preds: &[PredictiveMixture],
    truth: Option<&HashMap<String, ggmp::dataset::GriddedDensity>>,
) -> Result<(), CliError> {
    if model.output_dim() != 1 {
        return Err(CliError::Usage("plot data needs univariate outputs".into()));
    }
    let mut out = create(path)?;
    let xcols: Vec<String> = (1..=model.input_dim()).map(|i| format!("x{i}")).collect();
    writeln!(out, "input_id,{},y,density", xcols.join(","))?;
    for (e, mix) in test.entries().iter().zip(preds) {
        let grid: Vec<f64> = match truth.and_then(|t| t.get(&e.input.id)) {
            Some(g) => g.grid.clone(),
            None => {
                let (m, v) = mix.moments();
                let s = v.sqrt();
                (0..201).map(|i| m - 5.0 * s + 10.0 * s * i as f64 / 200.0).collect()
            }
        };
        for y in grid {
            writeln!(out, "{},{},{y},{}", e.input.id, join(&e.input.x), mix.density(&[y]))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn ablate(io: AblateArgs, flags: ModelArgs, config_file: Option<&Path>) -> Result<(), CliError> {
    let rc = RunConfig::resolve(flags, config_file)?;
    if io.ks.is_empty() || io.ks.contains(&0) {
        return Err(CliError::Usage("--ks needs positive component counts".into()));
    }
    let ds = load_samples(&io.data)?;
    let train = match rc.test_fraction {
        Some(f) => split_train_test(&ds, f, rc.model.seed)?.0,
        None => ds,
    };
    let mut out = create(&io.out)?;
    let mut pairs = rc.describe();
    pairs.retain(|(k, _)| k != "k" && k != "weights");
    pairs.push(("objective".into(), "distributional log-likelihood summed over training inputs".into()));
    write_provenance(&mut out, "ablate-weights", &pairs)?;
    if io.input_dependent {
        writeln!(out, "K,L_equal,L_shared,L_input_dependent,lift_shared_pct,lift_input_dependent_pct")?;
    } else {
        writeln!(out, "K,L_equal,L_shared,lift_shared_pct")?;
    }
    for &k in &io.ks {
        let mut cfg = rc.model.clone();
        cfg.k = k;
        cfg.weight_mode = if io.input_dependent {
            WeightMode::InputDependent
        } else {
            WeightMode::Shared
        };
        let m = model::fit(&train, &cfg)?;
        let o = m.objectives;
        let shared = o.shared.expect("shared weights were optimized");
        let lift = |new: f64, base: f64| (new - base) / base.abs() * 100.0;
        if io.input_dependent {
            let xdep = o.input_dependent.expect("input-dependent weights were optimized");
            writeln!(
                out,
                "{k},{},{shared},{xdep},{},{}",
                o.equal,
                lift(shared, o.equal),
                lift(xdep, shared)
            )?;
        } else {
            writeln!(out, "{k},{},{shared},{}", o.equal, lift(shared, o.equal))?;
        }
        info!("K={k}: equal {:.6}, shared {shared:.6}", o.equal);
    }
    out.flush()?;
    Ok(())
}
