//! The `bm` command line: experiment configs, commands, CSV and SVG output.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input errors,
//! 3 when a numerical computation aborts.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeSpec;
use crate::checkpoint::Checkpoint;
use crate::couplings::{CouplingSampler, Marginal, MixturePairing};
use crate::error::Error;
use crate::gaussian::{alpha_star, f_alpha, GaussianCouplingSpec};
use crate::linalg::Points;
use crate::metrics::{empirical_cov, endpoint_mse, energy_distance, pairing_accuracy, CouplingReport};
use crate::nets::Architecture;
use crate::rng::RngStream;
use crate::sampling::{
    endpoints_csv, sample_endpoints, sample_trajectories, snapshot_csv, trajectories_csv, Integrator, SamplerConfig,
};
use crate::training::{train, PairedBatch, TrainConfig, TrainRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

// stream labels under the root seed
const TRAIN_LABEL: u64 = 0;
const SOURCE_LABEL: u64 = 1;
const SAMPLER_LABEL: u64 = 2;
const REFERENCE_LABEL: u64 = 3;

/// A failed command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. }
            | Error::NonFiniteState { .. }
            | Error::SinkhornNotConverged { .. }
            | Error::Quadrature { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Training coupling presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Two source components sent crosswise to two target components.
    CrossMixture {
        #[serde(default = "default_cross_std")]
        std: f64,
    },
    /// `x1 = x0 + k Z` over `base`; with `noisy_source` the noisy side is the
    /// source and generation denoises.
    EntropicShift {
        k: f64,
        #[serde(default = "default_shift_base")]
        base: Marginal,
        #[serde(default = "default_true")]
        noisy_source: bool,
    },
    /// Unit scalar Gaussians with correlation `alpha`.
    GaussianCorr {
        alpha: f64,
        /// Must match `train.sigma` when given.
        #[serde(default)]
        sigma: Option<f64>,
    },
    Independent {
        source: Marginal,
        target: Marginal,
    },
}

fn default_cross_std() -> f64 {
    0.2
}

fn default_shift_base() -> Marginal {
    Marginal::square_mixture(0.3)
}

fn default_true() -> bool {
    true
}

/// Components used to score pairing accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    pub source_centers: Vec<Vec<f64>>,
    pub target_centers: Vec<Vec<f64>>,
    pub pairing_map: Vec<usize>,
}

impl DatasetConfig {
    pub fn dim(&self) -> usize {
        match self {
            DatasetConfig::CrossMixture { .. } => 2,
            DatasetConfig::EntropicShift { base, .. } => base.dim(),
            DatasetConfig::GaussianCorr { .. } => 1,
            DatasetConfig::Independent { source, .. } => source.dim(),
        }
    }

    /// The coupling sampler, with bridge noise `sigma`.
    pub fn build(&self, sigma: f64) -> CliResult<CouplingSampler> {
        let ctx = |e: Error| CliError::from(e).context("dataset");
        match self {
            DatasetConfig::CrossMixture { std } => {
                if !(*std >= 0.0 && std.is_finite()) {
                    return Err(usage(format!("dataset.std must be nonnegative, got {std}")));
                }
                Ok(CouplingSampler::Mixture(MixturePairing::crossed(*std)))
            }
            DatasetConfig::EntropicShift { k, base, noisy_source } => {
                if !(*k >= 0.0 && k.is_finite()) {
                    return Err(usage(format!("dataset.k must be nonnegative, got {k}")));
                }
                base.validate().map_err(|e| CliError::from(e).context("dataset.base"))?;
                let inner = CouplingSampler::EntropicShift {
                    base: base.clone(),
                    k: *k,
                };
                Ok(if *noisy_source {
                    CouplingSampler::Reversed(Box::new(inner))
                } else {
                    inner
                })
            }
            DatasetConfig::GaussianCorr { alpha, sigma: s } => {
                if let Some(s) = s {
                    if *s != sigma {
                        return Err(usage(format!("dataset.sigma {s} differs from train.sigma {sigma}")));
                    }
                }
                let spec = GaussianCouplingSpec::new(*alpha, sigma).map_err(ctx)?;
                Ok(CouplingSampler::GaussianCorr(spec))
            }
            DatasetConfig::Independent { source, target } => {
                source
                    .validate()
                    .map_err(|e| CliError::from(e).context("dataset.source"))?;
                target
                    .validate()
                    .map_err(|e| CliError::from(e).context("dataset.target"))?;
                if source.dim() != target.dim() {
                    return Err(usage("dataset: source and target dims differ"));
                }
                Ok(CouplingSampler::Independent {
                    source: source.clone(),
                    target: target.clone(),
                })
            }
        }
    }

    /// Component structure, for datasets whose pairs are labeled by mixture
    /// components.
    pub fn components(&self) -> Option<ComponentMap> {
        match self {
            DatasetConfig::CrossMixture { std } => {
                let p = MixturePairing::crossed(*std);
                let k = p.source_centers.len();
                Some(ComponentMap {
                    source_centers: p.source_centers,
                    target_centers: p.target_centers,
                    pairing_map: (0..k).collect(),
                })
            }
            DatasetConfig::EntropicShift { base, .. } => base.centers().map(|c| ComponentMap {
                source_centers: c.to_vec(),
                target_centers: c.to_vec(),
                pairing_map: (0..c.len()).collect(),
            }),
            _ => None,
        }
    }

    /// Whether each source point has a single known partner.
    fn is_identity(&self) -> bool {
        matches!(self, DatasetConfig::EntropicShift { k, .. } if *k == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of generated endpoints.
    #[serde(default = "default_eval_n")]
    pub n: usize,
    /// Number of full trajectories written to CSV.
    #[serde(default = "default_eval_paths")]
    pub paths: usize,
}

fn default_eval_n() -> usize {
    10_000
}

fn default_eval_paths() -> usize {
    64
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: default_eval_n(),
            paths: default_eval_paths(),
        }
    }
}

/// File names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub checkpoint: String,
    pub loss_log: String,
    pub endpoints: String,
    pub trajectories: String,
    pub report: String,
    pub plot: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint: "model.ckpt".into(),
            loss_log: "loss.csv".into(),
            endpoints: "endpoints.csv".into(),
            trajectories: "trajectories.csv".into(),
            report: "report.txt".into(),
            plot: "plot.svg".into(),
        }
    }
}

fn default_sampler() -> SamplerConfig {
    SamplerConfig::new(100, Integrator::BridgePosterior)
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub model: Architecture,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                usage(inner.to_string())
            } else {
                usage(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().map_err(|e| CliError::from(e).context("train"))?;
        self.sampler
            .validate()
            .map_err(|e| CliError::from(e).context("sampler"))?;
        if self.model.hidden.contains(&0) {
            return Err(usage("model.hidden: layer widths must be positive"));
        }
        if self.eval.n == 0 {
            return Err(usage("eval.n must be at least 1"));
        }
        self.dataset.build(self.train.sigma)?;
        Ok(())
    }

    pub fn coupling(&self) -> CliResult<CouplingSampler> {
        self.dataset.build(self.train.sigma)
    }
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Root seed; overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Parser)]
#[command(
    name = "bm",
    version,
    about = "Bridge matching and augmented bridge matching experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an endpoint predictor and write a checkpoint.
    Train(TrainArgs),
    /// Integrate the learned SDE and write endpoint and trajectory CSVs.
    Sample(SampleArgs),
    /// Score generated endpoints against the training coupling.
    Eval(EvalArgs),
    /// Tabulate the projected correlation f(alpha) of the Gaussian coupling.
    Gaussian(GaussianArgs),
    /// Render endpoint and trajectory CSVs to SVG.
    Plot(PlotArgs),
    /// Train, sample, evaluate and plot in one go.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint path; defaults to the configured name in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write `step,loss` CSV here.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of paths.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of grid steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub integrator: Option<Integrator>,
    #[arg(long)]
    pub t_clamp: Option<f64>,
    /// Number of trajectories written in full.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Times at which to write endpoint-prediction CSVs.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Endpoint CSV; defaults to the configured name in the output directory.
    #[arg(long)]
    pub endpoints: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// `start:stop:step`
    #[arg(long, default_value = "0.05:0.95:0.05")]
    pub alpha_grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub endpoints: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Config whose dataset supplies component centers for coloring.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    fs::create_dir_all(&g.out_dir).map_err(|e| usage(format!("creating {}: {e}", g.out_dir.display())))?;
    match &cli.command {
        Command::Train(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let ckpt = a
                .checkpoint
                .clone()
                .unwrap_or_else(|| g.out_dir.join(&cfg.outputs.checkpoint));
            let log = a
                .loss_log
                .clone()
                .unwrap_or_else(|| g.out_dir.join(&cfg.outputs.loss_log));
            cmd_train(&cfg, g.seed, &ckpt, &log)
        }
        Command::Sample(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            if let Some(n) = a.n {
                cfg.eval.n = n;
            }
            if let Some(p) = a.paths {
                cfg.eval.paths = p;
            }
            if let Some(s) = a.steps {
                cfg.sampler.num_steps = s;
            }
            if let Some(i) = a.integrator {
                cfg.sampler.integrator = i;
            }
            if a.t_clamp.is_some() {
                cfg.sampler.t_clamp = a.t_clamp;
            }
            cfg.validate()?;
            let ckpt = a
                .checkpoint
                .clone()
                .unwrap_or_else(|| g.out_dir.join(&cfg.outputs.checkpoint));
            cmd_sample(&cfg, g.seed, &ckpt, &g.out_dir, &a.snapshots)
        }
        Command::Eval(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let endpoints = a
                .endpoints
                .clone()
                .unwrap_or_else(|| g.out_dir.join(&cfg.outputs.endpoints));
            let report = cmd_eval(&cfg, g.seed, &endpoints)?;
            let text = report.to_text();
            print!("{text}");
            write_file(&g.out_dir.join(&cfg.outputs.report), &text)?;
            if let Some(p) = &a.csv {
                write_file(p, &report.to_csv())?;
            }
            Ok(())
        }
        Command::Gaussian(a) => {
            let out = a.out.clone().unwrap_or_else(|| g.out_dir.join("gaussian.csv"));
            let grid = parse_grid(&a.alpha_grid)?;
            write_file(&out, &cmd_gaussian(a.sigma, &grid)?)
        }
        Command::Plot(a) => {
            let centers = match &a.config {
                Some(p) => ExperimentConfig::load(p)?
                    .dataset
                    .components()
                    .map(|c| c.target_centers),
                None => None,
            };
            if a.endpoints.is_none() && a.trajectories.is_none() {
                return Err(usage("plot needs --endpoints or --trajectories"));
            }
            let endpoints = a.endpoints.as_deref().map(read_endpoints).transpose()?;
            let trajectories = a.trajectories.as_deref().map(read_trajectories).transpose()?;
            let svg = render_svg(endpoints.as_ref(), trajectories.as_deref(), centers.as_deref());
            let out = a.out.clone().unwrap_or_else(|| g.out_dir.join("plot.svg"));
            write_file(&out, &svg)
        }
        Command::Run(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            cmd_run(&cfg, g.seed, &g.out_dir)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| usage(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

fn root_stream(cfg: &ExperimentConfig, seed: Option<u64>) -> RngStream {
    RngStream::new(seed.unwrap_or(cfg.seed))
}

/// Train per `cfg` with the same streams as `bm train`.
pub fn train_model(cfg: &ExperimentConfig, seed: Option<u64>) -> CliResult<(Checkpoint, TrainRun)> {
    let root = root_stream(cfg, seed);
    let dataset = cfg.coupling()?;
    let run = train(&dataset, &cfg.train, &cfg.model, &root.split(TRAIN_LABEL))?;
    let ckpt = Checkpoint {
        model: run.model.clone(),
        sigma: cfg.train.sigma,
        seed: root.root_seed(),
    };
    Ok((ckpt, run))
}

/// Train per `cfg`; writes the checkpoint and the loss log.
pub fn cmd_train(cfg: &ExperimentConfig, seed: Option<u64>, checkpoint: &Path, loss_log: &Path) -> CliResult<()> {
    let (ckpt, run) = train_model(cfg, seed)?;
    write_file(checkpoint, &ckpt.to_text())?;
    write_file(loss_log, &run.loss_csv())
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::from(e).context(format!("checkpoint {}", path.display())))
}

fn check_model_dim(ckpt: &Checkpoint, dataset: &CouplingSampler) -> CliResult<()> {
    if ckpt.model.state_dim() != dataset.dim() {
        return Err(usage(format!(
            "checkpoint state dim {} does not match dataset dim {}",
            ckpt.model.state_dim(),
            dataset.dim()
        )));
    }
    Ok(())
}

/// Generated `(x0, x1)` pairs for `cfg.eval.n` dataset sources, with the same
/// streams as `bm sample`.
pub fn generate(cfg: &ExperimentConfig, seed: Option<u64>, ckpt: &Checkpoint) -> CliResult<PairedBatch> {
    let dataset = cfg.coupling()?;
    check_model_dim(ckpt, &dataset)?;
    let root = root_stream(cfg, seed);
    let spec = BridgeSpec::new(ckpt.sigma, dataset.dim())?;
    let x0s = dataset.sample_sources(cfg.eval.n, &mut root.split(SOURCE_LABEL));
    Ok(sample_endpoints(
        &ckpt.model,
        &spec,
        &cfg.sampler,
        &x0s,
        &root.split(SAMPLER_LABEL),
    )?)
}

/// Sample `cfg.eval.n` paths from the dataset sources; writes endpoint,
/// trajectory and snapshot CSVs under `out_dir`.
pub fn cmd_sample(
    cfg: &ExperimentConfig,
    seed: Option<u64>,
    checkpoint: &Path,
    out_dir: &Path,
    snapshots: &[f64],
) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = cfg.coupling()?;
    check_model_dim(&ckpt, &dataset)?;
    let d = dataset.dim();
    let n_steps = cfg.sampler.num_steps;
    let snap_steps = snapshots
        .iter()
        .map(|&t| {
            if (0.0..=1.0).contains(&t) {
                Ok((t, (t * n_steps as f64).round() as usize))
            } else {
                Err(usage(format!("snapshot time {t} outside [0, 1]")))
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let root = root_stream(cfg, seed);
    let spec = BridgeSpec::new(ckpt.sigma, d)?;
    let x0s = dataset.sample_sources(cfg.eval.n, &mut root.split(SOURCE_LABEL));
    let stream = root.split(SAMPLER_LABEL);
    let m = cfg.eval.paths.min(x0s.len());
    let (endpoints, trajectories) = if snap_steps.is_empty() {
        let ends = sample_endpoints(&ckpt.model, &spec, &cfg.sampler, &x0s, &stream)?;
        let head = Points::from_flat(d, x0s.as_flat()[..m * d].to_vec())?;
        let trs = sample_trajectories(&ckpt.model, &spec, &cfg.sampler, &head, &stream)?;
        (ends, trs)
    } else {
        let trs = sample_trajectories(&ckpt.model, &spec, &cfg.sampler, &x0s, &stream)?;
        let mut x1 = Points::with_capacity(d, trs.len());
        for tr in &trs {
            x1.push(tr.terminal())?;
        }
        for (t, step) in &snap_steps {
            write_file(
                &out_dir.join(format!("snapshot_t{t}.csv")),
                &snapshot_csv(&trs, *step, d),
            )?;
        }
        (PairedBatch::new(x0s, x1)?, trs.into_iter().take(m).collect())
    };
    write_file(&out_dir.join(&cfg.outputs.endpoints), &endpoints_csv(&endpoints))?;
    write_file(
        &out_dir.join(&cfg.outputs.trajectories),
        &trajectories_csv(&trajectories, d),
    )
}

/// Score the endpoint CSV at `endpoints` against the configured coupling.
pub fn cmd_eval(cfg: &ExperimentConfig, seed: Option<u64>, endpoints: &Path) -> CliResult<CouplingReport> {
    let generated = read_endpoints(endpoints)?;
    evaluate(cfg, seed, &generated)
}

/// The report for generated pairs.
pub fn evaluate(cfg: &ExperimentConfig, seed: Option<u64>, generated: &PairedBatch) -> CliResult<CouplingReport> {
    let dataset = cfg.coupling()?;
    if generated.dim() != dataset.dim() {
        return Err(usage(format!(
            "endpoint dim {} does not match dataset dim {}",
            generated.dim(),
            dataset.dim()
        )));
    }
    if generated.len() < 2 {
        return Err(usage("evaluation needs at least two endpoint rows"));
    }
    let accuracy = match cfg.dataset.components() {
        Some(c) => Some(pairing_accuracy(
            generated,
            &c.source_centers,
            &c.target_centers,
            &c.pairing_map,
        )?),
        None => None,
    };
    let reference = dataset.sample(generated.len(), &mut root_stream(cfg, seed).split(REFERENCE_LABEL));
    let ed = energy_distance(&generated.x1, &reference.x1)?;
    let mse = if cfg.dataset.is_identity() {
        Some(endpoint_mse(&generated.x1, &generated.x0)?)
    } else {
        None
    };
    Ok(CouplingReport {
        pairing_accuracy: accuracy,
        energy_distance_marginal: ed,
        endpoint_mse: mse,
        empirical_cov: empirical_cov(generated)?,
        n: generated.len(),
    })
}

/// Values `start, start + step, ...` up to `stop` from `start:stop:step`.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("alpha grid '{spec}' is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// `alpha,f_alpha,alpha_star` rows.
pub fn cmd_gaussian(sigma: f64, grid: &[f64]) -> CliResult<String> {
    let star = alpha_star(sigma);
    let mut s = String::from("alpha,f_alpha,alpha_star\n");
    for &a in grid {
        let spec = GaussianCouplingSpec::new(a, sigma).map_err(|e| CliError::from(e).context("alpha grid"))?;
        let f = f_alpha(&spec)?;
        let _ = writeln!(s, "{a},{f},{star}");
    }
    Ok(s)
}

/// Train, sample, evaluate and plot.
pub fn cmd_run(cfg: &ExperimentConfig, seed: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let ckpt = out_dir.join(&cfg.outputs.checkpoint);
    cmd_train(cfg, seed, &ckpt, &out_dir.join(&cfg.outputs.loss_log))?;
    cmd_sample(cfg, seed, &ckpt, out_dir, &[])?;
    let endpoints_path = out_dir.join(&cfg.outputs.endpoints);
    let generated = read_endpoints(&endpoints_path)?;
    let report = evaluate(cfg, seed, &generated)?;
    write_file(&out_dir.join(&cfg.outputs.report), &report.to_text())?;
    print!("{}", report.to_text());
    if let DatasetConfig::GaussianCorr { .. } = cfg.dataset {
        let grid = parse_grid("0.05:0.95:0.05")?;
        write_file(&out_dir.join("gaussian.csv"), &cmd_gaussian(cfg.train.sigma, &grid)?)?;
    }
    let trajectories = read_trajectories(&out_dir.join(&cfg.outputs.trajectories))?;
    let centers = cfg.dataset.components().map(|c| c.target_centers);
    let svg = render_svg(Some(&generated), Some(&trajectories), centers.as_deref());
    write_file(&out_dir.join(&cfg.outputs.plot), &svg)
}

/// A numeric CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    /// Parse; errors carry the 1-based line number.
    pub fn parse(text: &str) -> crate::error::Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(e, 1))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row_no = i + 1;
            let record = record.map_err(|e| csv_error(e, row_no))?;
            let line = record.position().map_or(row_no + 1, |p| p.line() as usize);
            let row: Vec<f64> = record
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| format!("'{f}': {e}")))
                .collect::<std::result::Result<_, _>>()
                .map_err(|message| Error::Parse {
                    line,
                    message: format!("row {row_no}: {message}"),
                })?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Indices of `prefix_0, prefix_1, ...` in order.
    pub fn prefixed(&self, prefix: &str) -> Vec<usize> {
        (0..).map_while(|k| self.column(&format!("{prefix}_{k}"))).collect()
    }
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    let line = e.position().map_or(row + 1, |p| p.line() as usize);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("row {}: expected {expected_len} fields, found {len}", line - 1)
        }
        _ => format!("row {}: {e}", line - 1),
    };
    Error::Parse { line, message }
}

fn read_table(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    Table::parse(&text).map_err(|e| CliError::from(e).context(path.display()))
}

fn gather(table: &Table, cols: &[usize]) -> crate::error::Result<Points> {
    let mut p = Points::with_capacity(cols.len(), table.rows.len());
    for row in &table.rows {
        let v: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
        p.push(&v)?;
    }
    Ok(p)
}

/// Read an endpoint CSV (`path_id,x0_*,x1_*`).
pub fn read_endpoints(path: &Path) -> CliResult<PairedBatch> {
    let t = read_table(path)?;
    let (c0, c1) = (t.prefixed("x0"), t.prefixed("x1"));
    if c0.is_empty() || c0.len() != c1.len() {
        return Err(usage(format!("{}: expected columns x0_0.. and x1_0..", path.display())));
    }
    Ok(PairedBatch::new(gather(&t, &c0)?, gather(&t, &c1)?)?)
}

/// A trajectory read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Points,
}

/// Read a trajectory CSV (`path_id,step,t,x_*,pred_*`), grouped by path.
pub fn read_trajectories(path: &Path) -> CliResult<Vec<PathRecord>> {
    let t = read_table(path)?;
    let (id, tc, xs) = (t.column("path_id"), t.column("t"), t.prefixed("x"));
    let (Some(id), Some(tc)) = (id, tc) else {
        return Err(usage(format!("{}: expected columns path_id and t", path.display())));
    };
    if xs.is_empty() {
        return Err(usage(format!("{}: expected columns x_0..", path.display())));
    }
    let mut out: Vec<PathRecord> = Vec::new();
    let mut current = None;
    for row in &t.rows {
        if current != Some(row[id]) {
            current = Some(row[id]);
            out.push(PathRecord {
                times: Vec::new(),
                states: Points::new(xs.len()),
            });
        }
        let rec = out.last_mut().expect("pushed");
        rec.times.push(row[tc]);
        let v: Vec<f64> = xs.iter().map(|&c| row[c]).collect();
        rec.states.push(&v)?;
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const SOURCE_COLOR: &str = "#7f7f7f";

fn component_color(p: &[f64], centers: Option<&[Vec<f64>]>) -> &'static str {
    match centers {
        Some(c) if !c.is_empty() => {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, center) in c.iter().enumerate() {
                let d = crate::linalg::squared_distance(p, center);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            PALETTE[best % PALETTE.len()]
        }
        _ => PALETTE[0],
    }
}

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
}

const SIZE: f64 = 600.0;
const MARGIN: f64 = 50.0;

impl Frame {
    fn fit(points: &[[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..2 {
            if !lo[k].is_finite() || !hi[k].is_finite() {
                lo[k] = -1.0;
                hi[k] = 1.0;
            }
            let pad = ((hi[k] - lo[k]) * 0.05).max(1e-3);
            lo[k] -= pad;
            hi[k] += pad;
        }
        Self { lo, hi }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        let x = MARGIN + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * w;
        let y = SIZE - MARGIN - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * w;
        (x, y)
    }
}

fn axes(s: &mut String, f: &Frame, labels: (&str, &str)) {
    let (x0, y0) = (MARGIN, SIZE - MARGIN);
    let (x1, y1) = (SIZE - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let vx = f.lo[0] + u * (f.hi[0] - f.lo[0]);
        let vy = f.lo[1] + u * (f.hi[1] - f.lo[1]);
        let px = x0 + u * (x1 - x0);
        let py = y0 + u * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}" stroke="black"/><text x="{px}" y="{}" text-anchor="middle">{vx:.2}</text>"#,
            y0 + 5.0,
            y0 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{py}" x2="{x0}" y2="{py}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{vy:.2}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text><text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        SIZE / 2.0,
        SIZE - 10.0,
        labels.0,
        SIZE / 2.0,
        SIZE / 2.0,
        labels.1
    );
    s.push_str("</g>\n");
}

/// Scatter of endpoints and polylines of trajectories, colored by the
/// nearest target center of each final point. One-dimensional data is drawn
/// as `(x0, x1)` scatter and `(t, x)` paths.
pub fn render_svg(
    endpoints: Option<&PairedBatch>,
    trajectories: Option<&[PathRecord]>,
    target_centers: Option<&[Vec<f64>]>,
) -> String {
    let dim = endpoints
        .map(PairedBatch::dim)
        .or_else(|| trajectories.and_then(|t| t.first()).map(|p| p.states.dim()))
        .unwrap_or(2);
    let planar = dim >= 2;
    let coords = |p: &[f64]| [p[0], p[1]];
    let mut src_pts: Vec<[f64; 2]> = Vec::new();
    let mut dst_pts: Vec<([f64; 2], &str)> = Vec::new();
    if let Some(b) = endpoints {
        for i in 0..b.len() {
            let (a, z) = (b.x0.row(i), b.x1.row(i));
            let color = component_color(z, target_centers);
            if planar {
                src_pts.push(coords(a));
                dst_pts.push((coords(z), color));
            } else {
                dst_pts.push(([a[0], z[0]], color));
            }
        }
    }
    let mut lines: Vec<(Vec<[f64; 2]>, &str)> = Vec::new();
    for rec in trajectories.unwrap_or(&[]) {
        if rec.states.is_empty() {
            continue;
        }
        let last = rec.states.row(rec.states.len() - 1);
        let color = component_color(last, target_centers);
        let pts = if planar {
            rec.states.rows().map(coords).collect()
        } else {
            rec.times
                .iter()
                .zip(rec.states.rows())
                .map(|(&t, x)| [t, x[0]])
                .collect()
        };
        lines.push((pts, color));
    }
    let mut all: Vec<[f64; 2]> = src_pts.clone();
    all.extend(dst_pts.iter().map(|(p, _)| *p));
    if planar {
        all.extend(lines.iter().flat_map(|(l, _)| l.iter().copied()));
    }
    let frame = Frame::fit(&all);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    axes(&mut s, &frame, if planar { ("x_0", "x_1") } else { ("x0", "x1") });
    if planar {
        for (pts, color) in &lines {
            let mut d = String::new();
            for p in pts {
                let (x, y) = frame.map(*p);
                let _ = write!(d, "{x:.2},{y:.2} ");
            }
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-opacity="0.35" stroke-width="0.8"/>"#,
                d.trim_end()
            );
        }
    }
    for p in &src_pts {
        let (x, y) = frame.map(*p);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{SOURCE_COLOR}" fill-opacity="0.5"/>"#
        );
    }
    for (p, color) in &dst_pts {
        let (x, y) = frame.map(*p);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{color}" fill-opacity="0.6"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(dataset: &str) -> String {
        format!(
            r#"{{"dataset": {dataset}, "train": {{"cond_alpha": 0.0, "steps": 0, "batch_size": 4, "sigma": 1.0}}}}"#
        )
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_json(&minimal(r#"{"kind": "cross_mixture"}"#)).unwrap();
        assert_eq!(cfg.dataset, DatasetConfig::CrossMixture { std: 0.2 });
        assert_eq!(cfg.model, Architecture::default());
        assert_eq!(cfg.sampler.num_steps, 100);
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn missing_field_is_named() {
        let e =
            ExperimentConfig::from_json(r#"{"train": {"cond_alpha": 0.0, "steps": 0, "batch_size": 4, "sigma": 1.0}}"#)
                .unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE);
        assert!(e.to_string().contains("dataset"), "{e}");
        let e = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "cross_mixture"}, "train": {"cond_alpha": 0.0, "batch_size": 4, "sigma": 1.0}}"#,
        )
        .unwrap_err();
        assert!(
            e.to_string().contains("train") && e.to_string().contains("steps"),
            "{e}"
        );
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = minimal(r#"{"kind": "gaussian_corr", "alpha": 1.5}"#);
        let e = ExperimentConfig::from_json(&bad).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE);
        assert!(e.to_string().starts_with("dataset"), "{e}");
        let mismatch = minimal(r#"{"kind": "gaussian_corr", "alpha": 0.5, "sigma": 2.0}"#);
        assert!(ExperimentConfig::from_json(&mismatch).is_err());
    }

    #[test]
    fn numerical_errors_map_to_exit_three() {
        let e: CliError = Error::NonFiniteState { step: 3 }.into();
        assert_eq!(e.exit_code(), EXIT_NUMERICAL);
        let e: CliError = Error::InvalidArgument("x".into()).into();
        assert_eq!(e.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.05:0.95:0.05").unwrap();
        assert_eq!(g.len(), 19);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(parse_grid("0.1:0.2").is_err());
        assert!(parse_grid("0.5:0.1:0.1").is_err());
    }

    #[test]
    fn table_errors_name_the_row() {
        let e = Table::parse("a,b\n1,2\n3,x\n").unwrap_err();
        match e {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("row 2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(Table::parse("a,b\n1\n").is_err());
        assert_eq!(Table::parse("a,b\n").unwrap().rows.len(), 0);
    }

    #[test]
    fn empty_plot_has_axes_only() {
        let svg = render_svg(Some(&PairedBatch::empty(2)), None, None);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<line"));
        assert!(!svg.contains("<circle") && !svg.contains("<polyline"));
    }

    #[test]
    fn identity_coupling_scores_perfect_pairing() {
        let cfg = ExperimentConfig::from_json(&minimal(r#"{"kind": "entropic_shift", "k": 0.0}"#)).unwrap();
        let base = Marginal::square_mixture(0.3).sample(500, &mut RngStream::new(5));
        let batch = PairedBatch::new(base.clone(), base).unwrap();
        let rep = evaluate(&cfg, None, &batch).unwrap();
        assert_eq!(rep.pairing_accuracy, Some(1.0));
        assert_eq!(rep.endpoint_mse, Some(0.0));
    }
}
