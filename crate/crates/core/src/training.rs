//! Bridge matching and augmented bridge matching.
//!
//! Both loops regress the endpoint `x1` from a bridge sample `x_t`; they
//! differ only in what extra input the predictor sees, set by the
//! conditioning level `cond_alpha`: 0 feeds the initial point (augmented),
//! 1 feeds nothing (plain), anything in between feeds `x_{cond_alpha * t}`.

use serde::{Deserialize, Serialize};

use crate::bridge::{bridge_pair_into, bridge_point_into};
use crate::couplings::CouplingSampler;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Points;
use crate::nets::{adam_step, mlp_loss_grad, AdamConfig, AdamState, Architecture, CondMode, ExampleBatch, MlpModel};
use crate::rng::RngStream;

/// Coupled samples `(x0[i], x1[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    pub x0: Points,
    pub x1: Points,
}

impl PairedBatch {
    pub fn new(x0: Points, x1: Points) -> Result<Self> {
        check_dim(x0.len(), x1.len())?;
        check_dim(x0.dim(), x1.dim())?;
        Ok(Self { x0, x1 })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            x0: Points::new(dim),
            x1: Points::new(dim),
        }
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }

    /// The same pairs with the roles of the two sides exchanged.
    pub fn swapped(self) -> Self {
        Self {
            x0: self.x1,
            x1: self.x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// lambda_t = 1
    #[default]
    Uniform,
}

impl LossWeighting {
    pub fn weight(self, _t: f64) -> f64 {
        match self {
            LossWeighting::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub cond_alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub sigma: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lambda_weighting: LossWeighting,
    #[serde(default)]
    pub t_sampling: TimeSampling,
}

impl TrainConfig {
    pub fn new(cond_alpha: f64, steps: usize, batch_size: usize, sigma: f64) -> Self {
        Self {
            cond_alpha,
            steps,
            batch_size,
            sigma,
            adam: AdamConfig::default(),
            lambda_weighting: LossWeighting::Uniform,
            t_sampling: TimeSampling::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cond_alpha) {
            return Err(Error::InvalidArgument(format!(
                "cond_alpha {} outside [0, 1]",
                self.cond_alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidArgument("invalid adam hyperparameters".into()));
        }
        Ok(())
    }

    pub fn cond_mode(&self) -> CondMode {
        CondMode::from_level(self.cond_alpha)
    }
}

/// One regression example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x_t: Vec<f64>,
    pub cond: Option<Vec<f64>>,
    pub t: f64,
    pub target: Vec<f64>,
}

/// Draw `t ~ U[0, 1]` and build the example for pair `(x0, x1)`.
pub fn make_training_example(
    cfg: &TrainConfig,
    x0: &[f64],
    x1: &[f64],
    stream: &mut RngStream,
) -> Result<TrainingExample> {
    let t = stream.uniform();
    make_training_example_at(cfg, x0, x1, t, stream)
}

/// As [`make_training_example`] with a fixed time.
pub fn make_training_example_at(
    cfg: &TrainConfig,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    stream: &mut RngStream,
) -> Result<TrainingExample> {
    check_dim(x0.len(), x1.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    let d = x0.len();
    let mut x_t = vec![0.0; d];
    let cond = fill_example(cfg.sigma, cfg.cond_mode(), x0, x1, t, stream, &mut x_t, None);
    Ok(TrainingExample {
        x_t,
        cond,
        t,
        target: x1.to_vec(),
    })
}

#[allow(clippy::too_many_arguments)]
fn fill_example(
    sigma: f64,
    mode: CondMode,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    stream: &mut RngStream,
    x_t: &mut [f64],
    cond_out: Option<&mut [f64]>,
) -> Option<Vec<f64>> {
    match mode {
        CondMode::None => {
            bridge_point_into(sigma, x0, x1, t, stream, x_t);
            None
        }
        CondMode::InitialPoint => {
            bridge_point_into(sigma, x0, x1, t, stream, x_t);
            match cond_out {
                Some(c) => {
                    c.copy_from_slice(x0);
                    None
                }
                None => Some(x0.to_vec()),
            }
        }
        CondMode::AlphaPoint { alpha } => {
            let s = alpha * t;
            match cond_out {
                Some(c) => {
                    bridge_pair_into(sigma, x0, x1, s, t, stream, c, x_t);
                    None
                }
                None => {
                    let mut c = vec![0.0; x0.len()];
                    bridge_pair_into(sigma, x0, x1, s, t, stream, &mut c, x_t);
                    Some(c)
                }
            }
        }
    }
}

/// Build a full regression batch from coupled pairs.
pub fn make_example_batch(cfg: &TrainConfig, pairs: &PairedBatch, stream: &mut RngStream) -> ExampleBatch {
    let n = pairs.len();
    let d = pairs.dim();
    let mode = cfg.cond_mode();
    let mut x_t = vec![0.0; n * d];
    let mut cond = if mode.is_conditioned() {
        Some(vec![0.0; n * d])
    } else {
        None
    };
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let ti = stream.uniform();
        t.push(ti);
        let c = cond.as_mut().map(|c| &mut c[i * d..(i + 1) * d]);
        fill_example(
            cfg.sigma,
            mode,
            pairs.x0.row(i),
            pairs.x1.row(i),
            ti,
            stream,
            &mut x_t[i * d..(i + 1) * d],
            c,
        );
    }
    let weight = t.iter().map(|&ti| cfg.lambda_weighting.weight(ti)).collect();
    ExampleBatch {
        x_t: Points::from_flat(d, x_t).expect("positive dim"),
        cond: cond.map(|c| Points::from_flat(d, c).expect("positive dim")),
        t,
        target: pairs.x1.clone(),
        weight,
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: MlpModel,
    /// `(step, loss)` for every step.
    pub loss_log: Vec<(usize, f64)>,
}

impl TrainRun {
    /// Loss log as `step,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.loss_log {
            s.push_str(&format!("{step},{loss:e}\n"));
        }
        s
    }
}

// stream labels under the run stream
const INIT_LABEL: u64 = 0;
const DATA_LABEL: u64 = 1;
const EXAMPLE_LABEL: u64 = 2;

/// The model a run with this configuration starts from.
pub fn initial_model(dim: usize, cfg: &TrainConfig, arch: &Architecture, stream: &RngStream) -> Result<MlpModel> {
    MlpModel::from_architecture(arch, dim, cfg.cond_mode(), &mut stream.split(INIT_LABEL))
}

/// Run `cfg.steps` Adam steps of endpoint regression on pairs from `dataset`.
pub fn train(
    dataset: &CouplingSampler,
    cfg: &TrainConfig,
    arch: &Architecture,
    stream: &RngStream,
) -> Result<TrainRun> {
    let model = initial_model(dataset.dim(), cfg, arch, stream)?;
    train_from(model, dataset, cfg, stream)
}

/// As [`train`], continuing from an existing model.
pub fn train_from(
    mut model: MlpModel,
    dataset: &CouplingSampler,
    cfg: &TrainConfig,
    stream: &RngStream,
) -> Result<TrainRun> {
    cfg.validate()?;
    check_dim(model.state_dim(), dataset.dim())?;
    if model.cond_mode() != cfg.cond_mode() {
        return Err(Error::InvalidArgument(format!(
            "model conditions on {} but the configuration asks for {}",
            model.cond_mode().name(),
            cfg.cond_mode().name()
        )));
    }
    let data_root = stream.split(DATA_LABEL);
    let example_root = stream.split(EXAMPLE_LABEL);
    let mut adam = AdamState::new(&model, cfg.adam);
    let mut loss_log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut data_stream = data_root.split(step as u64);
        let pairs = dataset.sample(cfg.batch_size, &mut data_stream);
        let batch = make_example_batch(cfg, &pairs, &mut example_root.split(step as u64));
        let (loss, grads) = mlp_loss_grad(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch_stream: data_root.split(step as u64).describe(),
            });
        }
        adam_step(&mut model, &mut adam, &grads)?;
        loss_log.push((step, loss));
    }
    Ok(TrainRun { model, loss_log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianCouplingSpec;

    #[test]
    fn augmented_example_at_time_zero() {
        let cfg = TrainConfig::new(0.0, 0, 1, 1.0);
        let ex = make_training_example_at(&cfg, &[1.5, -0.5], &[3.0, 2.0], 0.0, &mut RngStream::new(0)).unwrap();
        assert_eq!(ex.x_t, vec![1.5, -0.5]);
        assert_eq!(ex.cond, Some(vec![1.5, -0.5]));
        assert_eq!(ex.target, vec![3.0, 2.0]);
    }

    #[test]
    fn plain_examples_have_no_conditioning() {
        let cfg = TrainConfig::new(1.0, 0, 1, 1.0);
        let mut r = RngStream::new(1);
        for _ in 0..100 {
            assert!(make_training_example(&cfg, &[0.0], &[1.0], &mut r)
                .unwrap()
                .cond
                .is_none());
        }
    }

    #[test]
    fn alpha_conditioning_covariance() {
        // Cov(X_s, X_t) = sigma^2 s (1 - t) with s = 0.4, t = 0.8
        let cfg = TrainConfig::new(0.5, 0, 1, 1.0);
        let mut r = RngStream::new(2);
        let n = 100_000;
        let mut prods = Vec::with_capacity(n);
        let (mut sc, mut sx) = (0.0, 0.0);
        for _ in 0..n {
            let ex = make_training_example_at(&cfg, &[0.0], &[0.0], 0.8, &mut r).unwrap();
            let c = ex.cond.unwrap()[0];
            sc += c;
            sx += ex.x_t[0];
            prods.push(c * ex.x_t[0]);
        }
        let nf = n as f64;
        let cov = (prods.iter().sum::<f64>() - sc * sx / nf) / (nf - 1.0);
        let mean_p = prods.iter().sum::<f64>() / nf;
        let se = (prods.iter().map(|p| (p - mean_p).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt();
        assert!((cov - 0.08).abs() < 4.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let spec = GaussianCouplingSpec::new(0.5, 1.0).unwrap();
        let data = CouplingSampler::GaussianCorr(spec);
        let cfg = TrainConfig::new(1.0, 0, 8, 1.0);
        let arch = Architecture {
            hidden: vec![8],
            activation: crate::nets::Activation::Tanh,
            time_features: 1,
        };
        let s = RngStream::new(3);
        let run = train(&data, &cfg, &arch, &s).unwrap();
        assert_eq!(run.model, initial_model(1, &cfg, &arch, &s).unwrap());
        assert!(run.loss_log.is_empty());
        assert_eq!(run.loss_csv(), "step,loss\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(1.5, 1, 1, 1.0).validate().is_err());
        assert!(TrainConfig::new(0.5, 1, 0, 1.0).validate().is_err());
        assert!(TrainConfig::new(0.5, 1, 1, 0.0).validate().is_err());
        assert!(TrainConfig::new(0.5, 1, 1, 1.0).validate().is_ok());
    }

    #[test]
    fn exploding_lr_aborts_with_step() {
        let data = CouplingSampler::Independent {
            source: crate::couplings::Marginal::StandardNormal { dim: 1 },
            target: crate::couplings::Marginal::mixture(vec![vec![1e200]], 0.0),
        };
        let mut cfg = TrainConfig::new(1.0, 50, 4, 1.0);
        cfg.adam.lr = 1e3;
        let arch = Architecture {
            hidden: vec![4],
            activation: crate::nets::Activation::Relu,
            time_features: 0,
        };
        match train(&data, &cfg, &arch, &RngStream::new(0)) {
            Err(Error::NonFiniteLoss { step, batch_stream }) => {
                assert_eq!(step, 0);
                assert_eq!(batch_stream, "0/1/0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
