//! Endpoint predictor: a plain MLP with hand-written reverse mode and Adam.
//!
//! Input layout for one example is `[x_t | cond | t | sin(2 pi k t), cos(2 pi k t) for k = 1..F]`
//! where `cond` is empty, the initial point, or the path value at `alpha * t`
//! depending on [`CondMode`]. Dense layers go through `matrixmultiply`; every
//! row of a batch is computed with the same kernel, so a prediction does not
//! depend on which other rows share its batch.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Points;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let a = z.tanh();
                1.0 - a * a
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "silu" => Ok(Self::Silu),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

/// What the predictor sees besides `(x_t, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CondMode {
    /// Plain bridge matching.
    None,
    /// Augmented bridge matching: condition on `x_0`.
    InitialPoint,
    /// Condition on the path value at time `alpha * t`.
    AlphaPoint { alpha: f64 },
}

impl CondMode {
    /// Mode used when training at conditioning level `alpha`.
    pub fn from_level(alpha: f64) -> Self {
        if alpha <= 0.0 {
            CondMode::InitialPoint
        } else if alpha >= 1.0 {
            CondMode::None
        } else {
            CondMode::AlphaPoint { alpha }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CondMode::None => "none",
            CondMode::InitialPoint => "initial_point",
            CondMode::AlphaPoint { .. } => "alpha_point",
        }
    }

    /// Conditioning level in [0, 1]: 0 for the initial point, 1 for none.
    pub fn level(&self) -> f64 {
        match self {
            CondMode::None => 1.0,
            CondMode::InitialPoint => 0.0,
            CondMode::AlphaPoint { alpha } => *alpha,
        }
    }

    pub fn is_conditioned(&self) -> bool {
        !matches!(self, CondMode::None)
    }
}

/// Hidden-layer shape shared by every preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "default_time_features")]
    pub time_features: usize,
}

fn default_time_features() -> usize {
    4
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            activation: Activation::Silu,
            time_features: default_time_features(),
        }
    }
}

impl Architecture {
    pub fn layer_dims(&self, state_dim: usize, cond_mode: CondMode) -> Vec<usize> {
        let cond = if cond_mode.is_conditioned() { state_dim } else { 0 };
        let mut dims = vec![state_dim + cond + 1 + 2 * self.time_features];
        dims.extend(&self.hidden);
        dims.push(state_dim);
        dims
    }
}

/// Parameter-shaped storage, used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// All components in parameter order (layer by layer, weights then bias).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    /// Per layer, row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    cond_mode: CondMode,
    time_features: usize,
}

fn validate_dims(layer_dims: &[usize], cond_mode: CondMode, time_features: usize) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer_dims must hold at least two positive sizes, got {layer_dims:?}"
        )));
    }
    let d = *layer_dims.last().unwrap();
    let cond = if cond_mode.is_conditioned() { d } else { 0 };
    let expected = d + cond + 1 + 2 * time_features;
    if layer_dims[0] != expected {
        return Err(Error::InvalidArgument(format!(
            "input width {} does not match state {d} + cond {cond} + 1 + 2*{time_features} = {expected}",
            layer_dims[0]
        )));
    }
    if let CondMode::AlphaPoint { alpha } = cond_mode {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
    }
    Ok(())
}

impl MlpModel {
    /// Fan-in uniform initialisation: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
    pub fn init(
        layer_dims: &[usize],
        activation: Activation,
        cond_mode: CondMode,
        time_features: usize,
        stream: &mut RngStream,
    ) -> Result<Self> {
        validate_dims(layer_dims, cond_mode, time_features)?;
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| bound * (2.0 * stream.uniform() - 1.0))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
            cond_mode,
            time_features,
        })
    }

    pub fn from_architecture(
        arch: &Architecture,
        state_dim: usize,
        cond_mode: CondMode,
        stream: &mut RngStream,
    ) -> Result<Self> {
        Self::init(
            &arch.layer_dims(state_dim, cond_mode),
            arch.activation,
            cond_mode,
            arch.time_features,
            stream,
        )
    }

    /// Build from explicit parameters; shapes are validated.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        cond_mode: CondMode,
        time_features: usize,
    ) -> Result<Self> {
        validate_dims(&layer_dims, cond_mode, time_features)?;
        let layers = layer_dims.len() - 1;
        check_dim(layers, weights.len())?;
        check_dim(layers, biases.len())?;
        for (l, pair) in layer_dims.windows(2).enumerate() {
            check_dim(pair[0] * pair[1], weights[l].len())?;
            check_dim(pair[1], biases[l].len())?;
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
            cond_mode,
            time_features,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn cond_mode(&self) -> CondMode {
        self.cond_mode
    }

    pub fn time_features(&self) -> usize {
        self.time_features
    }

    pub fn state_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn cond_dim(&self) -> usize {
        if self.cond_mode.is_conditioned() {
            self.state_dim()
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameter by flat index, ordered as in [`Gradients::flat`].
    pub fn param(&self, index: usize) -> f64 {
        *self.locate(index).expect("parameter index out of range")
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.locate_mut(index).expect("parameter index out of range") = value;
    }

    fn locate_mut(&mut self, index: usize) -> Option<&mut f64> {
        let mut rest = index;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if rest < w.len() {
                return w.get_mut(rest);
            }
            rest -= w.len();
            if rest < b.len() {
                return b.get_mut(rest);
            }
            rest -= b.len();
        }
        None
    }

    fn locate(&self, index: usize) -> Option<&f64> {
        let mut rest = index;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if rest < w.len() {
                return w.get(rest);
            }
            rest -= w.len();
            if rest < b.len() {
                return b.get(rest);
            }
            rest -= b.len();
        }
        None
    }

    fn input_width(&self) -> usize {
        self.layer_dims[0]
    }

    fn write_input(&self, x_t: &[f64], cond: Option<&[f64]>, t: f64, row: &mut [f64]) {
        let d = x_t.len();
        row[..d].copy_from_slice(x_t);
        let mut k = d;
        if let Some(c) = cond {
            row[k..k + c.len()].copy_from_slice(c);
            k += c.len();
        }
        row[k] = t;
        k += 1;
        for f in 1..=self.time_features {
            let arg = TAU * f as f64 * t;
            row[k] = arg.sin();
            row[k + 1] = arg.cos();
            k += 2;
        }
    }

    fn check_cond(&self, has_cond: bool) -> Result<()> {
        match (self.cond_mode.is_conditioned(), has_cond) {
            (true, false) => Err(Error::InvalidArgument(format!(
                "model with cond_mode {} needs a conditioning vector",
                self.cond_mode.name()
            ))),
            (false, true) => Err(Error::InvalidArgument(
                "model without conditioning was given a conditioning vector".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Assemble the network input for a batch. `times` holds one t per row.
    fn build_inputs(&self, x_t: &Points, cond: Option<&Points>, times: &[f64]) -> Result<Vec<f64>> {
        self.check_cond(cond.is_some())?;
        check_dim(self.state_dim(), x_t.dim())?;
        check_dim(x_t.len(), times.len())?;
        if let Some(c) = cond {
            check_dim(self.cond_dim(), c.dim())?;
            check_dim(x_t.len(), c.len())?;
        }
        let width = self.input_width();
        let mut input = vec![0.0; width * x_t.len()];
        for (i, row) in input.chunks_exact_mut(width).enumerate() {
            self.write_input(x_t.row(i), cond.map(|c| c.row(i)), times[i], row);
        }
        Ok(input)
    }

    /// Endpoint prediction for a single state.
    pub fn predict(&self, x_t: &[f64], cond: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        let x = Points::from_flat(x_t.len(), x_t.to_vec())?;
        let c = cond.map(|c| Points::from_flat(c.len(), c.to_vec())).transpose()?;
        Ok(self.predict_batch(&x, c.as_ref(), &[t])?.into_flat())
    }

    /// Endpoint predictions for a batch, one time per row.
    pub fn predict_batch(&self, x_t: &Points, cond: Option<&Points>, times: &[f64]) -> Result<Points> {
        let input = self.build_inputs(x_t, cond, times)?;
        let n = x_t.len();
        let mut cache = Vec::new();
        let out = self.forward(input, n, &mut cache, false);
        Points::from_flat(self.state_dim(), out)
    }

    /// Runs the network. With `keep`, pushes `(pre_activation, post_activation)` per
    /// layer into `cache` with the input as the first post-activation.
    fn forward(&self, input: Vec<f64>, n: usize, cache: &mut Vec<(Vec<f64>, Vec<f64>)>, keep: bool) -> Vec<f64> {
        let layers = self.weights.len();
        let mut h = input;
        if keep {
            cache.push((Vec::new(), h.clone()));
        }
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let mut z = Vec::with_capacity(n * fan_out);
            for _ in 0..n {
                z.extend_from_slice(&self.biases[l]);
            }
            if n > 0 {
                // z (n x out) += h (n x in) * W^T, W stored out x in
                unsafe {
                    matrixmultiply::dgemm(
                        n,
                        fan_in,
                        fan_out,
                        1.0,
                        h.as_ptr(),
                        fan_in as isize,
                        1,
                        self.weights[l].as_ptr(),
                        1,
                        fan_in as isize,
                        1.0,
                        z.as_mut_ptr(),
                        fan_out as isize,
                        1,
                    );
                }
            }
            if l + 1 == layers {
                if keep {
                    cache.push((z.clone(), Vec::new()));
                }
                return z;
            }
            let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
            if keep {
                cache.push((z, a.clone()));
            }
            h = a;
        }
        h
    }
}

/// A regression batch: states, optional conditioning, times, targets, weights.
#[derive(Debug, Clone)]
pub struct ExampleBatch {
    pub x_t: Points,
    pub cond: Option<Points>,
    pub t: Vec<f64>,
    pub target: Points,
    /// Per-example loss weight lambda_t.
    pub weight: Vec<f64>,
}

impl ExampleBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Batch-mean weighted squared error and its exact gradient.
pub fn mlp_loss_grad(model: &MlpModel, batch: &ExampleBatch) -> Result<(f64, Gradients)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    check_dim(n, batch.x_t.len())?;
    check_dim(n, batch.target.len())?;
    check_dim(n, batch.weight.len())?;
    check_dim(model.state_dim(), batch.target.dim())?;
    let input = model.build_inputs(&batch.x_t, batch.cond.as_ref(), &batch.t)?;
    let mut cache = Vec::with_capacity(model.weights.len() + 1);
    let pred = model.forward(input, n, &mut cache, true);

    let d = model.state_dim();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut delta = vec![0.0; n * d];
    for i in 0..n {
        let lam = batch.weight[i];
        let target = batch.target.row(i);
        let mut sq = 0.0;
        for k in 0..d {
            let r = pred[i * d + k] - target[k];
            sq += r * r;
            delta[i * d + k] = 2.0 * lam * r * inv_n;
        }
        loss += lam * sq;
    }
    loss *= inv_n;

    let mut grads = Gradients::zeros_like(model);
    let layers = model.weights.len();
    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (model.layer_dims[l], model.layer_dims[l + 1]);
        let h_prev = &cache[l].1;
        // dW (out x in) = delta^T (out x n) * h_prev (n x in)
        unsafe {
            matrixmultiply::dgemm(
                fan_out,
                n,
                fan_in,
                1.0,
                delta.as_ptr(),
                1,
                fan_out as isize,
                h_prev.as_ptr(),
                fan_in as isize,
                1,
                0.0,
                grads.weights[l].as_mut_ptr(),
                fan_in as isize,
                1,
            );
        }
        let db = &mut grads.biases[l];
        for row in delta.chunks_exact(fan_out) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        if l == 0 {
            break;
        }
        // dh_prev (n x in) = delta (n x out) * W (out x in)
        let mut dh = vec![0.0; n * fan_in];
        unsafe {
            matrixmultiply::dgemm(
                n,
                fan_out,
                fan_in,
                1.0,
                delta.as_ptr(),
                fan_out as isize,
                1,
                model.weights[l].as_ptr(),
                fan_in as isize,
                1,
                0.0,
                dh.as_mut_ptr(),
                fan_in as isize,
                1,
            );
        }
        let z_prev = &cache[l].0;
        for (g, z) in dh.iter_mut().zip(z_prev) {
            *g *= model.activation.derivative(*z);
        }
        delta = dh;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(model: &mut MlpModel, state: &mut AdamState, grads: &Gradients) -> Result<()> {
    check_dim(model.weights.len(), grads.weights.len())?;
    check_dim(model.weights.len(), state.first_moment.weights.len())?;
    state.step_count += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let step = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(step);
    let c2 = 1.0 - beta2.powi(step);
    let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
        for (((p, m), v), g) in p.iter_mut().zip(m).zip(v).zip(g) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for l in 0..model.weights.len() {
        check_dim(model.weights[l].len(), grads.weights[l].len())?;
        check_dim(model.biases[l].len(), grads.biases[l].len())?;
        update(
            &mut model.weights[l],
            &mut state.first_moment.weights[l],
            &mut state.second_moment.weights[l],
            &grads.weights[l],
        );
        update(
            &mut model.biases[l],
            &mut state.first_moment.biases[l],
            &mut state.second_moment.biases[l],
            &grads.biases[l],
        );
    }
    Ok(())
}

impl fmt::Display for MlpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mlp {:?} {} cond={} F={}",
            self.layer_dims,
            self.activation.name(),
            self.cond_mode.name(),
            self.time_features
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(activation: Activation, seed: u64) -> MlpModel {
        // 2-16-2 with no time features: input = x (2) + t (1)
        MlpModel::init(&[3, 16, 2], activation, CondMode::None, 0, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = tiny(Activation::Tanh, 4);
        let b = tiny(Activation::Tanh, 4);
        assert_eq!(a, b);
        assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn init_weight_spread_matches_uniform_law() {
        let m = MlpModel::init(
            &[202, 100, 1],
            Activation::Silu,
            CondMode::None,
            100,
            &mut RngStream::new(1),
        )
        .unwrap();
        let w = &m.weights()[0];
        assert!(w.len() >= 10_000);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 1.0 / (3.0 * 202.0f64).sqrt();
        assert!((sd / target - 1.0).abs() < 0.1, "sd {sd} target {target}");
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut r = RngStream::new(0);
        assert!(MlpModel::init(&[4, 8, 2], Activation::Tanh, CondMode::None, 0, &mut r).is_err());
        assert!(MlpModel::init(&[5, 8, 2], Activation::Tanh, CondMode::InitialPoint, 0, &mut r).is_ok());
        assert!(MlpModel::init(&[3], Activation::Tanh, CondMode::None, 0, &mut r).is_err());
    }

    #[test]
    fn zero_model_outputs_final_bias() {
        let mut m = tiny(Activation::Tanh, 0);
        for w in m.weights_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.predict(&[0.3, -1.0], None, 0.4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_embedding() {
        // single linear layer, W = [I | 0] on input [x (2) | t | sin | cos]
        let w = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let m = MlpModel::from_parts(
            vec![5, 2],
            vec![w],
            vec![vec![0.0; 2]],
            Activation::Relu,
            CondMode::None,
            1,
        )
        .unwrap();
        assert_eq!(m.predict(&[-0.7, 2.5], None, 0.9).unwrap(), vec![-0.7, 2.5]);
    }

    #[test]
    fn prediction_needs_matching_conditioning() {
        let m = MlpModel::init(
            &[5, 4, 2],
            Activation::Tanh,
            CondMode::InitialPoint,
            0,
            &mut RngStream::new(0),
        )
        .unwrap();
        assert!(m.predict(&[0.0, 0.0], None, 0.5).is_err());
        assert!(m.predict(&[0.0, 0.0], Some(&[1.0, 1.0]), 0.5).is_ok());
        let plain = tiny(Activation::Tanh, 0);
        assert!(plain.predict(&[0.0, 0.0], Some(&[1.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn predict_is_pure() {
        let m = tiny(Activation::Silu, 3);
        let a = m.predict(&[0.1, 0.2], None, 0.3).unwrap();
        let b = m.predict(&[0.1, 0.2], None, 0.3).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    fn batch_for(model: &MlpModel, seed: u64, n: usize) -> ExampleBatch {
        let mut r = RngStream::new(seed);
        let d = model.state_dim();
        ExampleBatch {
            x_t: Points::from_flat(d, r.draw_gaussian(n * d)).unwrap(),
            cond: None,
            t: (0..n).map(|_| r.uniform()).collect(),
            target: Points::from_flat(d, r.draw_gaussian(n * d)).unwrap(),
            weight: vec![1.0; n],
        }
    }

    #[test]
    fn loss_zero_at_interpolation() {
        let m = tiny(Activation::Tanh, 2);
        let mut batch = batch_for(&m, 1, 4);
        batch.target = m.predict_batch(&batch.x_t, None, &batch.t).unwrap();
        let (loss, grads) = mlp_loss_grad(&m, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn doubling_weight_doubles_loss_and_grads() {
        let m = tiny(Activation::Silu, 2);
        let batch = batch_for(&m, 5, 4);
        let (l1, g1) = mlp_loss_grad(&m, &batch).unwrap();
        let mut doubled = batch.clone();
        doubled.weight.iter_mut().for_each(|w| *w *= 2.0);
        let (l2, g2) = mlp_loss_grad(&m, &doubled).unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert_eq!(b, 2.0 * a);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = tiny(Activation::Tanh, 0);
        let batch = ExampleBatch {
            x_t: Points::new(2),
            cond: None,
            t: vec![],
            target: Points::new(2),
            weight: vec![],
        };
        assert!(mlp_loss_grad(&m, &batch).is_err());
    }

    #[test]
    fn adam_zero_grads_keep_parameters() {
        let mut m = tiny(Activation::Tanh, 0);
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        adam_step(&mut m, &mut st, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut m = MlpModel::from_parts(
            vec![2, 1],
            vec![vec![0.5, 0.0]],
            vec![vec![0.0]],
            Activation::Tanh,
            CondMode::None,
            0,
        )
        .unwrap();
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&m, cfg);
        let g = -0.37;
        let grads = Gradients {
            weights: vec![vec![g, 0.0]],
            biases: vec![vec![0.0]],
        };
        adam_step(&mut m, &mut st, &grads).unwrap();
        let expected = 0.5 - cfg.lr * g / (g.abs() + cfg.eps);
        assert!((m.weights()[0][0] - expected).abs() < 1e-15);
        assert!((m.weights()[0][0] - (0.5 + cfg.lr)).abs() < cfg.lr * 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let m = tiny(Activation::Silu, 1);
        let batch = batch_for(&m, 2, 8);
        let (_, g) = mlp_loss_grad(&m, &batch).unwrap();
        let run = || {
            let mut mm = m.clone();
            let mut st = AdamState::new(&mm, AdamConfig::default());
            adam_step(&mut mm, &mut st, &g).unwrap();
            adam_step(&mut mm, &mut st, &g).unwrap();
            (mm, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn param_indexing_round_trips() {
        let mut m = tiny(Activation::Tanh, 0);
        let n = m.param_count();
        assert_eq!(n, 3 * 16 + 16 + 16 * 2 + 2);
        m.set_param(n - 1, 9.0);
        assert_eq!(m.param(n - 1), 9.0);
        assert_eq!(m.biases()[1][1], 9.0);
        m.set_param(48, -1.0);
        assert_eq!(m.biases()[0][0], -1.0);
    }
}
