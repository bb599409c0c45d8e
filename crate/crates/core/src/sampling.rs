//! Simulating the learned bridge from initial points.
//!
//! Two integrators on the uniform grid `t_i = i / N`:
//!
//! * `bridge_posterior` draws `X_{t+h}` from the Brownian bridge between
//!   `(t, X_t)` and `(1, x1_hat)`. The last step lands on `x1_hat` exactly.
//! * `euler_maruyama` steps `X += h (x1_hat - X) / (1 - t) + sigma sqrt(h) Z`
//!   up to `1 - eps` and then jumps to the prediction made there.
//!
//! Each path draws its noise from its own stream, `stream.split(path_index)`,
//! so results do not depend on how paths are batched.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeSpec;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Points;
use crate::nets::{CondMode, MlpModel};
use crate::rng::RngStream;
use crate::training::PairedBatch;

/// Anything that predicts the endpoint from the current state.
pub trait EndpointPredictor {
    fn state_dim(&self) -> usize;
    fn cond_mode(&self) -> CondMode;
    /// Predictions for every row of `x_t` at the common time `t`.
    fn predict_rows(&self, x_t: &Points, cond: Option<&Points>, t: f64) -> Result<Points>;
}

impl EndpointPredictor for MlpModel {
    fn state_dim(&self) -> usize {
        MlpModel::state_dim(self)
    }

    fn cond_mode(&self) -> CondMode {
        MlpModel::cond_mode(self)
    }

    fn predict_rows(&self, x_t: &Points, cond: Option<&Points>, t: f64) -> Result<Points> {
        self.predict_batch(x_t, cond, &vec![t; x_t.len()])
    }
}

/// Predictor defined by a closure `(x_t, cond, t) -> x1_hat`, for analytic oracles.
pub struct FnPredictor<F> {
    dim: usize,
    mode: CondMode,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&[f64], Option<&[f64]>, f64) -> Vec<f64>,
{
    pub fn new(dim: usize, mode: CondMode, f: F) -> Self {
        Self { dim, mode, f }
    }
}

impl<F> EndpointPredictor for FnPredictor<F>
where
    F: Fn(&[f64], Option<&[f64]>, f64) -> Vec<f64>,
{
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn cond_mode(&self) -> CondMode {
        self.mode
    }

    fn predict_rows(&self, x_t: &Points, cond: Option<&Points>, t: f64) -> Result<Points> {
        let mut out = Points::with_capacity(self.dim, x_t.len());
        for i in 0..x_t.len() {
            out.push(&(self.f)(x_t.row(i), cond.map(|c| c.row(i)), t))?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    EulerMaruyama,
    #[default]
    BridgePosterior,
}

impl std::str::FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" => Ok(Self::EulerMaruyama),
            "bridge_posterior" => Ok(Self::BridgePosterior),
            other => Err(Error::InvalidArgument(format!("unknown integrator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub num_steps: usize,
    #[serde(default)]
    pub integrator: Integrator,
    /// Euler-Maruyama stops at `1 - t_clamp`; defaults to one step.
    #[serde(default)]
    pub t_clamp: Option<f64>,
}

impl SamplerConfig {
    pub fn new(num_steps: usize, integrator: Integrator) -> Self {
        Self {
            num_steps,
            integrator,
            t_clamp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::InvalidArgument("num_steps must be at least 1".into()));
        }
        if let Some(eps) = self.t_clamp {
            if !(eps > 0.0 && eps <= 1.0 / self.num_steps as f64) {
                return Err(Error::InvalidArgument(format!(
                    "t_clamp {eps} must lie in (0, 1/num_steps]"
                )));
            }
        }
        Ok(())
    }

    /// Clamp measured in grid steps, exactly 1 by default.
    fn clamp_steps(&self) -> f64 {
        self.t_clamp.map_or(1.0, |eps| eps * self.num_steps as f64)
    }
}

/// One simulated path on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Points,
    /// Endpoint prediction at each grid time; at `t = 1` this is the final state.
    pub endpoint_preds: Points,
}

impl Trajectory {
    pub fn initial(&self) -> &[f64] {
        self.states.row(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.row(self.states.len() - 1)
    }
}

/// Path history used for alpha-conditioning lookups.
struct History {
    states: Vec<Points>,
}

impl History {
    /// State of path `r` at grid position `p` (in steps), interpolating linearly
    /// between stored states. `cur` is the state at position `cur_pos`, which
    /// may lie past the last stored grid point.
    fn lookup(&self, r: usize, p: f64, cur_pos: f64, cur: &Points, out: &mut [f64]) {
        if p >= cur_pos {
            out.copy_from_slice(cur.row(r));
            return;
        }
        let j0 = p.floor() as usize;
        let frac = p - j0 as f64;
        let left = self.states[j0].row(r);
        if frac == 0.0 {
            out.copy_from_slice(left);
            return;
        }
        let (right, right_pos) = if j0 + 1 < self.states.len() {
            (self.states[j0 + 1].row(r), (j0 + 1) as f64)
        } else {
            (cur.row(r), cur_pos)
        };
        let w = frac / (right_pos - j0 as f64);
        for ((o, a), b) in out.iter_mut().zip(left).zip(right) {
            *o = (1.0 - w) * a + w * b;
        }
    }
}

struct Engine<'a, P: EndpointPredictor + ?Sized> {
    predictor: &'a P,
    sigma: f64,
    cfg: &'a SamplerConfig,
}

struct Outcome {
    terminal: Points,
    states: Option<Vec<Points>>,
    preds: Option<Vec<Points>>,
}

impl<P: EndpointPredictor + ?Sized> Engine<'_, P> {
    fn conditioning(&self, x0: &Points, history: &History, p: f64, cur_pos: f64, cur: &Points) -> Option<Points> {
        match self.predictor.cond_mode() {
            CondMode::None => None,
            CondMode::InitialPoint => Some(x0.clone()),
            CondMode::AlphaPoint { alpha } => {
                let d = cur.dim();
                let mut c = vec![0.0; cur.len() * d];
                for (r, row) in c.chunks_exact_mut(d).enumerate() {
                    history.lookup(r, alpha * p, cur_pos, cur, row);
                }
                Some(Points::from_flat(d, c).expect("positive dim"))
            }
        }
    }

    fn check_finite(x: &Points, step: usize) -> Result<()> {
        if x.as_flat().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteState { step })
        }
    }

    fn run(&self, x0: &Points, streams: &mut [RngStream], record: bool) -> Result<Outcome> {
        let n_steps = self.cfg.num_steps;
        let nf = n_steps as f64;
        let d = x0.dim();
        let keep_history = record || matches!(self.predictor.cond_mode(), CondMode::AlphaPoint { .. });
        let mut history = History { states: Vec::new() };
        let mut preds = Vec::new();
        let mut cur = x0.clone();
        Self::check_finite(&cur, 0)?;

        for i in 0..n_steps {
            if keep_history {
                history.states.push(cur.clone());
            }
            let pos = i as f64;
            let t = pos / nf;
            let cond = self.conditioning(x0, &history, pos, pos, &cur);
            let pred = self.predictor.predict_rows(&cur, cond.as_ref(), t)?;
            check_dim(d, pred.dim())?;
            check_dim(cur.len(), pred.len())?;
            let last = i + 1 == n_steps;
            match self.cfg.integrator {
                Integrator::BridgePosterior => {
                    if last {
                        cur = pred.clone();
                    } else {
                        let h = 1.0 / nf;
                        let rem = 1.0 - t;
                        let w = h / rem;
                        let noise = self.sigma * (h * (rem - h) / rem).max(0.0).sqrt();
                        self.advance(&mut cur, &pred, w, noise, streams);
                    }
                }
                Integrator::EulerMaruyama => {
                    if last {
                        // partial step to 1 - eps, then jump to the prediction there
                        let stop = nf - self.cfg.clamp_steps();
                        let h = (stop - pos) / nf;
                        if h > 0.0 {
                            let w = h / (1.0 - t);
                            let noise = self.sigma * h.sqrt();
                            self.advance(&mut cur, &pred, w, noise, streams);
                            Self::check_finite(&cur, i + 1)?;
                            let cond = self.conditioning(x0, &history, stop, stop, &cur);
                            cur = self.predictor.predict_rows(&cur, cond.as_ref(), stop / nf)?;
                        } else {
                            cur = pred.clone();
                        }
                    } else {
                        let h = 1.0 / nf;
                        let w = h / (1.0 - t);
                        let noise = self.sigma * h.sqrt();
                        self.advance(&mut cur, &pred, w, noise, streams);
                    }
                }
            }
            Self::check_finite(&cur, i + 1)?;
            if record {
                preds.push(pred);
            }
        }
        if record {
            history.states.push(cur.clone());
            preds.push(cur.clone());
        }
        Ok(Outcome {
            terminal: cur,
            states: record.then_some(history.states),
            preds: record.then_some(preds),
        })
    }

    fn advance(&self, cur: &mut Points, pred: &Points, w: f64, noise: f64, streams: &mut [RngStream]) {
        for (r, stream) in streams.iter_mut().enumerate() {
            let target = pred.row(r);
            for (x, p) in cur.row_mut(r).iter_mut().zip(target) {
                let z = stream.standard_normal();
                *x += w * (p - *x) + noise * z;
            }
        }
    }
}

fn check_inputs<P: EndpointPredictor + ?Sized>(
    predictor: &P,
    spec: &BridgeSpec,
    cfg: &SamplerConfig,
    x0: &Points,
) -> Result<()> {
    cfg.validate()?;
    check_dim(predictor.state_dim(), x0.dim())?;
    check_dim(spec.dim(), x0.dim())
}

/// Paths per batch in the multi-path entry points.
const CHUNK: usize = 4096;

fn run_chunked<P: EndpointPredictor + ?Sized>(
    predictor: &P,
    spec: &BridgeSpec,
    cfg: &SamplerConfig,
    x0s: &Points,
    stream: &RngStream,
    record: bool,
    mut sink: impl FnMut(usize, Outcome, &Points),
) -> Result<()> {
    check_inputs(predictor, spec, cfg, x0s)?;
    let engine = Engine {
        predictor,
        sigma: spec.sigma(),
        cfg,
    };
    let d = x0s.dim();
    let n = x0s.len();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let chunk = Points::from_flat(d, x0s.as_flat()[start * d..end * d].to_vec())?;
        let mut streams: Vec<RngStream> = (start..end).map(|i| stream.split(i as u64)).collect();
        let out = engine.run(&chunk, &mut streams, record)?;
        sink(start, out, &chunk);
        start = end;
    }
    Ok(())
}

/// Simulate one path driven by `stream`.
pub fn integrate_path<P: EndpointPredictor + ?Sized>(
    predictor: &P,
    spec: &BridgeSpec,
    cfg: &SamplerConfig,
    x0: &[f64],
    stream: &RngStream,
) -> Result<Trajectory> {
    let x = Points::from_flat(x0.len(), x0.to_vec())?;
    check_inputs(predictor, spec, cfg, &x)?;
    let engine = Engine {
        predictor,
        sigma: spec.sigma(),
        cfg,
    };
    let mut streams = [stream.clone()];
    let out = engine.run(&x, &mut streams, true)?;
    Ok(split_trajectories(out, cfg.num_steps, 1).pop().expect("one path"))
}

fn split_trajectories(out: Outcome, n_steps: usize, n_paths: usize) -> Vec<Trajectory> {
    let states = out.states.expect("recorded");
    let preds = out.preds.expect("recorded");
    let d = out.terminal.dim();
    let mut times: Vec<f64> = (0..=n_steps).map(|i| i as f64 / n_steps as f64).collect();
    times[n_steps] = 1.0;
    (0..n_paths)
        .map(|r| {
            let mut s = Points::with_capacity(d, n_steps + 1);
            let mut p = Points::with_capacity(d, n_steps + 1);
            for (a, b) in states.iter().zip(&preds) {
                s.push(a.row(r)).expect("dim");
                p.push(b.row(r)).expect("dim");
            }
            Trajectory {
                times: times.clone(),
                states: s,
                endpoint_preds: p,
            }
        })
        .collect()
}

/// Endpoints for each initial point; path `i` uses `stream.split(i)`.
pub fn sample_endpoints<P: EndpointPredictor + ?Sized>(
    predictor: &P,
    spec: &BridgeSpec,
    cfg: &SamplerConfig,
    x0s: &Points,
    stream: &RngStream,
) -> Result<PairedBatch> {
    let mut x1 = Vec::with_capacity(x0s.as_flat().len());
    run_chunked(predictor, spec, cfg, x0s, stream, false, |_, out, _| {
        x1.extend_from_slice(out.terminal.as_flat());
    })?;
    PairedBatch::new(x0s.clone(), Points::from_flat(x0s.dim(), x1)?)
}

/// Full trajectories, with the same per-path streams as [`sample_endpoints`].
pub fn sample_trajectories<P: EndpointPredictor + ?Sized>(
    predictor: &P,
    spec: &BridgeSpec,
    cfg: &SamplerConfig,
    x0s: &Points,
    stream: &RngStream,
) -> Result<Vec<Trajectory>> {
    let mut all = Vec::with_capacity(x0s.len());
    run_chunked(predictor, spec, cfg, x0s, stream, true, |_, out, chunk| {
        all.extend(split_trajectories(out, cfg.num_steps, chunk.len()));
    })?;
    Ok(all)
}

fn header(s: &mut String, prefix: &str, d: usize) {
    for k in 0..d {
        let _ = write!(s, ",{prefix}_{k}");
    }
}

fn values(s: &mut String, row: &[f64]) {
    for v in row {
        let _ = write!(s, ",{v:e}");
    }
}

/// `path_id,step,t,x_0..,pred_0..`
pub fn trajectories_csv(paths: &[Trajectory], dim: usize) -> String {
    let mut s = String::from("path_id,step,t");
    header(&mut s, "x", dim);
    header(&mut s, "pred", dim);
    s.push('\n');
    for (id, tr) in paths.iter().enumerate() {
        for (step, t) in tr.times.iter().enumerate() {
            let _ = write!(s, "{id},{step},{t:e}");
            values(&mut s, tr.states.row(step));
            values(&mut s, tr.endpoint_preds.row(step));
            s.push('\n');
        }
    }
    s
}

/// `path_id,x0_0..,x1_0..`
pub fn endpoints_csv(batch: &PairedBatch) -> String {
    let d = batch.dim();
    let mut s = String::from("path_id");
    header(&mut s, "x0", d);
    header(&mut s, "x1", d);
    s.push('\n');
    for i in 0..batch.len() {
        let _ = write!(s, "{i}");
        values(&mut s, batch.x0.row(i));
        values(&mut s, batch.x1.row(i));
        s.push('\n');
    }
    s
}

/// Endpoint predictions at grid step `step` of every path:
/// `path_id,t,x0_0..,pred_0..`.
pub fn snapshot_csv(paths: &[Trajectory], step: usize, dim: usize) -> String {
    let mut s = String::from("path_id,t");
    header(&mut s, "x0", dim);
    header(&mut s, "pred", dim);
    s.push('\n');
    for (id, tr) in paths.iter().enumerate() {
        let _ = write!(s, "{id},{:e}", tr.times[step]);
        values(&mut s, tr.initial());
        values(&mut s, tr.endpoint_preds.row(step));
        s.push('\n');
    }
    s
}
