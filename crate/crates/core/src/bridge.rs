//! Brownian-bridge closed forms for the reference process `sigma * B_t`.
//!
//! The bridge pinned at `(0, x0)` and `(1, x1)` has mean `(1-t) x0 + t x1`
//! and per-coordinate variance `sigma^2 t (1-t)`. Its conditional
//! `Q_{1|t}(. | x_t)` is `N(x_t, sigma^2 (1-t) I)`, which gives the score and
//! the drift used at inference time.

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// Reference process parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSpec {
    sigma: f64,
    dim: usize,
}

impl BridgeSpec {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        Ok(Self { sigma, dim })
    }

    /// Zero-noise spec, only for checking the deterministic skeleton of the
    /// integrators.
    #[cfg(test)]
    pub(crate) fn noiseless(dim: usize) -> Self {
        Self { sigma: 0.0, dim }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Draw `X_t` from the bridge between `x0` and `x1`.
///
/// Exact at both ends: the noise coefficient vanishes at `t = 0` and `t = 1`.
pub fn sample_bridge_point(
    spec: &BridgeSpec,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_dim(spec.dim, x0.len())?;
    check_dim(spec.dim, x1.len())?;
    check_time(t)?;
    let mut out = vec![0.0; spec.dim];
    bridge_point_into(spec.sigma, x0, x1, t, stream, &mut out);
    Ok(out)
}

pub(crate) fn bridge_point_into(sigma: f64, x0: &[f64], x1: &[f64], t: f64, stream: &mut RngStream, out: &mut [f64]) {
    let noise = sigma * (t * (1.0 - t)).sqrt();
    for ((o, a), b) in out.iter_mut().zip(x0).zip(x1) {
        let z = stream.standard_normal();
        *o = if t == 0.0 {
            *a
        } else if t == 1.0 {
            *b
        } else {
            (1.0 - t) * a + t * b + noise * z
        };
    }
}

/// Jointly draw `(X_s, X_t)`, `s <= t`, from the same bridge.
///
/// `X_s` is drawn as in [`sample_bridge_point`]; `X_t` then comes from the
/// sub-bridge pinned at `(s, X_s)` and `(1, x1)`.
pub fn sample_bridge_pair(
    spec: &BridgeSpec,
    x0: &[f64],
    x1: &[f64],
    s: f64,
    t: f64,
    stream: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(spec.dim, x0.len())?;
    check_dim(spec.dim, x1.len())?;
    check_time(s)?;
    check_time(t)?;
    if s > t {
        return Err(Error::InvalidArgument(format!(
            "pair times out of order: s = {s} > t = {t}"
        )));
    }
    let mut xs = vec![0.0; spec.dim];
    let mut xt = vec![0.0; spec.dim];
    bridge_pair_into(spec.sigma, x0, x1, s, t, stream, &mut xs, &mut xt);
    Ok((xs, xt))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bridge_pair_into(
    sigma: f64,
    x0: &[f64],
    x1: &[f64],
    s: f64,
    t: f64,
    stream: &mut RngStream,
    xs: &mut [f64],
    xt: &mut [f64],
) {
    bridge_point_into(sigma, x0, x1, s, stream, xs);
    if s == 1.0 {
        xt.copy_from_slice(x1);
        return;
    }
    let w = (t - s) / (1.0 - s);
    let noise = sigma * ((t - s) * (1.0 - t) / (1.0 - s)).sqrt();
    for ((o, a), b) in xt.iter_mut().zip(xs.iter()).zip(x1) {
        let z = stream.standard_normal();
        *o = if t == s {
            *a
        } else if t == 1.0 {
            *b
        } else {
            a + w * (b - a) + noise * z
        };
    }
}

/// Drift `(x1_hat - x_t) / (1 - t)` of the bridge toward a predicted endpoint.
pub fn bridge_drift(x1_hat: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(x1_hat.len(), x_t.len())?;
    if !(t < 1.0) {
        return Err(Error::SingularTime(t));
    }
    let h = 1.0 - t;
    Ok(x1_hat.iter().zip(x_t).map(|(a, b)| (a - b) / h).collect())
}

/// `grad_{x_t} log Q_{1|t}(x1 | x_t) = (x1 - x_t) / (sigma^2 (1 - t))`.
pub fn bridge_score(x1: &[f64], x_t: &[f64], t: f64, spec: &BridgeSpec) -> Result<Vec<f64>> {
    check_dim(x1.len(), x_t.len())?;
    if !(t < 1.0) {
        return Err(Error::SingularTime(t));
    }
    let var = spec.sigma * spec.sigma * (1.0 - t);
    Ok(x1.iter().zip(x_t).map(|(a, b)| (a - b) / var).collect())
}
