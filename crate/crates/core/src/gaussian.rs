//! Scalar Gaussian couplings `N(0, [[1, a], [a, 1]])` under the Brownian
//! reference `sigma * B_t`: the Schrodinger-bridge correlation, the drift of
//! the Markovian projection, the correlation that projection produces, and
//! Gaussian conditioning.
//!
//! With `b = sigma^2 + 2a - 2`, the bridge mixture has `Var X_t = 1 + t(1-t) b`
//! and `Cov(X_t, X_1) = t + (1-t) a`. The projected drift is linear,
//! `kappa(t) x` with
//!
//! ```text
//! kappa(t) = (a - 1 - t b) / (1 + t (1 - t) b)
//! ```
//!
//! and with `K(t) = int_0^t kappa`, the projected process solves
//! `X_1 = exp(K(1)) X_0 + noise`, so the correlation it produces is
//! `f(a) = exp(K(1))`. Marginals are preserved, which pins the noise
//! variance: `exp(2K(1)) (1 + sigma^2 int_0^1 exp(-2K)) = 1`; see
//! [`projected_terminal_variance`].

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// Correlation `a` and diffusion scale `sigma` of a unit-variance Gaussian coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianCouplingSpec {
    corr_alpha: f64,
    sigma: f64,
}

impl GaussianCouplingSpec {
    pub fn new(corr_alpha: f64, sigma: f64) -> Result<Self> {
        if !(corr_alpha > 0.0 && corr_alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "correlation must lie in (0, 1), got {corr_alpha}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { corr_alpha, sigma })
    }

    pub fn corr_alpha(&self) -> f64 {
        self.corr_alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn bracket(&self) -> f64 {
        self.sigma * self.sigma + 2.0 * self.corr_alpha - 2.0
    }
}

/// Correlation of the static Schrodinger bridge between two unit Gaussians:
/// the root in (0, 1) of `1 - a^2 = sigma^2 a`.
pub fn alpha_star(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    // 2 / (s2 + sqrt(s2^2 + 4)) avoids the cancellation in (s2/2)(sqrt(1 + 4/s2^2) - 1)
    2.0 / (s2 + (s2 * s2 + 4.0).sqrt())
}

/// `Var X_t` under the bridge mixture.
pub fn bridge_variance(t: f64, spec: &GaussianCouplingSpec) -> f64 {
    1.0 + t * (1.0 - t) * spec.bracket()
}

pub fn kappa(t: f64, spec: &GaussianCouplingSpec) -> f64 {
    let b = spec.bracket();
    (-1.0 + spec.corr_alpha - t * b) / (1.0 + t * (1.0 - t) * b)
}

/// `E[X_1 | X_t = x_t]` under the bridge mixture.
pub fn posterior_mean(x_t: f64, t: f64, spec: &GaussianCouplingSpec) -> f64 {
    (t + (1.0 - t) * spec.corr_alpha) / bridge_variance(t, spec) * x_t
}

/// Composite Simpson rule with `panels` (even) sub-intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..n {
        let x = a + i as f64 * h;
        if i % 2 == 1 {
            odd += f(x);
        } else {
            even += f(x);
        }
    }
    h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even)
}

pub const QUADRATURE_TOLERANCE: f64 = 1e-9;
const MAX_PANELS: usize = 1 << 20;

/// Simpson with panel doubling and Richardson extrapolation, stopping once
/// the error estimate drops below `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut panels = 16;
    let mut coarse = simpson(&f, a, b, panels);
    loop {
        panels *= 2;
        let fine = simpson(&f, a, b, panels);
        let err = (fine - coarse).abs() / 15.0;
        if err < tol {
            return Ok(fine + (fine - coarse) / 15.0);
        }
        if panels >= MAX_PANELS {
            return Err(Error::Quadrature {
                achieved: err,
                tolerance: tol,
            });
        }
        coarse = fine;
    }
}

/// `K(t) = int_0^t kappa(s) ds`.
pub fn log_gain(t: f64, spec: &GaussianCouplingSpec) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    integrate(|s| kappa(s, spec), 0.0, t, QUADRATURE_TOLERANCE)
}

/// Correlation of `(X_0, X_1)` after one Markovian projection of `N(0, Sigma^a)`.
pub fn f_alpha(spec: &GaussianCouplingSpec) -> Result<f64> {
    Ok(log_gain(1.0, spec)?.exp())
}

/// `Var X_1` of the projected linear SDE started from `N(0, 1)`. Equals 1
/// when the projection is computed correctly; kept as a cross-check of
/// [`f_alpha`].
pub fn projected_terminal_variance(spec: &GaussianCouplingSpec) -> Result<f64> {
    // K on a fine grid by cumulative Simpson, then the outer integral by
    // Simpson over the same grid.
    let n = 2048;
    let h = 1.0 / n as f64;
    let mut k = vec![0.0; n + 1];
    for i in 0..n {
        let a = i as f64 * h;
        k[i + 1] = k[i] + simpson(|s| kappa(s, spec), a, a + h, 8);
    }
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, ki) in k.iter().enumerate().take(n).skip(1) {
        if i % 2 == 1 {
            odd += (-2.0 * ki).exp();
        } else {
            even += (-2.0 * ki).exp();
        }
    }
    let inner = h / 3.0 * (1.0 + (-2.0 * k[n]).exp() + 4.0 * odd + 2.0 * even);
    let s2 = spec.sigma * spec.sigma;
    Ok((2.0 * k[n]).exp() * (1.0 + s2 * inner))
}

/// A multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJoint {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianJoint {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        check_dim(mean.len(), cov.rows)?;
        check_dim(mean.len(), cov.cols)?;
        if cov.max_asymmetry() > 1e-12 {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Conditional law of the unobserved coordinates given `x[observed] = values`.
///
/// Mean `mu_r + S_ro S_oo^{-1} (v - mu_o)`, covariance `S_rr - S_ro S_oo^{-1} S_or`.
pub fn gaussian_condition(joint: &GaussianJoint, observed: &[usize], values: &[f64]) -> Result<GaussianJoint> {
    check_dim(observed.len(), values.len())?;
    let n = joint.dim();
    if observed.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument("observed index out of range".into()));
    }
    let rest: Vec<usize> = (0..n).filter(|i| !observed.contains(i)).collect();
    let s_oo = joint.cov.select(observed, observed);
    let s_ro = joint.cov.select(&rest, observed);
    let s_rr = joint.cov.select(&rest, &rest);
    let chol = Cholesky::factor(&s_oo)?;
    let resid: Vec<f64> = observed.iter().zip(values).map(|(&i, v)| v - joint.mean[i]).collect();
    let w = chol.solve(&resid)?;
    let shift = s_ro.matvec(&w)?;
    let mean = rest.iter().zip(shift).map(|(&i, s)| joint.mean[i] + s).collect();
    let gain = chol.solve_matrix(&s_ro.transpose())?;
    let reduction = s_ro.matmul(&gain)?;
    let mut cov = s_rr;
    for (c, r) in cov.data.iter_mut().zip(&reduction.data) {
        *c -= r;
    }
    // symmetrise rounding noise
    for i in 0..cov.rows {
        for j in 0..i {
            let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
    }
    Ok(GaussianJoint { mean, cov })
}

/// Joint law of `(X_0, X_t, X_1)` under the bridge mixture of `N(0, Sigma^a)`.
pub fn path_joint(t: f64, spec: &GaussianCouplingSpec) -> GaussianJoint {
    let a = spec.corr_alpha;
    let c0t = (1.0 - t) + t * a;
    let ct1 = t + (1.0 - t) * a;
    let vt = bridge_variance(t, spec);
    let cov = Matrix {
        rows: 3,
        cols: 3,
        data: vec![1.0, c0t, a, c0t, vt, ct1, a, ct1, 1.0],
    };
    GaussianJoint {
        mean: vec![0.0; 3],
        cov,
    }
}

/// The two sides of the score identity relating the augmented drift of the
/// time-reversed process to the denoising-bridge drift, both as functions of
/// `x_t` at fixed `x_1`:
///
/// ```text
/// lhs = d/dx_t log Q_t(x_t) + E_{X_0 | x_t, x_1}[ d/dx_t log Q_{0|t}(X_0 | x_t) ]
/// rhs = d/dx_t log P_{t|1}(x_t | x_1) - d/dx_t log Q_{1|t}(x_1 | x_t)
/// ```
///
/// The reference `Q` starts from `N(0, 1)`. Every term comes from
/// [`gaussian_condition`] on an explicit joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreIdentity {
    pub reference_score: f64,
    pub expected_backward_score: f64,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn score_identity(spec: &GaussianCouplingSpec, t: f64, x_t: f64, x1: f64) -> Result<ScoreIdentity> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!("time {t} must lie in (0, 1)")));
    }
    let s2 = spec.sigma * spec.sigma;

    // reference (X_0, X_t) with X_0 ~ N(0, 1)
    let reference = GaussianJoint {
        mean: vec![0.0, 0.0],
        cov: Matrix {
            rows: 2,
            cols: 2,
            data: vec![1.0, 1.0, 1.0, 1.0 + s2 * t],
        },
    };
    let q_t = GaussianJoint {
        mean: vec![0.0],
        cov: reference.cov.select(&[1], &[1]),
    };
    let reference_score = -(x_t - q_t.mean[0]) / q_t.cov[(0, 0)];

    // Q_{0|t}(x0 | x_t) = N(g x_t + c, v); its x_t-gradient is g (x0 - g x_t - c) / v
    let at_zero = gaussian_condition(&reference, &[1], &[0.0])?;
    let at_one = gaussian_condition(&reference, &[1], &[1.0])?;
    let gain = at_one.mean[0] - at_zero.mean[0];
    let backward = gaussian_condition(&reference, &[1], &[x_t])?;
    let v = backward.cov[(0, 0)];

    let joint = path_joint(t, spec);
    let posterior = gaussian_condition(&joint, &[1, 2], &[x_t, x1])?;
    let expected_backward_score = gain * (posterior.mean[0] - backward.mean[0]) / v;

    let marginal = GaussianJoint {
        mean: vec![0.0, 0.0],
        cov: joint.cov.select(&[1, 2], &[1, 2]),
    };
    let given_end = gaussian_condition(&marginal, &[1], &[x1])?;
    let forward_score = -(x_t - given_end.mean[0]) / given_end.cov[(0, 0)];
    let bridge_score = (x1 - x_t) / (s2 * (1.0 - t));

    let lhs = reference_score + expected_backward_score;
    let rhs = forward_score - bridge_score;
    Ok(ScoreIdentity {
        reference_score,
        expected_backward_score,
        lhs,
        rhs,
    })
}

/// `|lhs - rhs|` of [`score_identity`].
pub fn prop4_residual(spec: &GaussianCouplingSpec, t: f64, x_t: f64, x1: f64) -> Result<f64> {
    let s = score_identity(spec, t, x_t, x1)?;
    Ok((s.lhs - s.rhs).abs())
}
