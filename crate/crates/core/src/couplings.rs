//! Training couplings and the discrete Schrodinger-bridge oracle.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianCouplingSpec;
use crate::linalg::{squared_distance, Matrix, Points};
use crate::rng::RngStream;
use crate::training::PairedBatch;

/// A distribution used as one side of a coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    StandardNormal {
        dim: usize,
    },
    /// Isotropic Gaussian mixture with a shared component std.
    Mixture {
        centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
        std: f64,
    },
}

impl Marginal {
    /// Equal-weight mixture.
    pub fn mixture(centers: Vec<Vec<f64>>, std: f64) -> Self {
        let w = 1.0 / centers.len() as f64;
        let weights = vec![w; centers.len()];
        Marginal::Mixture { centers, weights, std }
    }

    /// Four components on the corners of `[-2, 2]^2`.
    pub fn square_mixture(std: f64) -> Self {
        Self::mixture(
            vec![vec![-2.0, -2.0], vec![-2.0, 2.0], vec![2.0, -2.0], vec![2.0, 2.0]],
            std,
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            Marginal::StandardNormal { dim } => *dim,
            Marginal::Mixture { centers, .. } => centers.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::StandardNormal { dim } if *dim == 0 => {
                Err(Error::InvalidArgument("marginal dim must be positive".into()))
            }
            Marginal::StandardNormal { .. } => Ok(()),
            Marginal::Mixture { centers, weights, std } => {
                if centers.is_empty() || centers[0].is_empty() {
                    return Err(Error::InvalidArgument(
                        "mixture needs at least one non-empty center".into(),
                    ));
                }
                let d = centers[0].len();
                for c in centers {
                    check_dim(d, c.len())?;
                }
                check_dim(centers.len(), weights.len())?;
                if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(
                        "mixture weights must be nonnegative and sum to 1".into(),
                    ));
                }
                if !(*std >= 0.0) {
                    return Err(Error::InvalidArgument("mixture std must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    /// Component centers, if this is a mixture.
    pub fn centers(&self) -> Option<&[Vec<f64>]> {
        match self {
            Marginal::Mixture { centers, .. } => Some(centers),
            Marginal::StandardNormal { .. } => None,
        }
    }

    /// Draw into `out`; returns the component index (0 for a plain Gaussian).
    pub fn sample_into(&self, stream: &mut RngStream, out: &mut [f64]) -> usize {
        match self {
            Marginal::StandardNormal { .. } => {
                stream.fill_gaussian(out);
                0
            }
            Marginal::Mixture { centers, weights, std } => {
                let u = stream.uniform();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                for (o, c) in out.iter_mut().zip(&centers[k]) {
                    *o = c + std * stream.standard_normal();
                }
                k
            }
        }
    }

    pub fn sample(&self, n: usize, stream: &mut RngStream) -> Points {
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        for row in data.chunks_exact_mut(d) {
            self.sample_into(stream, row);
        }
        Points::from_flat(d, data).expect("dimension is positive")
    }
}

/// Mixture-to-mixture coupling: component `i` of the source is sent to
/// component `i` of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePairing {
    pub source_centers: Vec<Vec<f64>>,
    pub target_centers: Vec<Vec<f64>>,
    pub std: f64,
}

impl MixturePairing {
    /// Sources at (-2, -2) and (-2, 2), each sent to the diagonally opposite
    /// target: (-2, -2) -> (2, 2) and (-2, 2) -> (2, -2).
    pub fn crossed(std: f64) -> Self {
        Self {
            source_centers: vec![vec![-2.0, -2.0], vec![-2.0, 2.0]],
            target_centers: vec![vec![2.0, 2.0], vec![2.0, -2.0]],
            std,
        }
    }

    pub fn dim(&self) -> usize {
        self.source_centers[0].len()
    }

    /// Pairs together with the component each pair was drawn from.
    pub fn sample_labeled(&self, n: usize, stream: &mut RngStream) -> (PairedBatch, Vec<usize>) {
        let d = self.dim();
        let k = self.source_centers.len();
        let mut x0 = Vec::with_capacity(n * d);
        let mut x1 = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = stream.index(k);
            for v in &self.source_centers[c] {
                x0.push(v + self.std * stream.standard_normal());
            }
            for v in &self.target_centers[c] {
                x1.push(v + self.std * stream.standard_normal());
            }
            labels.push(c);
        }
        let batch = PairedBatch::new(
            Points::from_flat(d, x0).expect("positive dim"),
            Points::from_flat(d, x1).expect("positive dim"),
        )
        .expect("equal shapes");
        (batch, labels)
    }

    pub fn target_marginal(&self) -> Marginal {
        Marginal::mixture(self.target_centers.clone(), self.std)
    }

    pub fn source_marginal(&self) -> Marginal {
        Marginal::mixture(self.source_centers.clone(), self.std)
    }
}

/// The crossed two-component mixture coupling with component std `std`.
pub fn cross_mixture_sampler(n: usize, std: f64, stream: &mut RngStream) -> PairedBatch {
    MixturePairing::crossed(std).sample_labeled(n, stream).0
}

/// `x0 ~ base`, `x1 = x0 + k Z`.
pub fn entropic_shift_sampler(base: &Marginal, k: f64, n: usize, stream: &mut RngStream) -> Result<PairedBatch> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shift noise k must be nonnegative, got {k}"
        )));
    }
    let d = base.dim();
    let x0 = base.sample(n, stream);
    let mut x1 = x0.clone().into_flat();
    for v in x1.iter_mut() {
        let z = stream.standard_normal();
        if k > 0.0 {
            *v += k * z;
        }
    }
    PairedBatch::new(x0, Points::from_flat(d, x1)?)
}

/// Unit-variance scalar pairs with correlation `spec.corr_alpha()`.
pub fn gaussian_corr_sampler(spec: &GaussianCouplingSpec, n: usize, stream: &mut RngStream) -> PairedBatch {
    let a = spec.corr_alpha();
    let s = (1.0 - a * a).sqrt();
    let mut x0 = Vec::with_capacity(n);
    let mut x1 = Vec::with_capacity(n);
    for _ in 0..n {
        let u = stream.standard_normal();
        let z = stream.standard_normal();
        x0.push(u);
        x1.push(a * u + s * z);
    }
    PairedBatch::new(
        Points::from_flat(1, x0).expect("dim 1"),
        Points::from_flat(1, x1).expect("dim 1"),
    )
    .expect("equal shapes")
}

/// A coupling on finitely many atoms.
#[derive(Debug, Clone)]
pub struct DiscretePlan {
    pub row_points: Points,
    pub col_points: Points,
    /// `rows x cols` transport plan, total mass 1.
    pub plan: Matrix,
    /// Column-marginal l1 violation after each full iteration.
    pub violation_history: Vec<f64>,
}

impl DiscretePlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan
            .data
            .chunks_exact(self.plan.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.plan.cols];
        for row in self.plan.data.chunks_exact(self.plan.cols) {
            for (a, v) in s.iter_mut().zip(row) {
                *a += v;
            }
        }
        s
    }

    pub fn final_violation(&self) -> f64 {
        self.violation_history.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `sum_ij plan[i, j] x_i[a] y_j[b]` for coordinates `a`, `b`.
    pub fn cross_moment(&self, a: usize, b: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..self.plan.rows {
            let xi = self.row_points.row(i)[a];
            let mut row = 0.0;
            for j in 0..self.plan.cols {
                row += self.plan[(i, j)] * self.col_points.row(j)[b];
            }
            total += xi * row;
        }
        total
    }

    /// Correlation of the plan for scalar atoms.
    pub fn correlation(&self) -> f64 {
        let rs = self.row_sums();
        let cs = self.col_sums();
        let mx: f64 = rs.iter().zip(self.row_points.rows()).map(|(w, x)| w * x[0]).sum();
        let my: f64 = cs.iter().zip(self.col_points.rows()).map(|(w, y)| w * y[0]).sum();
        let vx: f64 = rs
            .iter()
            .zip(self.row_points.rows())
            .map(|(w, x)| w * (x[0] - mx).powi(2))
            .sum();
        let vy: f64 = cs
            .iter()
            .zip(self.col_points.rows())
            .map(|(w, y)| w * (y[0] - my).powi(2))
            .sum();
        (self.cross_moment(0, 0) - mx * my) / (vx * vy).sqrt()
    }

    /// Sampler drawing atom pairs with probability `plan[i, j]`.
    pub fn sampler(self) -> PlanSampler {
        let mut cdf = Vec::with_capacity(self.plan.data.len());
        let mut acc = 0.0;
        for v in &self.plan.data {
            acc += v;
            cdf.push(acc);
        }
        PlanSampler { plan: self, cdf }
    }
}

#[derive(Debug, Clone)]
pub struct PlanSampler {
    plan: DiscretePlan,
    cdf: Vec<f64>,
}

impl PlanSampler {
    pub fn plan(&self) -> &DiscretePlan {
        &self.plan
    }

    pub fn sample(&self, n: usize, stream: &mut RngStream) -> PairedBatch {
        let total = *self.cdf.last().unwrap_or(&0.0);
        let cols = self.plan.plan.cols;
        let mut x0 = Points::with_capacity(self.plan.row_points.dim(), n);
        let mut x1 = Points::with_capacity(self.plan.col_points.dim(), n);
        for _ in 0..n {
            let u = stream.uniform() * total;
            let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
            x0.push(self.plan.row_points.row(idx / cols)).expect("dim");
            x1.push(self.plan.col_points.row(idx % cols)).expect("dim");
        }
        PairedBatch::new(x0, x1).expect("equal lengths")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-8
}

impl SinkhornOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }
}

/// Entropic optimal transport with squared-Euclidean cost, in the log domain.
///
/// Potentials are updated columns first, rows last, so the returned plan has
/// exact row marginals; iteration stops once the l1 column violation is
/// below `tol`.
pub fn sinkhorn(
    source: &Points,
    source_weights: &[f64],
    target: &Points,
    target_weights: &[f64],
    opts: &SinkhornOptions,
) -> Result<DiscretePlan> {
    let (n, m) = (source.len(), target.len());
    check_dim(n, source_weights.len())?;
    check_dim(m, target_weights.len())?;
    check_dim(source.dim(), target.dim())?;
    let eps = opts.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    for w in [source_weights, target_weights] {
        if w.is_empty() || w.iter().any(|&v| !(v > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("weights must be positive and sum to 1".into()));
        }
    }

    // scaled cost -C/eps
    let mut neg_cost = vec![0.0; n * m];
    for i in 0..n {
        let xi = source.row(i);
        for j in 0..m {
            neg_cost[i * m + j] = -squared_distance(xi, target.row(j)) / eps;
        }
    }
    let log_a: Vec<f64> = source_weights.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = target_weights.iter().map(|w| w.ln()).collect();
    // potentials divided by eps
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut col_max = vec![0.0; m];
    let mut col_sum = vec![0.0; m];
    let mut history = Vec::new();
    let mut converged = false;

    for iter in 0..=opts.max_iters {
        // log sum_i exp(f_i - C_ij / eps) per column
        col_max.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for i in 0..n {
            let row = &neg_cost[i * m..(i + 1) * m];
            for (mx, c) in col_max.iter_mut().zip(row) {
                *mx = mx.max(f[i] + c);
            }
        }
        col_sum.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let row = &neg_cost[i * m..(i + 1) * m];
            for ((s, c), mx) in col_sum.iter_mut().zip(row).zip(&col_max) {
                *s += (f[i] + c - mx).exp();
            }
        }
        if iter > 0 {
            let violation: f64 = (0..m)
                .map(|j| ((g[j] + col_max[j] + col_sum[j].ln()).exp() - target_weights[j]).abs())
                .sum();
            history.push(violation);
            if violation < opts.tol {
                converged = true;
                break;
            }
            if iter == opts.max_iters {
                break;
            }
        }
        for j in 0..m {
            g[j] = log_b[j] - (col_max[j] + col_sum[j].ln());
        }
        for i in 0..n {
            let row = &neg_cost[i * m..(i + 1) * m];
            let mx = row.iter().zip(&g).fold(f64::NEG_INFINITY, |a, (c, gj)| a.max(c + gj));
            let s: f64 = row.iter().zip(&g).map(|(c, gj)| (c + gj - mx).exp()).sum();
            f[i] = log_a[i] - (mx + s.ln());
        }
    }
    if !converged {
        return Err(Error::SinkhornNotConverged {
            iterations: opts.max_iters,
            violation: history.last().copied().unwrap_or(f64::INFINITY),
        });
    }
    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = (f[i] + g[j] + neg_cost[i * m + j]).exp();
        }
    }
    Ok(DiscretePlan {
        row_points: source.clone(),
        col_points: target.clone(),
        plan,
        violation_history: history,
    })
}

/// Any of the supported training couplings.
#[derive(Debug, Clone)]
pub enum CouplingSampler {
    Mixture(MixturePairing),
    EntropicShift {
        base: Marginal,
        k: f64,
    },
    GaussianCorr(GaussianCouplingSpec),
    Independent {
        source: Marginal,
        target: Marginal,
    },
    Plan(PlanSampler),
    /// Deterministic `x1 = scale * x0` over `base`.
    Scaled {
        base: Marginal,
        scale: f64,
    },
    /// The wrapped coupling with the roles of `x0` and `x1` exchanged.
    Reversed(Box<CouplingSampler>),
}

impl CouplingSampler {
    pub fn dim(&self) -> usize {
        match self {
            CouplingSampler::Mixture(m) => m.dim(),
            CouplingSampler::EntropicShift { base, .. } => base.dim(),
            CouplingSampler::GaussianCorr(_) => 1,
            CouplingSampler::Independent { source, .. } => source.dim(),
            CouplingSampler::Plan(p) => p.plan().row_points.dim(),
            CouplingSampler::Scaled { base, .. } => base.dim(),
            CouplingSampler::Reversed(inner) => inner.dim(),
        }
    }

    pub fn sample(&self, n: usize, stream: &mut RngStream) -> PairedBatch {
        match self {
            CouplingSampler::Mixture(m) => m.sample_labeled(n, stream).0,
            CouplingSampler::EntropicShift { base, k } => {
                entropic_shift_sampler(base, *k, n, stream).expect("validated shift")
            }
            CouplingSampler::GaussianCorr(spec) => gaussian_corr_sampler(spec, n, stream),
            CouplingSampler::Independent { source, target } => {
                let x0 = source.sample(n, stream);
                let x1 = target.sample(n, stream);
                PairedBatch::new(x0, x1).expect("validated marginals")
            }
            CouplingSampler::Plan(p) => p.sample(n, stream),
            CouplingSampler::Scaled { base, scale } => {
                let x0 = base.sample(n, stream);
                let x1 = x0.as_flat().iter().map(|v| scale * v).collect();
                PairedBatch::new(x0.clone(), Points::from_flat(x0.dim(), x1).expect("same dim")).expect("equal shapes")
            }
            CouplingSampler::Reversed(inner) => inner.sample(n, stream).swapped(),
        }
    }

    /// Draws of the initial point alone.
    pub fn sample_sources(&self, n: usize, stream: &mut RngStream) -> Points {
        self.sample(n, stream).x0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::alpha_star;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn cross_mixture_structure() {
        let pairing = MixturePairing::crossed(0.2);
        let (batch, labels) = pairing.sample_labeled(10_000, &mut RngStream::new(0));
        let mut outliers = 0;
        let mut count0 = 0;
        for (i, &c) in labels.iter().enumerate() {
            let d0 = squared_distance(batch.x0.row(i), &pairing.source_centers[c]).sqrt();
            if d0 > 5.0 * 0.2 {
                outliers += 1;
            }
            let d1: Vec<f64> = pairing
                .target_centers
                .iter()
                .map(|t| squared_distance(batch.x1.row(i), t))
                .collect();
            let nearest = if d1[0] < d1[1] { 0 } else { 1 };
            assert_eq!(nearest, c);
            if c == 0 {
                count0 += 1;
            }
        }
        assert!(outliers <= 1);
        let frac = count0 as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn entropic_shift_moments() {
        let base = Marginal::StandardNormal { dim: 1 };
        let b0 = entropic_shift_sampler(&base, 0.0, 100, &mut RngStream::new(1)).unwrap();
        assert_eq!(b0.x0, b0.x1);

        let n = 100_000;
        let b = entropic_shift_sampler(&base, 1.0, n, &mut RngStream::new(2)).unwrap();
        let diff: Vec<f64> = b.x0.rows().zip(b.x1.rows()).map(|(a, c)| c[0] - a[0]).collect();
        let (_, var) = mean_var(&diff);
        // Var of the sample variance of N(0,1) is about 2/n
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var}");

        let x0 = b.x0.column(0);
        let x1 = b.x1.column(0);
        let (m0, v0) = mean_var(&x0);
        let (m1, _) = mean_var(&x1);
        let cov = x0.iter().zip(&x1).map(|(a, c)| (a - m0) * (c - m1)).sum::<f64>() / (n as f64 - 1.0);
        // Cov(x0, x1) - Var(x0) = Cov(x0, k Z), whose sd is about sqrt(1/n)
        assert!((cov - v0).abs() < 4.0 / (n as f64).sqrt(), "{cov} vs {v0}");
        assert!(entropic_shift_sampler(&base, -1.0, 1, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn gaussian_corr_moments() {
        let spec = GaussianCouplingSpec::new(0.618, 1.0).unwrap();
        let n = 100_000;
        let b = gaussian_corr_sampler(&spec, n, &mut RngStream::new(3));
        let x0 = b.x0.column(0);
        let x1 = b.x1.column(0);
        let (m0, v0) = mean_var(&x0);
        let (m1, v1) = mean_var(&x1);
        let rho =
            x0.iter().zip(&x1).map(|(a, c)| (a - m0) * (c - m1)).sum::<f64>() / (n as f64 - 1.0) / (v0 * v1).sqrt();
        let se = (1.0 - 0.618f64 * 0.618).powi(1) / (n as f64).sqrt();
        assert!((rho - 0.618).abs() < 4.0 * se, "{rho}");
        assert!((v1 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{v1}");
    }

    #[test]
    fn mixture_marginal_moments() {
        let m = Marginal::square_mixture(0.3);
        let n = 100_000;
        let p = m.sample(n, &mut RngStream::new(4));
        // each coordinate is +-2 with equal odds plus N(0, 0.09): mean 0, var 4.09
        for j in 0..2 {
            let (mean, var) = mean_var(&p.column(j));
            let sd = 4.09f64.sqrt();
            assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt(), "{mean}");
            // fourth central moment is at most about 16.5, so sd(var) <= sqrt(16.5 / n)
            assert!((var - 4.09).abs() < 4.0 * (16.5 / n as f64).sqrt(), "{var}");
        }
    }

    #[test]
    fn sinkhorn_high_temperature_is_product() {
        let x = Points::from_flat(1, vec![0.0, 1.0]).unwrap();
        let y = Points::from_flat(1, vec![0.5, -1.0]).unwrap();
        let plan = sinkhorn(&x, &[0.5, 0.5], &y, &[0.5, 0.5], &SinkhornOptions::new(1e3)).unwrap();
        for v in &plan.plan.data {
            assert!((v - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn sinkhorn_low_temperature_is_near_permutation() {
        // cost [[0, 1], [1, 0]] from atoms at 0 and 1
        let x = Points::from_flat(1, vec![0.0, 1.0]).unwrap();
        let plan = sinkhorn(&x, &[0.5, 0.5], &x, &[0.5, 0.5], &SinkhornOptions::new(1e-2)).unwrap();
        assert!(plan.plan[(0, 0)] >= 0.499);
        assert!(plan.plan[(1, 1)] >= 0.499);
    }

    #[test]
    fn sinkhorn_marginals_and_monotone_violation() {
        let mut r = RngStream::new(6);
        let x = Points::from_flat(1, r.draw_gaussian(300)).unwrap();
        let y = Points::from_flat(1, r.draw_gaussian(200)).unwrap();
        let a = vec![1.0 / 300.0; 300];
        let b = vec![1.0 / 200.0; 200];
        let plan = sinkhorn(&x, &a, &y, &b, &SinkhornOptions::new(0.5)).unwrap();
        assert!(plan.plan.data.iter().all(|&v| v >= 0.0));
        for (s, w) in plan.row_sums().iter().zip(&a) {
            assert!((s - w).abs() < 1e-8);
        }
        let col_violation: f64 = plan.col_sums().iter().zip(&b).map(|(s, w)| (s - w).abs()).sum();
        assert!(col_violation < 1e-8);
        for w in plan.violation_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let mut r = RngStream::new(7);
        let x = Points::from_flat(1, r.draw_gaussian(50)).unwrap();
        let w = vec![0.02; 50];
        let opts = SinkhornOptions {
            epsilon: 0.01,
            max_iters: 2,
            tol: 1e-12,
        };
        match sinkhorn(&x, &w, &x.clone(), &w, &opts) {
            Err(Error::SinkhornNotConverged { iterations, violation }) => {
                assert_eq!(iterations, 2);
                assert!(violation > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plan_sampler_hits_support() {
        let x = Points::from_flat(1, vec![0.0, 1.0]).unwrap();
        let plan = sinkhorn(&x, &[0.5, 0.5], &x, &[0.5, 0.5], &SinkhornOptions::new(1e-2)).unwrap();
        let s = plan.sampler();
        let b = s.sample(1000, &mut RngStream::new(0));
        let same = b.x0.rows().zip(b.x1.rows()).filter(|(a, c)| a == c).count();
        assert!(same >= 990);
    }

    #[test]
    fn sinkhorn_gaussian_correlation_small() {
        let mut r = RngStream::new(8);
        let n = 500;
        let x = Points::from_flat(1, r.draw_gaussian(n)).unwrap();
        let y = Points::from_flat(1, r.draw_gaussian(n)).unwrap();
        let w = vec![1.0 / n as f64; n];
        let plan = sinkhorn(&x, &w, &y, &w, &SinkhornOptions::new(2.0)).unwrap();
        assert!((plan.correlation() - alpha_star(1.0)).abs() < 0.1);
    }
}
