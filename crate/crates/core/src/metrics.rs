//! Statistics for generated couplings.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{distance, squared_distance, Matrix, Points};
use crate::training::PairedBatch;

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Fraction of pairs whose endpoint lands in the component paired with the
/// component of its initial point. Components are assigned by nearest center.
pub fn pairing_accuracy(
    generated: &PairedBatch,
    source_centers: &[Vec<f64>],
    target_centers: &[Vec<f64>],
    pairing_map: &[usize],
) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("pairing accuracy of an empty batch".into()));
    }
    if source_centers.is_empty() || target_centers.is_empty() {
        return Err(Error::InvalidArgument("no centers given".into()));
    }
    check_dim(source_centers.len(), pairing_map.len())?;
    let mut seen = vec![false; target_centers.len()];
    for &k in pairing_map {
        if k >= target_centers.len() || std::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidArgument("pairing map is not a bijection".into()));
        }
    }
    for c in source_centers.iter().chain(target_centers) {
        check_dim(generated.dim(), c.len())?;
    }
    let hits = (0..generated.len())
        .filter(|&i| {
            let a = nearest(generated.x0.row(i), source_centers);
            let b = nearest(generated.x1.row(i), target_centers);
            pairing_map[a] == b
        })
        .count();
    Ok(hits as f64 / generated.len() as f64)
}

fn cross_sum(a: &Points, b: &Points) -> f64 {
    let mut total = 0.0;
    for x in a.rows() {
        let mut row = 0.0;
        for y in b.rows() {
            row += distance(x, y);
        }
        total += row;
    }
    total
}

fn within_sum(a: &Points) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let x = a.row(i);
        let mut row = 0.0;
        for j in i + 1..a.len() {
            row += distance(x, a.row(j));
        }
        total += row;
    }
    2.0 * total
}

fn canonical_order(a: &Points, b: &Points) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.as_flat()
            .iter()
            .zip(b.as_flat())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Energy distance `2 E|A - B| - E|A - A'| - E|B - B'|`, with every expectation
/// taken over all ordered pairs of the two samples (diagonal included).
///
/// This V-statistic is nonnegative, vanishes when the samples coincide as
/// multisets, and is computed in a canonical order so that swapping the
/// arguments gives a bit-identical result.
pub fn energy_distance(a: &Points, b: &Points) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("energy distance needs nonempty samples".into()));
    }
    check_dim(a.dim(), b.dim())?;
    let (a, b) = if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let between = cross_sum(a, b) / (na * nb);
    let within = within_sum(a) / (na * na) + within_sum(b) / (nb * nb);
    Ok(2.0 * between - within)
}

/// Unbiased cross-covariance `Cov(x0[a], x1[b])` as a `d x d` matrix.
pub fn empirical_cov(batch: &PairedBatch) -> Result<Matrix> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidArgument("covariance needs at least two pairs".into()));
    }
    let d = batch.dim();
    // shift by the first pair so constant columns give exactly zero
    let s0 = batch.x0.row(0).to_vec();
    let s1 = batch.x1.row(0).to_vec();
    let mut m0 = vec![0.0; d];
    let mut m1 = vec![0.0; d];
    let mut cross = Matrix::zeros(d, d);
    for i in 0..n {
        let u: Vec<f64> = batch.x0.row(i).iter().zip(&s0).map(|(x, s)| x - s).collect();
        let v: Vec<f64> = batch.x1.row(i).iter().zip(&s1).map(|(x, s)| x - s).collect();
        for a in 0..d {
            m0[a] += u[a];
            m1[a] += v[a];
            for b in 0..d {
                cross[(a, b)] += u[a] * v[b];
            }
        }
    }
    let nf = n as f64;
    for a in 0..d {
        for b in 0..d {
            cross[(a, b)] = (cross[(a, b)] - m0[a] * m1[b] / nf) / (nf - 1.0);
        }
    }
    Ok(cross)
}

/// Mean squared distance between paired entries.
pub fn endpoint_mse(generated: &Points, reference: &Points) -> Result<f64> {
    check_dim(reference.len(), generated.len())?;
    check_dim(reference.dim(), generated.dim())?;
    if generated.is_empty() {
        return Err(Error::InvalidArgument("endpoint mse of empty sets".into()));
    }
    let total: f64 = generated
        .rows()
        .zip(reference.rows())
        .map(|(a, b)| squared_distance(a, b))
        .sum();
    Ok(total / generated.len() as f64)
}

/// Summary of a generated coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    /// Present when the dataset has component centers.
    pub pairing_accuracy: Option<f64>,
    pub energy_distance_marginal: f64,
    /// Present when ground-truth partners are known.
    pub endpoint_mse: Option<f64>,
    pub empirical_cov: Matrix,
    pub n: usize,
}

impl CouplingReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n={}", self.n);
        match self.pairing_accuracy {
            Some(v) => {
                let _ = writeln!(s, "pairing_accuracy={v}");
            }
            None => s.push_str("pairing_accuracy=NA\n"),
        }
        let _ = writeln!(s, "energy_distance_marginal={}", self.energy_distance_marginal);
        match self.endpoint_mse {
            Some(v) => {
                let _ = writeln!(s, "endpoint_mse={v}");
            }
            None => s.push_str("endpoint_mse=NA\n"),
        }
        for a in 0..self.empirical_cov.rows {
            for b in 0..self.empirical_cov.cols {
                let _ = writeln!(s, "cov_{a}_{b}={}", self.empirical_cov[(a, b)]);
            }
        }
        s
    }

    /// Two-line CSV with the same keys as [`to_text`](Self::to_text).
    pub fn to_csv(&self) -> String {
        let (keys, vals): (Vec<String>, Vec<String>) = self
            .to_text()
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .unzip();
        format!("{}\n{}\n", keys.join(","), vals.join(","))
    }
}
