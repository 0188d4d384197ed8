//! Latin hypercube sampling and collocation batches.

use rand::distributions::{Distribution, Open01};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// `n` points in the box `[lo, hi]`, flat with `lo.len()` coordinates each.
///
/// Along every axis the box is cut into `n` equal strata and each stratum
/// receives exactly one point, placed uniformly inside it. Coordinates lie
/// strictly inside the box.
pub fn lhs_sample<R: Rng + ?Sized>(n: usize, lo: &[f64], hi: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::invalid("empty sampling box"));
    }
    let d = lo.len();
    let mut out = vec![0.0; n * d];
    let mut perm: Vec<usize> = (0..n).collect();
    for a in 0..d {
        perm.shuffle(rng);
        let width = hi[a] - lo[a];
        for (i, &s) in perm.iter().enumerate() {
            let u: f64 = Open01.sample(rng);
            let x = lo[a] + width * ((s as f64 + u) / n as f64);
            // Rounding can land on the upper face when u is within an ulp of 1.
            out[i * d + a] = if x < hi[a] { x } else { hi[a] - width * f64::EPSILON };
        }
    }
    Ok(out)
}

/// Collocation points for one loss evaluation.
///
/// Points are flat with `input_dim` coordinates each, ordered `(t, x, ...)`
/// for evolution problems. Boundary points come in groups of
/// `boundary_group` points that enter one loss summand together, for example
/// the two ends of a periodic pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub input_dim: usize,
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
    pub boundary_group: usize,
    /// Spatial coordinates of initial-time points (time omitted).
    pub initial: Vec<f64>,
    pub spatial_dim: usize,
}

impl SampleBatch {
    pub fn interior_count(&self) -> usize {
        self.interior.len() / self.input_dim
    }

    pub fn boundary_count(&self) -> usize {
        if self.boundary_group == 0 {
            0
        } else {
            self.boundary.len() / (self.boundary_group * self.input_dim)
        }
    }

    pub fn initial_count(&self) -> usize {
        if self.spatial_dim == 0 {
            0
        } else {
            self.initial.len() / self.spatial_dim
        }
    }

    /// Initial points with the time coordinate `t = 0` prepended.
    pub fn initial_with_time(&self) -> Vec<f64> {
        self.initial.chunks(self.spatial_dim).flat_map(|x| std::iter::once(0.0).chain(x.iter().copied())).collect()
    }
}
