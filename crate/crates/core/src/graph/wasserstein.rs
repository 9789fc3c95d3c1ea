//! 1-Wasserstein distance between one-dimensional empirical distributions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hcm::ChannelMatrix;

/// Sorted sample of non-negative magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("empirical distribution"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("empirical distribution"));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(EmpiricalDistribution { samples })
    }

    /// Distribution of the entry magnitudes `|h|` of a channel matrix.
    pub fn from_matrix(h: &ChannelMatrix) -> Result<Self> {
        Self::new(h.entries.iter().map(|z| z.norm()).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `W1(u, v) = integral |F_u(z) - F_v(z)| dz`, integrated exactly over the
/// merged breakpoints of the two step CDFs.
pub fn wasserstein_1d(u: &EmpiricalDistribution, v: &EmpiricalDistribution) -> f64 {
    let (a, b) = (&u.samples, &v.samples);
    if a.len() == b.len() {
        // Equal sizes: the CDF difference integrates to the mean gap between
        // order statistics.
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    cdf_l1(a, b)
}

fn cdf_l1(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// The merged-breakpoint integral regardless of sample sizes.
pub fn wasserstein_1d_integral(u: &EmpiricalDistribution, v: &EmpiricalDistribution) -> f64 {
    cdf_l1(&u.samples, &v.samples)
}
