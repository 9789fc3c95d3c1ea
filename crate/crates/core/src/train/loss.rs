//! Reconstruction, smoothness and prior-consistency losses with gradients.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{decode_backward, decode_features, FeatureMode, SpatialGraph, Standardizer};
use crate::hcm::ChannelMatrix;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    /// Smoothness weight.
    pub lambda: f64,
    /// Prior weight.
    pub eta: f64,
    /// Stabilizer of the per-node normalisation.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.1, eta: 0.1, eps: 1e-12 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.eta >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("loss weights must be >= 0 and eps > 0".into()));
        }
        Ok(())
    }
}

/// Mean over `set` of `||h_hat_i - h_i||^2 / (||h_i||^2 + eps)`.
pub fn loss_reconstruction(pred: &[ChannelMatrix], truth: &[ChannelMatrix], set: &[usize], eps: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("observed set"));
    }
    Ok(set.iter().map(|&i| pred[i].distance_sqr(&truth[i]) / (truth[i].power() + eps)).sum::<f64>() / set.len() as f64)
}

/// `(lambda / |E|) sum_edges w_ij ||y_i - y_j||^2`, edges counted once.
pub fn loss_smoothness(y: &Matrix, graph: &SpatialGraph, lambda: f64) -> f64 {
    if graph.n_edges() == 0 || lambda == 0.0 {
        return 0.0;
    }
    let s: f64 = graph
        .edges()
        .iter()
        .map(|e| e.weight * y.row(e.u).iter().zip(y.row(e.v)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    lambda * s / graph.n_edges() as f64
}

/// The same quantity as `(lambda / |E|) tr(Y^T L Y)`.
pub fn loss_smoothness_trace(y: &Matrix, graph: &SpatialGraph, lambda: f64) -> f64 {
    if graph.n_edges() == 0 || lambda == 0.0 {
        return 0.0;
    }
    let ly = graph.laplacian_mul(&y.data, y.cols);
    lambda * y.data.iter().zip(&ly).map(|(a, b)| a * b).sum::<f64>() / graph.n_edges() as f64
}

/// `(eta / |set|) sum_j ||y_j - prior_j||^2`.
pub fn loss_prior(y: &Matrix, priors: &[Option<Vec<f64>>], set: &[usize], eta: f64) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for &j in set {
        let p = priors[j].as_ref().ok_or_else(|| Error::Config(alloc::format!("missing prior for node {j}")))?;
        s += y.row(j).iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(eta * s / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParts {
    pub reconstruction: f64,
    pub smoothness: f64,
    pub prior: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.smoothness + self.prior
    }
}

/// Which terms contribute to a combined evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub reconstruction: bool,
    pub smoothness: bool,
    pub prior: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { reconstruction: true, smoothness: true, prior: true };
}

/// Everything needed to score network outputs (standardized rows) and
/// back-propagate the loss to them.
#[derive(Debug, Clone)]
pub struct LossContext<'a> {
    pub graph: &'a SpatialGraph,
    pub standardizer: &'a Standardizer,
    pub mode: FeatureMode,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    /// Ground truth per node; only nodes in `supervised` are read.
    pub truth: &'a [ChannelMatrix],
    pub supervised: &'a [usize],
    /// Standardized prior targets, indexed by node.
    pub priors: &'a [Option<Vec<f64>>],
    pub prior_set: &'a [usize],
    pub weights: LossWeights,
    pub terms: Terms,
}

impl LossContext<'_> {
    pub fn decode_row(&self, row: &[f64]) -> Result<ChannelMatrix> {
        decode_features(&self.standardizer.invert(row), self.mode, self.n_antennas, self.n_subcarriers)
    }

    /// Loss parts (all three, regardless of `terms`) and the gradient of the
    /// selected terms' sum with respect to `output`.
    pub fn evaluate(&self, output: &Matrix) -> Result<(LossParts, Matrix)> {
        let w = self.weights;
        let mut grad = Matrix::zeros(output.rows, output.cols);
        let mut parts = LossParts::default();

        if self.supervised.is_empty() {
            return Err(Error::Empty("supervised set"));
        }
        let scale = 1.0 / self.supervised.len() as f64;
        let mut cgrad = vec![Complex64::new(0.0, 0.0); self.n_antennas * self.n_subcarriers];
        let mut phys_grad = vec![0.0; output.cols];
        for &i in self.supervised {
            let phys = self.standardizer.invert(output.row(i));
            let h_hat = decode_features(&phys, self.mode, self.n_antennas, self.n_subcarriers)?;
            let h = &self.truth[i];
            let denom = h.power() + w.eps;
            parts.reconstruction += scale * h_hat.distance_sqr(h) / denom;
            if self.terms.reconstruction {
                for ((g, a), b) in cgrad.iter_mut().zip(&h_hat.entries).zip(&h.entries) {
                    *g = (a - b) * (2.0 * scale / denom);
                }
                decode_backward(&phys, self.mode, &cgrad, &mut phys_grad);
                for ((gr, pg), sd) in grad.row_mut(i).iter_mut().zip(&phys_grad).zip(&self.standardizer.std) {
                    *gr += pg * sd;
                }
            }
        }

        let n_edges = self.graph.n_edges();
        if n_edges > 0 && w.lambda > 0.0 {
            let ly = self.graph.laplacian_mul(&output.data, output.cols);
            let c = w.lambda / n_edges as f64;
            parts.smoothness = c * output.data.iter().zip(&ly).map(|(a, b)| a * b).sum::<f64>();
            if self.terms.smoothness {
                grad.data.iter_mut().zip(&ly).for_each(|(g, l)| *g += 2.0 * c * l);
            }
        }

        if !self.prior_set.is_empty() && w.eta > 0.0 {
            let c = w.eta / self.prior_set.len() as f64;
            for &j in self.prior_set {
                let p = self.priors[j]
                    .as_ref()
                    .ok_or_else(|| Error::Config(alloc::format!("missing prior for node {j}")))?;
                let row = output.row(j);
                parts.prior += c * row.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                if self.terms.prior {
                    for ((g, a), b) in grad.row_mut(j).iter_mut().zip(row).zip(p) {
                        *g += 2.0 * c * (a - b);
                    }
                }
            }
        }
        Ok((parts, grad))
    }
}
