//! Node features, IDW priors and the Wasserstein-KNN spatial graph.

mod build;
mod features;
mod idw;
mod standardize;
mod wasserstein;

pub use build::{build_wknn_graph, los_indicator, EdgeFeature, EdgeMetric, GraphConfig, GraphEdge, SpatialGraph};
pub use features::{decode_backward, decode_features, encode_features, FeatureMode};
pub use idw::{idw_prior, idw_priors, idw_weights, weighted_sum, COINCIDENT_M};
pub use standardize::{Standardizer, STD_FLOOR};
pub use wasserstein::{wasserstein_1d, wasserstein_1d_integral, EmpiricalDistribution};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hcm::ChannelMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeature {
    /// Input features: ground truth for observed nodes, prior otherwise.
    pub x0: Vec<f64>,
    pub observed: bool,
    pub coord: (f64, f64),
    /// Encoded IDW prior, unobserved nodes only.
    pub prior: Option<Vec<f64>>,
}

/// How unobserved nodes are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PriorMode {
    #[default]
    Idw,
    /// Zero features and no prior target.
    Zero,
}

#[derive(Debug, Clone)]
pub struct PreparedNodes {
    pub nodes: Vec<NodeFeature>,
    pub distributions: Vec<EmpiricalDistribution>,
    /// Decoded priors for unobserved nodes.
    pub priors: Vec<Option<ChannelMatrix>>,
}

/// Builds node features. Only entries of `truth` flagged in `observed` are
/// read.
pub fn prepare_nodes(
    coords: &[(f64, f64)],
    truth: &[ChannelMatrix],
    observed: &[bool],
    mode: FeatureMode,
    idw_power: f64,
    prior_mode: PriorMode,
) -> Result<PreparedNodes> {
    let n = coords.len();
    if truth.len() != n || observed.len() != n {
        return Err(Error::Shape("coords, truth and mask lengths differ".into()));
    }
    let first = observed.iter().position(|&o| o).ok_or(Error::Empty("observed set"))?;
    let (na, nl) = (truth[first].n_antennas, truth[first].n_subcarriers);
    let priors = match prior_mode {
        PriorMode::Idw => idw_priors(coords, truth, observed, idw_power)?,
        PriorMode::Zero => vec![None; n],
    };
    let mut nodes = Vec::with_capacity(n);
    let mut distributions = Vec::with_capacity(n);
    for k in 0..n {
        let (x0, prior, h) = if observed[k] {
            (encode_features(&truth[k], mode), None, truth[k].clone())
        } else {
            match &priors[k] {
                Some(p) => {
                    let x = encode_features(p, mode);
                    (x.clone(), Some(x), p.clone())
                }
                None => {
                    let z = ChannelMatrix::zeros(na, nl);
                    (encode_features(&z, mode), None, z)
                }
            }
        };
        distributions.push(EmpiricalDistribution::from_matrix(&h)?);
        nodes.push(NodeFeature { x0, observed: observed[k], coord: coords[k], prior });
    }
    Ok(PreparedNodes { nodes, distributions, priors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn unobserved_truth_is_never_read() {
        let coords = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        let a = ChannelMatrix::from_entries(1, 2, vec![Complex64::new(1.0, 0.0); 2]).unwrap();
        let b = ChannelMatrix::from_entries(1, 2, vec![Complex64::new(3.0, 1.0); 2]).unwrap();
        let secret = ChannelMatrix::from_entries(1, 2, vec![Complex64::new(99.0, 0.0); 2]).unwrap();
        let truth = [a, secret.clone(), b];
        let p = prepare_nodes(&coords, &truth, &[true, false, true], FeatureMode::Concat, 2.0, PriorMode::Idw)
            .unwrap();
        assert_eq!(p.nodes[1].x0, vec![2.0, 2.0, 0.5, 0.5]);
        assert_eq!(p.nodes[1].prior.as_ref(), Some(&p.nodes[1].x0));
        let mut changed = truth.clone();
        changed[1] = ChannelMatrix::zeros(1, 2);
        let q = prepare_nodes(&coords, &changed, &[true, false, true], FeatureMode::Concat, 2.0, PriorMode::Idw)
            .unwrap();
        assert_eq!(p.nodes, q.nodes);
        let z = prepare_nodes(&coords, &truth, &[true, false, true], FeatureMode::Concat, 2.0, PriorMode::Zero)
            .unwrap();
        assert_eq!(z.nodes[1].x0, vec![0.0; 4]);
        assert!(z.nodes[1].prior.is_none());
    }
}
