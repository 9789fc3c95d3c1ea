//! Training loop: composite loss, AdamW, cosine schedule, early stopping.
//!
//! Observed nodes carry their ground truth as input, so fitting them
//! directly teaches the network nothing about interpolation. Each epoch
//! therefore hides a random subset of the training observations: the
//! hidden nodes are fed IDW priors computed from the remaining ones, exactly
//! like genuinely unobserved nodes at inference time, and the
//! reconstruction loss is taken on them. Observations are hidden in spatial
//! clusters (single linkage at 1.5 times the median nearest-observation
//! spacing) so that a hidden node cannot simply copy an adjacent visible
//! one. A fixed set of clusters is held out for validation.

mod loss;
mod optim;

pub use loss::{
    loss_prior, loss_reconstruction, loss_smoothness, loss_smoothness_trace, LossContext, LossParts, LossWeights,
    Terms,
};
pub use optim::{adamw_step, cosine_lr, global_norm, AdamWConfig, OptimizerState};

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::gnn::{self, GnnDims, GnnParams, TrainPass};
use crate::graph::{decode_features, encode_features, FeatureMode, NodeFeature, PriorMode, SpatialGraph, Standardizer};
use crate::hcm::ChannelMatrix;
use crate::linalg::Matrix;
use crate::metrics::nmse;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub filter_hidden: usize,
    pub dropout: f64,
    pub optimizer: AdamWConfig,
    pub max_epochs: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub loss: LossWeights,
    /// Fraction of observed nodes held out for early stopping.
    pub val_fraction: f64,
    /// Fraction of training observation clusters hidden per epoch (at
    /// least one). Small values keep the gaps around hidden nodes close to
    /// the spacing between observations.
    pub mask_fraction: f64,
    pub neighbor_sample: Option<usize>,
    pub idw_power: f64,
    pub prior: PriorMode,
    /// Validate every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            layers: 2,
            filter_hidden: 32,
            dropout: 0.1,
            optimizer: AdamWConfig::default(),
            max_epochs: 500,
            patience: 20,
            loss: LossWeights::default(),
            val_fraction: 0.1,
            mask_fraction: 0.1,
            neighbor_sample: None,
            idw_power: 2.0,
            prior: PriorMode::Idw,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return bad("mask_fraction must be in (0, 1)");
        }
        if !(self.optimizer.lr > 0.0) || !(self.optimizer.weight_decay >= 0.0) || !(self.optimizer.clip_norm > 0.0) {
            return bad("lr and clip_norm must be > 0, weight_decay >= 0");
        }
        if self.eval_every == 0 || self.neighbor_sample == Some(0) {
            return bad("eval_every and neighbor_sample must be >= 1");
        }
        if !(self.idw_power > 0.0) {
            return bad("idw_power must be > 0");
        }
        Ok(())
    }

    pub fn dims(&self, feature_dim: usize) -> GnnDims {
        GnnDims { feature_dim, hidden: self.hidden, layers: self.layers, filter_hidden: self.filter_hidden }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRow {
    pub epoch: usize,
    pub losses: LossParts,
    pub val_nmse: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

/// Network parameters with the feature pipeline needed to turn node
/// features into channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: GnnParams,
    pub standardizer: Standardizer,
    pub mode: FeatureMode,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
}

impl TrainedModel {
    /// Standardized input rows and observed flags.
    pub fn inputs(&self, nodes: &[NodeFeature]) -> Result<(Matrix, Vec<bool>)> {
        let f = self.standardizer.dim();
        let mut x = Matrix::zeros(nodes.len(), f);
        for (k, nf) in nodes.iter().enumerate() {
            if nf.x0.len() != f {
                return Err(Error::Shape(alloc::format!("node {k}: feature length {} != {f}", nf.x0.len())));
            }
            x.row_mut(k).copy_from_slice(&self.standardizer.apply(&nf.x0));
        }
        Ok((x, nodes.iter().map(|n| n.observed).collect()))
    }

    pub fn decode(&self, row: &[f64]) -> Result<ChannelMatrix> {
        decode_features(&self.standardizer.invert(row), self.mode, self.n_antennas, self.n_subcarriers)
    }

    /// Predictions for every node of `graph`.
    pub fn predict(&self, graph: &SpatialGraph, nodes: &[NodeFeature]) -> Result<Vec<ChannelMatrix>> {
        let (x, flags) = self.inputs(nodes)?;
        let out = gnn::infer_inductive(graph, &x, &flags, &self.params)?;
        (0..out.rows)
            .map(|k| {
                let mut h = self.decode(out.row(k))?;
                h.node_index = k;
                Ok(h)
            })
            .collect()
    }

    /// Predictions for `targets` only, via their receptive-field subgraph.
    pub fn predict_nodes(
        &self,
        graph: &SpatialGraph,
        nodes: &[NodeFeature],
        targets: &[usize],
    ) -> Result<Vec<ChannelMatrix>> {
        let (x, flags) = self.inputs(nodes)?;
        let out = gnn::infer_nodes(graph, &x, &flags, &self.params, targets)?;
        targets
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let mut h = self.decode(out.row(r))?;
                h.node_index = k;
                Ok(h)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<LogRow>,
    /// Epoch after which the returned parameters were recorded; `None`
    /// when the initial parameters were never beaten.
    pub best_epoch: Option<usize>,
    pub best_val_nmse: Option<f64>,
    pub initial_val_nmse: Option<f64>,
    pub val_nodes: Vec<usize>,
    pub stopped_early: bool,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups observation indices (into `obs`) by single linkage at 1.5 times
/// the median nearest-neighbour spacing.
pub fn observation_clusters(coords: &[(f64, f64)], obs: &[usize]) -> Vec<Vec<usize>> {
    let m = obs.len();
    if m < 2 {
        return obs.iter().map(|&o| vec![o]).collect();
    }
    let d = |a: usize, b: usize| {
        let (p, q) = (coords[obs[a]], coords[obs[b]]);
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
    };
    let mut nearest: Vec<f64> =
        (0..m).map(|a| (0..m).filter(|&b| b != a).map(|b| d(a, b)).fold(f64::INFINITY, f64::min)).collect();
    nearest.sort_by(|a, b| a.total_cmp(b));
    let radius = 1.5 * nearest[m / 2];
    let mut parent: Vec<usize> = (0..m).collect();
    for a in 0..m {
        for b in a + 1..m {
            if d(a, b) <= radius {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; m];
    for a in 0..m {
        let r = find(&mut parent, a);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(obs[a]);
    }
    groups
}

fn shuffle<T>(v: &mut [T], r: &mut rng::Rng) {
    for i in (1..v.len()).rev() {
        let j = rng::index(r, i + 1);
        v.swap(i, j);
    }
}

/// Precomputed IDW geometry from every node to the training observations.
struct PriorBuilder<'a> {
    sources: &'a [usize],
    /// `n x sources` raw weights `d^-p`; `INFINITY` marks a coincident pair.
    raw: Vec<f64>,
    truth: &'a [ChannelMatrix],
    standardizer: &'a Standardizer,
    mode: FeatureMode,
    shape: (usize, usize),
    prior: PriorMode,
}

impl PriorBuilder<'_> {
    fn row(&self, j: usize, active: &[bool]) -> Vec<f64> {
        let (na, nl) = self.shape;
        let mut h = ChannelMatrix::zeros(na, nl);
        if self.prior == PriorMode::Idw {
            let m = self.sources.len();
            let raw = &self.raw[j * m..(j + 1) * m];
            let coincident = (0..m).find(|&s| active[s] && raw[s].is_infinite());
            match coincident {
                Some(s) => h = self.truth[self.sources[s]].clone(),
                None => {
                    let total: f64 = (0..m).filter(|&s| active[s]).map(|s| raw[s]).sum();
                    for s in (0..m).filter(|&s| active[s]) {
                        let w = Complex64::new(raw[s] / total, 0.0);
                        for (o, z) in h.entries.iter_mut().zip(&self.truth[self.sources[s]].entries) {
                            *o += z * w;
                        }
                    }
                }
            }
        }
        self.standardizer.apply(&encode_features(&h, self.mode))
    }

    /// Inputs where only sources flagged in `active` are visible.
    fn inputs(&self, active: &[bool], n: usize) -> (Matrix, Vec<bool>) {
        let f = self.standardizer.dim();
        let mut x = Matrix::zeros(n, f);
        let mut flags = vec![false; n];
        let mut visible = vec![false; n];
        for (s, &src) in self.sources.iter().enumerate() {
            if active[s] {
                visible[src] = true;
            }
        }
        for j in 0..n {
            let row = if visible[j] {
                flags[j] = true;
                self.standardizer.apply(&encode_features(&self.truth[j], self.mode))
            } else {
                self.row(j, active)
            };
            x.row_mut(j).copy_from_slice(&row);
        }
        (x, flags)
    }
}

/// Trains a network on `graph`. `nodes` carry encoded features; observed
/// nodes' features are their ground truth. `shape` is `(N, L)`.
pub fn train<C: Clock>(
    graph: &SpatialGraph,
    nodes: &[NodeFeature],
    shape: (usize, usize),
    mode: FeatureMode,
    cfg: &TrainConfig,
    seed: u64,
    clock: &C,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = graph.n_nodes();
    if nodes.len() != n {
        return Err(Error::Shape("one node feature per graph node required".into()));
    }
    let obs: Vec<usize> = (0..n).filter(|&k| nodes[k].observed).collect();
    if obs.len() < 2 {
        return Err(Error::Config(alloc::format!("training needs >= 2 observed nodes, got {}", obs.len())));
    }
    let standardizer = Standardizer::fit(&obs.iter().map(|&k| nodes[k].x0.as_slice()).collect::<Vec<_>>())?;
    let f = standardizer.dim();
    let (na, nl) = shape;
    let mut truth = vec![ChannelMatrix::zeros(na, nl); n];
    for &k in &obs {
        truth[k] = decode_features(&nodes[k].x0, mode, na, nl)?;
    }

    // Validation split by clusters.
    let coords: Vec<(f64, f64)> = nodes.iter().map(|nf| nf.coord).collect();
    let mut clusters = observation_clusters(&coords, &obs);
    if clusters.len() < 3 {
        clusters = obs.iter().map(|&o| vec![o]).collect();
    }
    let mut r = rng::stream(seed, &[0x7A1]);
    shuffle(&mut clusters, &mut r);
    let want_val = (cfg.val_fraction * obs.len() as f64).ceil() as usize;
    let mut val_clusters = 0;
    let mut val_count = 0;
    while cfg.val_fraction > 0.0 && val_count < want_val && clusters.len() - val_clusters > 2 {
        val_count += clusters[val_clusters].len();
        val_clusters += 1;
    }
    let mut val_nodes: Vec<usize> = clusters[..val_clusters].iter().flatten().copied().collect();
    val_nodes.sort_unstable();
    let train_clusters: Vec<Vec<usize>> = clusters[val_clusters..].to_vec();
    let mut sources: Vec<usize> = train_clusters.iter().flatten().copied().collect();
    sources.sort_unstable();
    let source_slot = {
        let mut s = vec![usize::MAX; n];
        for (i, &k) in sources.iter().enumerate() {
            s[k] = i;
        }
        s
    };

    let m = sources.len();
    let mut raw = vec![0.0; n * m];
    for j in 0..n {
        for (s, &src) in sources.iter().enumerate() {
            let (p, q) = (coords[j], coords[src]);
            let dist = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            raw[j * m + s] =
                if dist < crate::graph::COINCIDENT_M { f64::INFINITY } else { dist.powf(-cfg.idw_power) };
        }
    }
    let builder = PriorBuilder {
        sources: &sources,
        raw,
        truth: &truth,
        standardizer: &standardizer,
        mode,
        shape,
        prior: cfg.prior,
    };

    let dims = cfg.dims(f);
    let mut params = gnn::init_params(dims, rng::derive_seed(seed, &[0x1A1]))?;
    let mut opt = OptimizerState::new(params.len(), cfg.optimizer);
    // Validation only needs the receptive field of the held-out nodes.
    let (val_x, val_flags) = builder.inputs(&vec![true; m], n);
    let val_region = graph.khop_nodes(&val_nodes, gnn::receptive_hops(&dims));
    let val_graph = graph.induced(&val_region)?;
    let mut val_sub_x = Matrix::zeros(val_region.len(), f);
    for (i, &k) in val_region.iter().enumerate() {
        val_sub_x.row_mut(i).copy_from_slice(val_x.row(k));
    }
    let val_sub_flags: Vec<bool> = val_region.iter().map(|&k| val_flags[k]).collect();
    let validate = |p: &GnnParams| -> Result<Option<f64>> {
        if val_nodes.is_empty() {
            return Ok(None);
        }
        let out = gnn::infer_inductive(&val_graph, &val_sub_x, &val_sub_flags, p)?;
        let mut pred = vec![ChannelMatrix::zeros(na, nl); n];
        for (i, &k) in val_region.iter().enumerate() {
            if val_nodes.binary_search(&k).is_ok() {
                pred[k] = decode_features(&standardizer.invert(out.row(i)), mode, na, nl)?;
            }
        }
        nmse(&pred, &truth, &val_nodes).map(Some)
    };
    let initial_val_nmse = validate(&params)?;
    let mut best = (params.clone(), initial_val_nmse, None);
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let unobserved: Vec<usize> = (0..n).filter(|&k| !nodes[k].observed).collect();
    let t0 = clock.seconds();
    let mut log = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_clusters.len()).collect();
        shuffle(&mut order, &mut rng::stream(seed, &[0x3A5, epoch as u64]));
        let hide = ((cfg.mask_fraction * train_clusters.len() as f64).round() as usize)
            .clamp(1, train_clusters.len().saturating_sub(1).max(1));
        let mut active = vec![true; m];
        let mut supervised = Vec::new();
        for &c in &order[..hide] {
            for &k in &train_clusters[c] {
                active[source_slot[k]] = false;
                supervised.push(k);
            }
        }
        supervised.sort_unstable();
        if active.iter().all(|a| !a) {
            // A single training cluster: fall back to hiding half its nodes.
            for (s, a) in active.iter_mut().enumerate() {
                *a = s % 2 == 0;
            }
            supervised = (0..m).filter(|&s| !active[s]).map(|s| sources[s]).collect();
        }
        let (x, flags) = builder.inputs(&active, n);
        let (priors, prior_set): (Vec<Option<Vec<f64>>>, &[usize]) = match cfg.prior {
            PriorMode::Idw => {
                let mut p = vec![None; n];
                for &j in &unobserved {
                    p[j] = Some(x.row(j).to_vec());
                }
                (p, &unobserved)
            }
            PriorMode::Zero => (vec![None; n], &[]),
        };
        let pass = TrainPass {
            seed: rng::derive_seed(seed, &[0xE90, epoch as u64]),
            dropout: cfg.dropout,
            neighbor_sample: cfg.neighbor_sample,
        };
        let trace = gnn::forward(graph, &x, &flags, &params, Some(&pass))
            .map_err(|e| Error::Diverged { epoch, detail: alloc::format!("{e}") })?;
        let ctx = LossContext {
            graph,
            standardizer: &standardizer,
            mode,
            n_antennas: na,
            n_subcarriers: nl,
            truth: &truth,
            supervised: &supervised,
            priors: &priors,
            prior_set,
            weights: cfg.loss,
            terms: Terms::ALL,
        };
        let (parts, d_out) = ctx.evaluate(&trace.output)?;
        if !parts.total().is_finite() {
            return Err(Error::Diverged { epoch, detail: alloc::format!("loss {:?}", parts) });
        }
        let grads = gnn::backward(&trace, graph, &params, &d_out)
            .map_err(|e| Error::Diverged { epoch, detail: alloc::format!("{e}") })?;
        let lr = cosine_lr(cfg.optimizer.lr, epoch, cfg.max_epochs);
        adamw_step(&mut params.data, &grads.data, &mut opt, lr)
            .map_err(|e| Error::Diverged { epoch, detail: alloc::format!("{e}") })?;

        let val_nmse = if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.max_epochs {
            validate(&params)?
        } else {
            None
        };
        log.push(LogRow { epoch, losses: parts, val_nmse, lr, seconds: clock.seconds() - t0 });
        if let Some(v) = val_nmse {
            if best.1.is_none_or(|b| v < b) {
                best = (params.clone(), Some(v), Some(epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let (best_params, best_val_nmse, best_epoch) = if val_nodes.is_empty() {
        let last = log.last().map(|r| r.epoch);
        (params, None, last)
    } else {
        best
    };
    Ok(TrainOutcome {
        model: TrainedModel { params: best_params, standardizer, mode, n_antennas: na, n_subcarriers: nl },
        log,
        best_epoch,
        best_val_nmse,
        initial_val_nmse,
        val_nodes,
        stopped_early,
    })
}
