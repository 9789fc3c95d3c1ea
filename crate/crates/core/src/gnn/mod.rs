//! Inductive edge-conditioned graph network.
//!
//! Each layer runs a SAGE step (mean neighbour aggregation, affine map,
//! ReLU, LayerNorm, dropout) followed by an edge-conditioned refinement in
//! which a small filter network turns every edge feature into a `D x D`
//! matrix applied to the neighbour state. A residual connects the layer
//! input to its output. The head is linear and adds its result to the
//! (standardized) input features, so an untrained correction leaves the
//! IDW prior in place.
//!
//! The edge-conditioned sum is evaluated without materialising the per-edge
//! filters. With hidden filter activations `q` (and `q_H = 1` for the output
//! bias) the message `sum_u Theta(e_ku) z_u` equals `A_k M`, where
//! `A_k = [sum_u q_h(e_ku) z_u]_h` is gathered per receiver and `M` holds the
//! rearranged output weights of the filter network, so the bulk of the work
//! is one matrix product per layer.

mod params;

pub use params::{init_params, tensor_specs, GnnDims, GnnParams, Gradients, LayerOffsets, TensorSpec, EDGE_DIM};

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::linalg::{axpy, dot, gemm, Matrix, Operand};
use crate::rng;

pub const LN_EPS: f64 = 1e-5;

/// Stochastic settings of a training-mode pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPass {
    pub seed: u64,
    pub dropout: f64,
    /// Neighbours sampled for the mean aggregation; `None` uses all.
    pub neighbor_sample: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Matrix,
    /// Sampled neighbour lists, present only when sampling was active.
    pub sampled: Option<Vec<Vec<usize>>>,
    /// `[z_k | m_k]` per node.
    pub concat: Matrix,
    pub pre: Matrix,
    pub normed: Matrix,
    pub inv_sigma: Vec<f64>,
    /// Inverted-dropout multipliers.
    pub mask: Option<Vec<f64>>,
    pub z_tilde: Matrix,
    /// Filter-network hidden pre-activations, `slots x H`.
    pub filter_pre: Vec<f64>,
    /// Filter-weighted neighbour sums, `n x (H + 1) D`.
    pub gathered: Matrix,
    pub ecc_pre: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub embeddings: Matrix,
    /// Standardized predictions, one row per node.
    pub output: Matrix,
    /// Normalised edge features per directed slot.
    pub edge_inputs: Vec<[f64; EDGE_DIM]>,
    /// Slot range of node `k` is `slot_start[k]..slot_start[k + 1]`.
    pub slot_start: Vec<usize>,
    params_digest: u64,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `(H + 1) D x D` matrix with `M[h D + j, i] = W2[i D + j, h] / D` and the
/// bias block last.
fn filter_matrix(params: &GnnParams, l: usize) -> Matrix {
    let d = params.dims.hidden;
    let h = params.dims.filter_hidden;
    let lo = params.layer(l);
    let w2 = params.slice(lo.filter_w2, d * d * h);
    let b2 = params.slice(lo.filter_b2, d * d);
    let scale = 1.0 / d as f64;
    let mut m = Matrix::zeros((h + 1) * d, d);
    for i in 0..d {
        for j in 0..d {
            let r = i * d + j;
            for hb in 0..h {
                m.data[(hb * d + j) * d + i] = w2[r * h + hb] * scale;
            }
            m.data[(h * d + j) * d + i] = b2[r] * scale;
        }
    }
    m
}

fn check_inputs(graph: &SpatialGraph, x: &Matrix, observed: &[bool], params: &GnnParams) -> Result<()> {
    let n = graph.n_nodes();
    if x.rows != n || observed.len() != n {
        return Err(Error::Shape("one feature row and flag per graph node required".into()));
    }
    if x.cols != params.dims.feature_dim {
        return Err(Error::Shape(alloc::format!(
            "feature width {} does not match network input {}",
            x.cols,
            params.dims.feature_dim
        )));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("node features"));
    }
    Ok(())
}

fn sample_neighbors(graph: &SpatialGraph, s: usize, seed: u64, l: usize) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, &[0x5A3, l as u64]);
    (0..graph.n_nodes())
        .map(|k| {
            let mut nb: Vec<usize> = graph.neighbors(k).iter().map(|&(u, _)| u).collect();
            if nb.len() > s {
                for i in 0..s {
                    let j = i + rng::index(&mut r, nb.len() - i);
                    nb.swap(i, j);
                }
                nb.truncate(s);
                nb.sort_unstable();
            }
            nb
        })
        .collect()
}

/// Full forward pass. `x` holds standardized features (`n x F`), `observed`
/// the observed flag fed as an extra input channel. `train` enables dropout
/// and neighbour sampling.
pub fn forward(
    graph: &SpatialGraph,
    x: &Matrix,
    observed: &[bool],
    params: &GnnParams,
    train: Option<&TrainPass>,
) -> Result<ForwardTrace> {
    check_inputs(graph, x, observed, params)?;
    let dims = params.dims;
    let (n, d, h, f) = (graph.n_nodes(), dims.hidden, dims.filter_hidden, dims.feature_dim);

    let mut slot_start = Vec::with_capacity(n + 1);
    let mut edge_inputs = Vec::new();
    slot_start.push(0);
    for k in 0..n {
        for &(_, e) in graph.neighbors(k) {
            edge_inputs.push(graph.edge_input(k, e));
        }
        slot_start.push(edge_inputs.len());
    }
    let n_slots = edge_inputs.len();

    let mut z = Matrix::zeros(n, f + 1);
    for k in 0..n {
        let row = z.row_mut(k);
        row[..f].copy_from_slice(x.row(k));
        row[f] = if observed[k] { 1.0 } else { 0.0 };
    }

    let mut layers = Vec::with_capacity(dims.layers);
    for l in 0..dims.layers {
        let din = dims.layer_in(l);
        let lo = params.layer(l);
        let sampled = match train {
            Some(TrainPass { seed, neighbor_sample: Some(s), .. }) => Some(sample_neighbors(graph, *s, *seed, l)),
            _ => None,
        };

        // Mean aggregation.
        let mut concat = Matrix::zeros(n, 2 * din);
        for k in 0..n {
            let (own, mean) = concat.row_mut(k).split_at_mut(din);
            own.copy_from_slice(z.row(k));
            let mut count = 0usize;
            let mut add = |u: usize| {
                axpy(1.0, z.row(u), mean);
                count += 1;
            };
            match &sampled {
                Some(lists) => lists[k].iter().for_each(|&u| add(u)),
                None => graph.neighbors(k).iter().for_each(|&(u, _)| add(u)),
            }
            if count == 0 {
                mean.copy_from_slice(z.row(k));
            } else {
                let inv = 1.0 / count as f64;
                mean.iter_mut().for_each(|v| *v *= inv);
            }
        }

        let mut pre = Matrix::zeros(n, d);
        let b = params.slice(lo.b_agg, d);
        for k in 0..n {
            pre.row_mut(k).copy_from_slice(b);
        }
        gemm(&mut pre.data, Operand::new(&concat), Operand::raw(params.slice(lo.w_agg, d * 2 * din), d, 2 * din, true), 1.0);

        // ReLU, LayerNorm, dropout.
        let gain = params.slice(lo.ln_gain, d);
        let bias = params.slice(lo.ln_bias, d);
        let mut normed = Matrix::zeros(n, d);
        let mut inv_sigma = vec![0.0; n];
        let mut z_tilde = Matrix::zeros(n, d);
        for k in 0..n {
            let a: Vec<f64> = pre.row(k).iter().map(|&v| relu(v)).collect();
            let mu = a.iter().sum::<f64>() / d as f64;
            let var = a.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_sigma[k] = is;
            let nr = normed.row_mut(k);
            for i in 0..d {
                nr[i] = (a[i] - mu) * is;
            }
            let zr = z_tilde.row_mut(k);
            for i in 0..d {
                zr[i] = nr[i] * gain[i] + bias[i];
            }
        }
        let mask = match train {
            Some(tp) if tp.dropout > 0.0 => {
                if !(tp.dropout < 1.0) {
                    return Err(Error::Config("dropout must be in [0, 1)".into()));
                }
                let mut r = rng::stream(tp.seed, &[0xD80, l as u64]);
                let keep = 1.0 / (1.0 - tp.dropout);
                let m: Vec<f64> =
                    (0..n * d).map(|_| if rng::uniform(&mut r) < tp.dropout { 0.0 } else { keep }).collect();
                z_tilde.data.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                Some(m)
            }
            _ => None,
        };

        // Edge-conditioned refinement.
        let w1 = params.slice(lo.filter_w1, h * EDGE_DIM);
        let b1 = params.slice(lo.filter_b1, h);
        let mut filter_pre = vec![0.0; n_slots * h];
        for (s, e) in edge_inputs.iter().enumerate() {
            for hb in 0..h {
                filter_pre[s * h + hb] = b1[hb] + dot(&w1[hb * EDGE_DIM..(hb + 1) * EDGE_DIM], e);
            }
        }
        let mut gathered = Matrix::zeros(n, (h + 1) * d);
        for k in 0..n {
            let row = gathered.row_mut(k);
            for (s, &(u, _)) in graph.neighbors(k).iter().enumerate() {
                let slot = slot_start[k] + s;
                let zu = z_tilde.row(u);
                for (hb, &p) in filter_pre[slot * h..(slot + 1) * h].iter().enumerate() {
                    if p > 0.0 {
                        axpy(p, zu, &mut row[hb * d..(hb + 1) * d]);
                    }
                }
                axpy(1.0, zu, &mut row[h * d..]);
            }
        }
        let mut ecc_pre = Matrix::zeros(n, d);
        gemm(&mut ecc_pre.data, Operand::new(&z_tilde), Operand::raw(params.slice(lo.w_self, d * d), d, d, true), 0.0);
        gemm(&mut ecc_pre.data, Operand::new(&gathered), Operand::new(&filter_matrix(params, l)), 1.0);
        let mut out = Matrix::zeros(n, d);
        let keep = din.min(d);
        for k in 0..n {
            let o = out.row_mut(k);
            for (oi, &s) in o.iter_mut().zip(ecc_pre.row(k)) {
                *oi = relu(s);
            }
            axpy(1.0, &z.row(k)[..keep], &mut o[..keep]);
        }
        layers.push(LayerTrace {
            input: core::mem::replace(&mut z, out),
            sampled,
            concat,
            pre,
            normed,
            inv_sigma,
            mask,
            z_tilde,
            filter_pre,
            gathered,
            ecc_pre,
        });
    }

    let (ow, ob) = params.out_offsets();
    let mut output = Matrix::zeros(n, f);
    let bout = params.slice(ob, f);
    for k in 0..n {
        let r = output.row_mut(k);
        for i in 0..f {
            r[i] = x.get(k, i) + bout[i];
        }
    }
    gemm(&mut output.data, Operand::new(&z), Operand::raw(params.slice(ow, f * d), f, d, true), 1.0);
    if output.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(ForwardTrace {
        layers,
        embeddings: z,
        output,
        edge_inputs,
        slot_start,
        params_digest: params.digest(),
    })
}

/// Exact gradients of a scalar loss given `d_output = dL/d(output)`.
pub fn backward(
    trace: &ForwardTrace,
    graph: &SpatialGraph,
    params: &GnnParams,
    d_output: &Matrix,
) -> Result<Gradients> {
    if trace.params_digest != params.digest() {
        return Err(Error::Config("stale forward trace: parameters changed since the forward pass".into()));
    }
    let dims = params.dims;
    let (n, d, h, f) = (graph.n_nodes(), dims.hidden, dims.filter_hidden, dims.feature_dim);
    if d_output.rows != n || d_output.cols != f || trace.slot_start.len() != n + 1 {
        return Err(Error::Shape("output gradient does not match the trace".into()));
    }
    let mut g = params.zeros_like();

    let (ow, ob) = params.out_offsets();
    gemm(g.slice_mut(ow, f * d), Operand::t(d_output), Operand::new(&trace.embeddings), 0.0);
    {
        let gb = g.slice_mut(ob, f);
        for k in 0..n {
            axpy(1.0, d_output.row(k), gb);
        }
    }
    let mut dz = Matrix::zeros(n, d);
    gemm(&mut dz.data, Operand::new(d_output), Operand::raw(params.slice(ow, f * d), f, d, false), 0.0);

    for l in (0..dims.layers).rev() {
        let lt = &trace.layers[l];
        let lo = params.layer(l);
        let din = dims.layer_in(l);
        let mut dinput = Matrix::zeros(n, din);
        let keep = din.min(d);
        for k in 0..n {
            axpy(1.0, &dz.row(k)[..keep], &mut dinput.row_mut(k)[..keep]);
        }

        let mut ds = dz;
        for (v, &s) in ds.data.iter_mut().zip(&lt.ecc_pre.data) {
            if s <= 0.0 {
                *v = 0.0;
            }
        }
        gemm(g.slice_mut(lo.w_self, d * d), Operand::t(&ds), Operand::new(&lt.z_tilde), 0.0);
        let mut dzt = Matrix::zeros(n, d);
        gemm(&mut dzt.data, Operand::new(&ds), Operand::raw(params.slice(lo.w_self, d * d), d, d, false), 0.0);

        let mut dm = Matrix::zeros((h + 1) * d, d);
        gemm(&mut dm.data, Operand::t(&lt.gathered), Operand::new(&ds), 0.0);
        let mut da = Matrix::zeros(n, (h + 1) * d);
        gemm(&mut da.data, Operand::new(&ds), Operand::t(&filter_matrix(params, l)), 0.0);
        // Through the gather: each neighbour state receives the filter-weighted
        // rows of `da`, and each active filter unit the matching inner product.
        let mut dq = vec![0.0; lt.filter_pre.len()];
        let mut dzu = vec![0.0; d];
        for k in 0..n {
            let dak = da.row(k);
            for (s, &(u, _)) in graph.neighbors(k).iter().enumerate() {
                let slot = trace.slot_start[k] + s;
                let zu = lt.z_tilde.row(u);
                dzu.copy_from_slice(&dak[h * d..]);
                for hb in 0..h {
                    let p = lt.filter_pre[slot * h + hb];
                    if p > 0.0 {
                        let block = &dak[hb * d..(hb + 1) * d];
                        axpy(p, block, &mut dzu);
                        dq[slot * h + hb] = dot(zu, block);
                    }
                }
                axpy(1.0, &dzu, dzt.row_mut(u));
            }
        }
        let scale = 1.0 / d as f64;
        {
            let gw2 = g.slice_mut(lo.filter_w2, d * d * h);
            for i in 0..d {
                for j in 0..d {
                    for hb in 0..h {
                        gw2[(i * d + j) * h + hb] = dm.data[(hb * d + j) * d + i] * scale;
                    }
                }
            }
        }
        {
            let gb2 = g.slice_mut(lo.filter_b2, d * d);
            for i in 0..d {
                for j in 0..d {
                    gb2[i * d + j] = dm.data[(h * d + j) * d + i] * scale;
                }
            }
        }
        {
            let mut gw1 = vec![0.0; h * EDGE_DIM];
            let mut gb1 = vec![0.0; h];
            for (slot, e) in trace.edge_inputs.iter().enumerate() {
                for hb in 0..h {
                    if lt.filter_pre[slot * h + hb] > 0.0 {
                        let gq = dq[slot * h + hb];
                        gb1[hb] += gq;
                        axpy(gq, e, &mut gw1[hb * EDGE_DIM..(hb + 1) * EDGE_DIM]);
                    }
                }
            }
            g.slice_mut(lo.filter_w1, h * EDGE_DIM).copy_from_slice(&gw1);
            g.slice_mut(lo.filter_b1, h).copy_from_slice(&gb1);
        }

        // Dropout and LayerNorm.
        if let Some(m) = &lt.mask {
            dzt.data.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        let gain = params.slice(lo.ln_gain, d).to_vec();
        let mut ggain = vec![0.0; d];
        let mut gbias = vec![0.0; d];
        let mut dpre = Matrix::zeros(n, d);
        for k in 0..n {
            let dl = dzt.row(k);
            let nr = lt.normed.row(k);
            let mut dn = vec![0.0; d];
            for i in 0..d {
                ggain[i] += dl[i] * nr[i];
                gbias[i] += dl[i];
                dn[i] = dl[i] * gain[i];
            }
            let mean_dn = dn.iter().sum::<f64>() / d as f64;
            let mean_dnn = dot(&dn, nr) / d as f64;
            let is = lt.inv_sigma[k];
            let pr = lt.pre.row(k);
            let dp = dpre.row_mut(k);
            for i in 0..d {
                dp[i] = if pr[i] > 0.0 { is * (dn[i] - mean_dn - nr[i] * mean_dnn) } else { 0.0 };
            }
        }
        g.slice_mut(lo.ln_gain, d).copy_from_slice(&ggain);
        g.slice_mut(lo.ln_bias, d).copy_from_slice(&gbias);

        // Affine SAGE map and mean aggregation.
        gemm(g.slice_mut(lo.w_agg, d * 2 * din), Operand::t(&dpre), Operand::new(&lt.concat), 0.0);
        {
            let gb = g.slice_mut(lo.b_agg, d);
            for k in 0..n {
                axpy(1.0, dpre.row(k), gb);
            }
        }
        let mut dconcat = Matrix::zeros(n, 2 * din);
        gemm(&mut dconcat.data, Operand::new(&dpre), Operand::raw(params.slice(lo.w_agg, d * 2 * din), d, 2 * din, false), 0.0);
        for k in 0..n {
            let (down, dmean) = dconcat.row(k).split_at(din);
            axpy(1.0, down, dinput.row_mut(k));
            let nb: Vec<usize> = match &lt.sampled {
                Some(lists) => lists[k].clone(),
                None => graph.neighbors(k).iter().map(|&(u, _)| u).collect(),
            };
            if nb.is_empty() {
                axpy(1.0, dmean, dinput.row_mut(k));
            } else {
                let inv = 1.0 / nb.len() as f64;
                for u in nb {
                    axpy(inv, dmean, dinput.row_mut(u));
                }
            }
        }
        dz = dinput;
    }
    if g.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(g)
}

/// Hops from which a node's output can be influenced.
pub fn receptive_hops(dims: &GnnDims) -> usize {
    2 * dims.layers
}

/// Eval-mode predictions over the whole graph. Parameters are borrowed
/// immutably, so inference can never alter them.
pub fn infer_inductive(graph: &SpatialGraph, x: &Matrix, observed: &[bool], params: &GnnParams) -> Result<Matrix> {
    Ok(forward(graph, x, observed, params, None)?.output)
}

/// Eval-mode predictions for `targets` only, computed on the induced
/// subgraph of their receptive field. Every layer reaches two hops (the
/// mean aggregation, then the edge-conditioned sum over neighbour states).
/// Rows follow the order of `targets`.
pub fn infer_nodes(
    graph: &SpatialGraph,
    x: &Matrix,
    observed: &[bool],
    params: &GnnParams,
    targets: &[usize],
) -> Result<Matrix> {
    let n = graph.n_nodes();
    if x.rows != n || observed.len() != n {
        return Err(Error::Shape("one feature row and flag per graph node required".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::Shape(alloc::format!("target node {t} out of range")));
    }
    let nodes = graph.khop_nodes(targets, receptive_hops(&params.dims));
    let sub = graph.induced(&nodes)?;
    let mut sx = Matrix::zeros(nodes.len(), x.cols);
    for (i, &g) in nodes.iter().enumerate() {
        sx.row_mut(i).copy_from_slice(x.row(g));
    }
    let sobs: Vec<bool> = nodes.iter().map(|&g| observed[g]).collect();
    let out = forward(&sub, &sx, &sobs, params, None)?.output;
    let mut res = Matrix::zeros(targets.len(), x.cols);
    for (r, t) in targets.iter().enumerate() {
        let i = nodes.binary_search(t).expect("target inside its own neighbourhood");
        res.row_mut(r).copy_from_slice(out.row(i));
    }
    Ok(res)
}

#[cfg(test)]
mod tests;
