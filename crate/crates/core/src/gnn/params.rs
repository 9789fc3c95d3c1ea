use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng;

/// Edge feature length seen by the filter network.
pub const EDGE_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GnnDims {
    /// Real feature length per node (`2NL` or `3NL`).
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Hidden width of the filter-generating network.
    pub filter_hidden: usize,
}

impl GnnDims {
    pub fn new(feature_dim: usize) -> Self {
        GnnDims { feature_dim, hidden: 64, layers: 2, filter_hidden: 32 }
    }

    /// Input width of layer `l`. The first layer also receives the
    /// observed flag as one extra channel.
    pub fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.feature_dim + 1
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.layers == 0 || self.filter_hidden == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of one layer's tensors inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub w_agg: usize,
    pub b_agg: usize,
    pub ln_gain: usize,
    pub ln_bias: usize,
    pub filter_w1: usize,
    pub filter_b1: usize,
    pub filter_w2: usize,
    pub filter_b2: usize,
    pub w_self: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every tensor of the network in buffer order.
pub fn tensor_specs(dims: &GnnDims) -> Vec<TensorSpec> {
    let (d, h, f) = (dims.hidden, dims.filter_hidden, dims.feature_dim);
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, rows: usize, cols: usize| {
        specs.push(TensorSpec { name, rows, cols, offset });
        offset += rows * cols;
    };
    for l in 0..dims.layers {
        let din = dims.layer_in(l);
        push(format!("layer{l}.w_agg"), d, 2 * din);
        push(format!("layer{l}.b_agg"), 1, d);
        push(format!("layer{l}.ln_gain"), 1, d);
        push(format!("layer{l}.ln_bias"), 1, d);
        push(format!("layer{l}.filter_w1"), h, EDGE_DIM);
        push(format!("layer{l}.filter_b1"), 1, h);
        push(format!("layer{l}.filter_w2"), d * d, h);
        push(format!("layer{l}.filter_b2"), 1, d * d);
        push(format!("layer{l}.w_self"), d, d);
    }
    push("out.w".into(), f, d);
    push("out.b".into(), 1, f);
    specs
}

/// Network parameters (and, with the same layout, their gradients or
/// optimizer moments) in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub dims: GnnDims,
    pub data: Vec<f64>,
    layers: Vec<LayerOffsets>,
    out_w: usize,
    out_b: usize,
}

pub type Gradients = GnnParams;

impl GnnParams {
    pub fn zeros(dims: GnnDims) -> Result<Self> {
        dims.validate()?;
        let specs = tensor_specs(&dims);
        let len = specs.last().map_or(0, |s| s.offset + s.len());
        let layers = (0..dims.layers)
            .map(|l| {
                let o = |i: usize| specs[l * 9 + i].offset;
                LayerOffsets {
                    w_agg: o(0),
                    b_agg: o(1),
                    ln_gain: o(2),
                    ln_bias: o(3),
                    filter_w1: o(4),
                    filter_b1: o(5),
                    filter_w2: o(6),
                    filter_b2: o(7),
                    w_self: o(8),
                }
            })
            .collect();
        let n = specs.len();
        Ok(GnnParams { dims, data: vec![0.0; len], layers, out_w: specs[n - 2].offset, out_b: specs[n - 1].offset })
    }

    pub fn zeros_like(&self) -> Self {
        GnnParams { data: vec![0.0; self.data.len()], ..self.clone() }
    }

    /// Rebuilds parameters from a flat buffer laid out per [`tensor_specs`].
    pub fn from_flat(dims: GnnDims, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        if data.len() != p.data.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", p.data.len(), data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layer(&self, l: usize) -> LayerOffsets {
        self.layers[l]
    }

    pub fn out_offsets(&self) -> (usize, usize) {
        (self.out_w, self.out_b)
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        tensor_specs(&self.dims)
    }

    #[inline]
    pub fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.data[offset..offset + len]
    }

    #[inline]
    pub fn slice_mut(&mut self, offset: usize, len: usize) -> &mut [f64] {
        &mut self.data[offset..offset + len]
    }

    /// FNV-1a digest of the raw parameter bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.data {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn max_abs_diff(&self, other: &GnnParams) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
/// hidden weights, zero biases, unit LayerNorm gains. The output head starts
/// at zero, so a fresh network returns its input features.
pub fn init_params(dims: GnnDims, seed: u64) -> Result<GnnParams> {
    let mut p = GnnParams::zeros(dims)?;
    let mut r = rng::stream(seed, &[0x1417]);
    for s in p.specs() {
        let name = s.name.as_str();
        if name.ends_with("ln_gain") {
            p.slice_mut(s.offset, s.len()).iter_mut().for_each(|x| *x = 1.0);
            continue;
        }
        let is_weight = name.ends_with("w_agg")
            || name.ends_with("filter_w1")
            || name.ends_with("filter_w2")
            || name.ends_with("w_self");
        if !is_weight {
            continue;
        }
        let bound = 1.0 / (s.cols as f64).sqrt();
        for x in p.slice_mut(s.offset, s.len()) {
            *x = rng::uniform_range(&mut r, -bound, bound);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_for_default_dims() {
        let dims = GnnDims::new(2 * 4 * 16);
        let p = init_params(dims, 1).unwrap();
        let specs = p.specs();
        assert_eq!(specs.len(), 2 * 9 + 2);
        assert_eq!((specs[0].rows, specs[0].cols), (64, 2 * 129));
        assert_eq!((specs[6].rows, specs[6].cols), (64 * 64, 32));
        assert_eq!((specs[9].rows, specs[9].cols), (64, 128));
        assert_eq!((specs[18].rows, specs[18].cols), (128, 64));
        let total: usize = specs.iter().map(TensorSpec::len).sum();
        assert_eq!(total, p.len());
    }

    #[test]
    fn seeded_init() {
        let dims = GnnDims { feature_dim: 8, hidden: 8, layers: 2, filter_hidden: 4 };
        let a = init_params(dims, 7).unwrap();
        assert_eq!(a, init_params(dims, 7).unwrap());
        assert!(a.max_abs_diff(&init_params(dims, 8).unwrap()) > 0.0);
        let l = a.layer(0);
        assert!(a.slice(l.b_agg, 8).iter().all(|&x| x == 0.0));
        assert!(a.slice(l.ln_gain, 8).iter().all(|&x| x == 1.0));
        let bound = 1.0 / 18f64.sqrt();
        assert!(a.slice(l.w_agg, 8 * 18).iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn from_flat_checks_length() {
        let dims = GnnDims { feature_dim: 4, hidden: 4, layers: 1, filter_hidden: 2 };
        let p = init_params(dims, 1).unwrap();
        assert_eq!(GnnParams::from_flat(dims, p.data.clone()).unwrap(), p);
        assert!(GnnParams::from_flat(dims, vec![0.0; 3]).is_err());
    }
}
