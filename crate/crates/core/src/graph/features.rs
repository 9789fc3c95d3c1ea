//! Complex channel matrix <-> real feature vector encodings.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::hcm::ChannelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FeatureMode {
    /// `[vec(Re h), vec(Im h)]`, length `2NL`.
    #[default]
    Concat,
    /// `[vec(|h|), vec(arg h)]` with the angle in `(-pi, pi]`, length `2NL`.
    Polar,
    /// `[vec(|h|), vec(sin arg h), vec(cos arg h)]`, length `3NL`.
    PolarSinCos,
}

impl FeatureMode {
    /// Feature length for `entries = N * L` matrix entries.
    pub fn feature_len(self, entries: usize) -> usize {
        match self {
            FeatureMode::Concat | FeatureMode::Polar => 2 * entries,
            FeatureMode::PolarSinCos => 3 * entries,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FeatureMode::Concat => 0,
            FeatureMode::Polar => 1,
            FeatureMode::PolarSinCos => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureMode::Concat),
            1 => Some(FeatureMode::Polar),
            2 => Some(FeatureMode::PolarSinCos),
            _ => None,
        }
    }
}

fn wrapped_arg(z: Complex64) -> f64 {
    let a = z.arg();
    if a <= -core::f64::consts::PI {
        core::f64::consts::PI
    } else {
        a
    }
}

pub fn encode_features(h: &ChannelMatrix, mode: FeatureMode) -> Vec<f64> {
    let n = h.entries.len();
    let mut x = vec![0.0; mode.feature_len(n)];
    for (e, z) in h.entries.iter().enumerate() {
        match mode {
            FeatureMode::Concat => {
                x[e] = z.re;
                x[n + e] = z.im;
            }
            FeatureMode::Polar => {
                x[e] = z.norm();
                x[n + e] = wrapped_arg(*z);
            }
            FeatureMode::PolarSinCos => {
                let a = wrapped_arg(*z);
                x[e] = z.norm();
                x[n + e] = a.sin();
                x[2 * n + e] = a.cos();
            }
        }
    }
    x
}

/// Inverse of [`encode_features`].
pub fn decode_features(
    x: &[f64],
    mode: FeatureMode,
    n_antennas: usize,
    n_subcarriers: usize,
) -> Result<ChannelMatrix> {
    let n = n_antennas * n_subcarriers;
    if x.len() != mode.feature_len(n) {
        return Err(Error::Shape("feature length does not match N, L and mode".into()));
    }
    let entries = (0..n).map(|e| decode_entry(x, mode, n, e)).collect();
    ChannelMatrix::from_entries(n_antennas, n_subcarriers, entries)
}

#[inline]
fn decode_entry(x: &[f64], mode: FeatureMode, n: usize, e: usize) -> Complex64 {
    match mode {
        FeatureMode::Concat => Complex64::new(x[e], x[n + e]),
        FeatureMode::Polar => Complex64::from_polar(x[e], x[n + e]),
        FeatureMode::PolarSinCos => {
            let (s, c) = (x[n + e], x[2 * n + e]);
            let r = (s * s + c * c).sqrt().max(1e-12);
            Complex64::new(x[e] * c / r, x[e] * s / r)
        }
    }
}

/// Back-propagates a gradient with respect to the decoded complex entries
/// (`g = dL/dRe + j dL/dIm` per entry) to the feature vector `x`.
pub fn decode_backward(x: &[f64], mode: FeatureMode, grad: &[Complex64], out: &mut [f64]) {
    let n = grad.len();
    for (e, g) in grad.iter().enumerate() {
        match mode {
            FeatureMode::Concat => {
                out[e] = g.re;
                out[n + e] = g.im;
            }
            FeatureMode::Polar => {
                let (m, phi) = (x[e], x[n + e]);
                let (s, c) = phi.sin_cos();
                out[e] = g.re * c + g.im * s;
                out[n + e] = m * (-g.re * s + g.im * c);
            }
            FeatureMode::PolarSinCos => {
                let (m, s, c) = (x[e], x[n + e], x[2 * n + e]);
                let r2 = (s * s + c * c).max(1e-24);
                let r = r2.sqrt();
                let r3 = r2 * r;
                out[e] = g.re * c / r + g.im * s / r;
                // d(c/r)/ds = -cs/r^3, d(c/r)/dc = s^2/r^3, d(s/r)/ds = c^2/r^3, d(s/r)/dc = -cs/r^3
                out[n + e] = m * (g.re * (-c * s / r3) + g.im * (c * c / r3));
                out[2 * n + e] = m * (g.re * (s * s / r3) + g.im * (-c * s / r3));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(z: Complex64) -> ChannelMatrix {
        ChannelMatrix::from_entries(1, 1, vec![z]).unwrap()
    }

    #[test]
    fn encode_examples() {
        let zero = ChannelMatrix::zeros(2, 3);
        assert_eq!(encode_features(&zero, FeatureMode::Concat), vec![0.0; 12]);
        let h = one(Complex64::new(1.0, 1.0));
        assert_eq!(encode_features(&h, FeatureMode::Concat), vec![1.0, 1.0]);
        let p = encode_features(&h, FeatureMode::Polar);
        assert!((p[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((p[1] - core::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let sc = encode_features(&h, FeatureMode::PolarSinCos);
        assert_eq!(sc.len(), 3);
    }

    #[test]
    fn angle_range_is_half_open_at_minus_pi() {
        let h = one(Complex64::new(-1.0, -0.0));
        let p = encode_features(&h, FeatureMode::Polar);
        assert_eq!(p[1], core::f64::consts::PI);
    }

    #[test]
    fn decode_backward_matches_finite_differences() {
        let entries: Vec<Complex64> =
            (0..6).map(|i| Complex64::new((i as f64 * 0.7).sin() + 0.2, (i as f64 * 1.3).cos())).collect();
        let h = ChannelMatrix::from_entries(2, 3, entries).unwrap();
        let g: Vec<Complex64> = (0..6).map(|i| Complex64::new(0.3 - i as f64 * 0.1, 0.05 * i as f64)).collect();
        for mode in [FeatureMode::Concat, FeatureMode::Polar, FeatureMode::PolarSinCos] {
            let x = encode_features(&h, mode);
            // Scalar probe: L = sum Re(g* . h) = sum g.re Re h + g.im Im h.
            let loss = |x: &[f64]| {
                let d = decode_features(x, mode, 2, 3).unwrap();
                d.entries.iter().zip(&g).map(|(z, g)| g.re * z.re + g.im * z.im).sum::<f64>()
            };
            let mut analytic = vec![0.0; x.len()];
            decode_backward(&x, mode, &g, &mut analytic);
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                let fd = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((fd - analytic[i]).abs() < 1e-8, "{mode:?} {i}: {fd} vs {}", analytic[i]);
            }
        }
    }
}
