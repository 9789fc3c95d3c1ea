//! Inverse-distance-weighted pre-interpolation.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::hcm::ChannelMatrix;

/// Distances below this count as coincident with an observation.
pub const COINCIDENT_M: f64 = 1e-9;

/// IDW weights of each observed location for `target`:
/// `alpha_i = d_i^-p / sum_k d_k^-p`. A coincident observation takes all
/// the weight.
pub fn idw_weights(target: (f64, f64), observed: &[(f64, f64)], p: f64) -> Result<Vec<f64>> {
    if observed.is_empty() {
        return Err(Error::Empty("observed set"));
    }
    if !(p > 0.0) {
        return Err(Error::Config("IDW power must be > 0".into()));
    }
    let d: Vec<f64> = observed
        .iter()
        .map(|(x, y)| ((x - target.0).powi(2) + (y - target.1).powi(2)).sqrt())
        .collect();
    let mut w = vec![0.0; d.len()];
    if let Some(i) = d.iter().position(|&di| di < COINCIDENT_M) {
        w[i] = 1.0;
        return Ok(w);
    }
    // Scale by the nearest distance before raising to the power so large p
    // cannot overflow.
    let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    for (wi, di) in w.iter_mut().zip(&d) {
        *wi = (d_min / di).powf(p);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= total);
    Ok(w)
}

/// Complex IDW estimate of the channel at `target`.
pub fn idw_prior(target: (f64, f64), observed: &[((f64, f64), &ChannelMatrix)], p: f64) -> Result<ChannelMatrix> {
    let coords: Vec<(f64, f64)> = observed.iter().map(|(c, _)| *c).collect();
    let w = idw_weights(target, &coords, p)?;
    let first = observed[0].1;
    if observed.iter().any(|(_, h)| !h.same_shape(first)) {
        return Err(Error::Shape("observed matrices differ in shape".into()));
    }
    if let Some(i) = w.iter().position(|&wi| wi == 1.0) {
        return Ok(observed[i].1.clone());
    }
    let mut out = ChannelMatrix::zeros(first.n_antennas, first.n_subcarriers);
    for (wi, (_, h)) in w.iter().zip(observed) {
        for (o, z) in out.entries.iter_mut().zip(&h.entries) {
            *o += z * *wi;
        }
    }
    Ok(out)
}

/// IDW priors for every node flagged unobserved; observed nodes get `None`.
pub fn idw_priors(
    coords: &[(f64, f64)],
    truth: &[ChannelMatrix],
    observed: &[bool],
    p: f64,
) -> Result<Vec<Option<ChannelMatrix>>> {
    let obs: Vec<((f64, f64), &ChannelMatrix)> = (0..coords.len())
        .filter(|&i| observed[i])
        .map(|i| (coords[i], &truth[i]))
        .collect();
    if obs.is_empty() {
        return Err(Error::Empty("observed set"));
    }
    (0..coords.len())
        .map(|j| if observed[j] { Ok(None) } else { idw_prior(coords[j], &obs, p).map(Some) })
        .collect()
}

/// Sum of complex matrices scaled by real weights, used by tests and oracles.
pub fn weighted_sum(weights: &[f64], mats: &[&ChannelMatrix]) -> ChannelMatrix {
    let mut out = ChannelMatrix::zeros(mats[0].n_antennas, mats[0].n_subcarriers);
    for (w, m) in weights.iter().zip(mats) {
        for (o, z) in out.entries.iter_mut().zip(&m.entries) {
            *o += z * Complex64::new(*w, 0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(seed: f64) -> ChannelMatrix {
        ChannelMatrix::from_entries(
            2,
            2,
            (0..4).map(|i| Complex64::new((seed + i as f64).sin(), (seed * 2.0 + i as f64).cos())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn coincident_target_returns_observation() {
        let (a, b) = (mat(1.0), mat(2.0));
        let h = idw_prior((1.0, 1.0), &[((0.0, 0.0), &a), ((1.0, 1.0), &b)], 2.0).unwrap();
        assert_eq!(h, b);
    }

    #[test]
    fn equidistant_pair_averages() {
        let (a, b) = (mat(1.0), mat(2.0));
        let h = idw_prior((0.5, 0.0), &[((0.0, 0.0), &a), ((1.0, 0.0), &b)], 2.0).unwrap();
        for ((x, y), z) in a.entries.iter().zip(&b.entries).zip(&h.entries) {
            assert!(((x + y) * 0.5 - z).norm() < 1e-15);
        }
    }

    #[test]
    fn three_point_matches_direct_formula() {
        let ms = [mat(0.3), mat(1.7), mat(-2.0)];
        let pts: [(f64, f64); 3] = [(0.0, 0.0), (3.0, 1.0), (-1.0, 2.5)];
        let target = (0.7, 0.4);
        // Direct evaluation of d^-2 / sum d^-2 without the rescaling trick.
        let raw: Vec<f64> = pts
            .iter()
            .map(|p| 1.0 / ((p.0 - target.0).powi(2) + (p.1 - target.1).powi(2)))
            .collect();
        let s: f64 = raw.iter().sum();
        let want = weighted_sum(&raw.iter().map(|r| r / s).collect::<Vec<_>>(), &[&ms[0], &ms[1], &ms[2]]);
        let obs: Vec<_> = pts.iter().cloned().zip(ms.iter()).collect();
        let got = idw_prior(target, &obs, 2.0).unwrap();
        for (a, b) in got.entries.iter().zip(&want.entries) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn errors() {
        assert!(idw_weights((0.0, 0.0), &[], 2.0).is_err());
        assert!(idw_weights((0.0, 0.0), &[(1.0, 1.0)], 0.0).is_err());
    }
}
