//! Map-level error, dispersion statistics and delay power profiles.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::hcm::{ChannelMatrix, Cir};

/// Global NMSE over `nodes`: `sum ||h_hat - h||^2 / sum ||h||^2`.
pub fn nmse(pred: &[ChannelMatrix], truth: &[ChannelMatrix], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Empty("evaluation node set"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape("prediction and truth maps differ in length".into()));
    }
    let (mut err, mut pow) = (0.0, 0.0);
    for &i in nodes {
        if !pred[i].same_shape(&truth[i]) {
            return Err(Error::Shape(alloc::format!("node {i}: matrix shapes differ")));
        }
        err += pred[i].distance_sqr(&truth[i]);
        pow += truth[i].power();
    }
    if pow == 0.0 {
        return Err(Error::ZeroPower);
    }
    Ok(err / pow)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DispersionStats {
    pub tau_mean: f64,
    pub tau_rms: f64,
    pub phi_mean: f64,
    pub phi_rms: f64,
    pub node_index: usize,
}

/// Power-weighted mean and RMS spread of delay and azimuth.
pub fn dispersion(cir: &Cir) -> Result<DispersionStats> {
    if cir.is_empty() {
        return Err(Error::Empty("impulse response"));
    }
    let total = cir.total_power();
    if total == 0.0 {
        return Err(Error::ZeroPower);
    }
    let mean = |f: fn(&crate::hcm::Tap) -> f64| cir.taps.iter().map(|t| t.power() * f(t)).sum::<f64>() / total;
    let tau_mean = mean(|t| t.delay_s);
    let phi_mean = mean(|t| t.aoa_rad);
    let spread = |f: fn(&crate::hcm::Tap) -> f64, m: f64| {
        (cir.taps.iter().map(|t| t.power() * (f(t) - m).powi(2)).sum::<f64>() / total).sqrt()
    };
    Ok(DispersionStats {
        tau_mean,
        tau_rms: spread(|t| t.delay_s, tau_mean),
        phi_mean,
        phi_rms: spread(|t| t.aoa_rad, phi_mean),
        node_index: cir.node_index,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayPsd {
    pub bin_width_s: f64,
    /// Power in `[i w, (i + 1) w)`; the last bin also takes later taps.
    pub bins: Vec<f64>,
}

impl DelayPsd {
    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn bin_of(&self, delay_s: f64) -> usize {
        ((delay_s / self.bin_width_s).floor().max(0.0) as usize).min(self.bins.len() - 1)
    }
}

pub fn delay_psd(cir: &Cir, bin_width_s: f64, max_delay_s: f64) -> Result<DelayPsd> {
    if !(bin_width_s > 0.0) || !(max_delay_s > 0.0) {
        return Err(Error::Config("bin width and max delay must be > 0".into()));
    }
    let n = ((max_delay_s / bin_width_s).ceil() as usize).max(1);
    let mut psd = DelayPsd { bin_width_s, bins: vec![0.0; n] };
    for t in &cir.taps {
        let b = psd.bin_of(t.delay_s);
        psd.bins[b] += t.power();
    }
    Ok(psd)
}

/// Right-continuous empirical CDF as `(value, P[X <= value])` at each
/// distinct value.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Empty("CDF input"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("CDF input"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = p,
            _ => out.push((*x, p)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Timing {
    /// Channel regeneration by the physical model.
    pub model_stage_s: f64,
    /// Network inference.
    pub data_stage_s: f64,
}

impl Timing {
    pub fn refresh_s(&self) -> f64 {
        self.model_stage_s + self.data_stage_s
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    /// NMSE of the prediction on unobserved nodes.
    pub nmse: f64,
    /// NMSE of the IDW baseline on the same nodes, when supplied.
    pub baseline_nmse: Option<f64>,
    pub n_unobserved: usize,
    /// `(node, squared error)` for each unobserved node.
    pub node_sq_err: Vec<(usize, f64)>,
    pub power_map: Vec<f64>,
    pub predicted_power_map: Vec<f64>,
    pub ds_map: Option<Vec<f64>>,
    pub as_map: Option<Vec<f64>>,
    pub power_cdf_db: Vec<(f64, f64)>,
    pub ds_cdf: Option<Vec<(f64, f64)>>,
    pub as_cdf: Option<Vec<(f64, f64)>>,
    pub timing: Timing,
}

/// Assembles the evaluation report. `cirs`, when present, are the ground
/// truth impulse responses used for the dispersion maps.
pub fn evaluate_pipeline(
    truth: &[ChannelMatrix],
    pred: &[ChannelMatrix],
    observed: &[bool],
    baseline: Option<&[ChannelMatrix]>,
    cirs: Option<&[Cir]>,
    timing: Timing,
) -> Result<EvalReport> {
    let n = truth.len();
    if pred.len() != n || observed.len() != n || baseline.is_some_and(|b| b.len() != n) {
        return Err(Error::Shape("truth, prediction and mask are misaligned".into()));
    }
    if cirs.is_some_and(|c| c.len() != n) {
        return Err(Error::Shape("one impulse response per node required".into()));
    }
    let unobserved: Vec<usize> = (0..n).filter(|&i| !observed[i]).collect();
    let nmse_value = nmse(pred, truth, &unobserved)?;
    let baseline_nmse = baseline.map(|b| nmse(b, truth, &unobserved)).transpose()?;
    let node_sq_err = unobserved.iter().map(|&i| (i, pred[i].distance_sqr(&truth[i]))).collect();
    let power_map: Vec<f64> = truth.iter().map(ChannelMatrix::power).collect();
    let predicted_power_map: Vec<f64> = pred.iter().map(ChannelMatrix::power).collect();
    let db: Vec<f64> = predicted_power_map.iter().map(|p| 10.0 * p.max(1e-300).log10()).collect();
    let stats: Option<Vec<DispersionStats>> = cirs.map(|c| {
        c.iter()
            .map(|cir| {
                dispersion(cir).unwrap_or(DispersionStats {
                    tau_mean: 0.0,
                    tau_rms: 0.0,
                    phi_mean: 0.0,
                    phi_rms: 0.0,
                    node_index: cir.node_index,
                })
            })
            .collect()
    });
    let ds_map: Option<Vec<f64>> = stats.as_ref().map(|s| s.iter().map(|d| d.tau_rms).collect());
    let as_map: Option<Vec<f64>> = stats.as_ref().map(|s| s.iter().map(|d| d.phi_rms).collect());
    Ok(EvalReport {
        nmse: nmse_value,
        baseline_nmse,
        n_unobserved: unobserved.len(),
        node_sq_err,
        power_map,
        predicted_power_map,
        ds_cdf: ds_map.as_deref().map(empirical_cdf).transpose()?,
        as_cdf: as_map.as_deref().map(empirical_cdf).transpose()?,
        ds_map,
        as_map,
        power_cdf_db: empirical_cdf(&db)?,
        timing,
    })
}
