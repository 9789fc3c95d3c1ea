//! Dense multipath: a cluster pair per reflected ray, one cluster near the
//! first bounce and one near the last.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::{carrier_phasor, Cir, PathKind, RayPath, Tap};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DmcConfig {
    /// Sub-rays per cluster pair (`M_k`), split between the two anchors.
    pub rays_per_pair: usize,
    /// Mean of the exponential excess delay, also the power decay constant.
    pub delay_spread_s: f64,
    /// Standard deviation of the sub-ray azimuth around the parent ray.
    pub angle_spread_rad: f64,
}

impl Default for DmcConfig {
    fn default() -> Self {
        DmcConfig { rays_per_pair: 10, delay_spread_s: 10e-9, angle_spread_rad: 0.1 }
    }
}

impl DmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_pair == 0 || !(self.delay_spread_s > 0.0) || !(self.angle_spread_rad > 0.0) {
            return Err(Error::Config("DMC parameters must all be positive".into()));
        }
        Ok(())
    }
}

/// Diffuse component for one receiver.
///
/// Every non-LoS ray spawns `rays_per_pair` sub-rays, the first half anchored
/// at its first bounce and the rest at its last. Sub-ray `k'` of ray `k` has
/// delay `tau_k + dt` with `dt ~ Exp(delay_spread)` and power proportional to
/// `P_k exp(-dt / delay_spread)`. The whole component is scaled so its total
/// power equals the total specular power; the mix ratio `K_DMC` then sets the
/// power actually added to the channel.
pub fn dmc_cir(rays: &[RayPath], cfg: &DmcConfig, f_c: f64, seed: u64) -> Result<Cir> {
    cfg.validate()?;
    let total_rt: f64 = rays.iter().map(|r| r.power).sum();
    let mut raw: Vec<(f64, f64, f64)> = Vec::new();
    for ray in rays.iter().filter(|r| r.kind != PathKind::LineOfSight) {
        if ray.first_bounce.is_none() || ray.last_bounce.is_none() {
            continue;
        }
        // One stream per parent path so a path seen from nearby receivers
        // keeps the same sub-ray draws.
        let mut rng = rng::stream(seed, &[ray.path_id]);
        let start = raw.len();
        let mut weight_sum = 0.0;
        // Anchor A takes the first ceil(M/2) sub-rays, anchor Z the rest;
        // both follow the same delay and angle laws around the parent ray.
        for _ in 0..cfg.rays_per_pair {
            let excess = rng::exponential(&mut rng, cfg.delay_spread_s);
            let aoa = ray.aoa_rad + cfg.angle_spread_rad * rng::normal(&mut rng);
            let w = (-excess / cfg.delay_spread_s).exp();
            weight_sum += w;
            raw.push((w, ray.delay_s + excess, aoa));
        }
        for entry in &mut raw[start..] {
            entry.0 *= ray.power / weight_sum;
        }
    }
    let raw_total: f64 = raw.iter().map(|e| e.0).sum();
    if raw.is_empty() || raw_total <= 0.0 {
        return Ok(Cir::default());
    }
    let scale = total_rt / raw_total;
    Ok(Cir::new(
        raw.into_iter()
            .map(|(p, delay_s, aoa_rad)| Tap {
                amplitude: carrier_phasor(f_c, delay_s) * (p * scale).sqrt(),
                delay_s,
                aoa_rad,
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use alloc::vec;

    fn reflected(power: f64, delay_s: f64) -> RayPath {
        let p = Point3::new(1.0, 2.0, 1.0);
        RayPath {
            power,
            delay_s,
            aoa_rad: 0.3,
            first_bounce: Some(p),
            last_bounce: Some(p),
            kind: PathKind::SingleReflection,
            path_id: 1,
        }
    }

    fn los(power: f64, delay_s: f64) -> RayPath {
        RayPath {
            power,
            delay_s,
            aoa_rad: 0.0,
            first_bounce: None,
            last_bounce: None,
            kind: PathKind::LineOfSight,
            path_id: 0,
        }
    }

    #[test]
    fn los_only_gives_empty_component() {
        let c = dmc_cir(&[los(1.0, 1e-8)], &DmcConfig::default(), 5.5e9, 1).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn sub_rays_trail_their_parent() {
        let cfg = DmcConfig { rays_per_pair: 10, ..DmcConfig::default() };
        let parent = reflected(2e-7, 40e-9);
        let c = dmc_cir(core::slice::from_ref(&parent), &cfg, 5.5e9, 9).unwrap();
        assert_eq!(c.taps.len(), 10);
        assert!(c.taps.iter().all(|t| t.delay_s >= parent.delay_s));
        assert!((c.total_power() - 2e-7).abs() < 1e-20);
    }

    #[test]
    fn normalized_to_specular_power_and_deterministic() {
        let rays = vec![los(1e-6, 20e-9), reflected(2e-7, 40e-9), reflected(5e-8, 70e-9)];
        let cfg = DmcConfig::default();
        let a = dmc_cir(&rays, &cfg, 5.5e9, 3).unwrap();
        let b = dmc_cir(&rays, &cfg, 5.5e9, 3).unwrap();
        assert_eq!(a, b);
        let total: f64 = rays.iter().map(|r| r.power).sum();
        assert!((a.total_power() - total).abs() < 1e-12 * total);
        let min_parent = rays.iter().map(|r| r.delay_s).fold(f64::INFINITY, f64::min);
        assert!(a.taps.iter().all(|t| t.delay_s >= min_parent));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DmcConfig { rays_per_pair: 0, ..DmcConfig::default() };
        assert!(dmc_cir(&[], &cfg, 5.5e9, 0).is_err());
    }
}
