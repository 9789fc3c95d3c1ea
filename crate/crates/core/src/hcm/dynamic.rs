//! Birth-death clusters bound to moving point scatterers.
//!
//! Each dynamic object owns at most one cluster per receiver. The cluster is
//! born when the object is active and within the visibility radius of the
//! receiver, and dies when either condition fails. The centroid follows the
//! transmitter -> object -> receiver geometry; per-ray delay, angle and power
//! offsets are drawn once at birth and then held fixed.


use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::{carrier_phasor, Cir, Tap};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::rng;
use crate::scene::Scene;
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DynamicConfig {
    pub visibility_radius_m: f64,
    /// Rays per cluster (`M_n`).
    pub rays_per_cluster: usize,
    /// Mean intra-cluster excess delay.
    pub delay_spread_s: f64,
    pub angle_spread_rad: f64,
    /// Step used when replaying the birth-death process up to a time.
    pub step_s: f64,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        DynamicConfig {
            visibility_radius_m: 15.0,
            rays_per_cluster: 8,
            delay_spread_s: 5e-9,
            angle_spread_rad: 0.1,
            step_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRay {
    pub delay_offset_s: f64,
    pub aoa_offset_rad: f64,
    pub power_fraction: f64,
    pub delay_s: f64,
    pub aoa_rad: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicCluster {
    pub object_index: usize,
    pub birth_time: f64,
    pub centroid_delay_s: f64,
    pub centroid_aoa_rad: f64,
    /// Total cluster power.
    pub power: f64,
    pub rays: Vec<ClusterRay>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicClusterState {
    pub t: f64,
    /// Alive clusters in birth order.
    pub clusters: Vec<DynamicCluster>,
    /// Births so far, per dynamic object.
    pub births: Vec<u64>,
}

impl DynamicClusterState {
    pub fn empty(t: f64) -> Self {
        DynamicClusterState { t, clusters: Vec::new(), births: Vec::new() }
    }

    /// Number of alive clusters, `N(t)`.
    pub fn alive(&self) -> usize {
        self.clusters.len()
    }
}

fn visible(scene: &Scene, j: usize, rx: Point3, t: f64, radius: f64) -> Option<Point3> {
    let obj = &scene.dynamic_objects()[j];
    if !obj.is_active(t) {
        return None;
    }
    let p = obj.position(t).ok()?;
    (p.distance(rx) <= radius).then_some(p)
}

fn update_geometry(cluster: &mut DynamicCluster, scene: &Scene, rx: Point3, pos: Point3) {
    let tx = scene.tx_position();
    let length = tx.distance(pos) + pos.distance(rx);
    let gain = 10f64.powf(scene.dynamic_objects()[cluster.object_index].scatter_gain_db() / 10.0);
    let a = scene.wavelength() / (4.0 * core::f64::consts::PI * length.max(1e-9));
    cluster.centroid_delay_s = length / SPEED_OF_LIGHT;
    cluster.centroid_aoa_rad = (pos - rx).azimuth();
    cluster.power = gain * a * a;
    for r in &mut cluster.rays {
        r.delay_s = cluster.centroid_delay_s + r.delay_offset_s;
        r.aoa_rad = cluster.centroid_aoa_rad + r.aoa_offset_rad;
        r.power = cluster.power * r.power_fraction;
    }
}

fn advance(
    mut state: DynamicClusterState,
    scene: &Scene,
    rx: Point3,
    t_new: f64,
    cfg: &DynamicConfig,
    seed: u64,
) -> DynamicClusterState {
    let n_obj = scene.dynamic_objects().len();
    if state.births.len() < n_obj {
        state.births.resize(n_obj, 0);
    }
    for j in 0..n_obj {
        let pos = visible(scene, j, rx, t_new, cfg.visibility_radius_m);
        let alive = state.clusters.iter().position(|c| c.object_index == j);
        match (pos, alive) {
            (Some(_), None) => {
                // Offsets depend on the birth count, not the birth time, so
                // the same cluster is drawn whatever the stepping grid.
                let mut r = rng::stream(seed, &[0xD7, j as u64, state.births[j]]);
                state.births[j] += 1;
                let m = cfg.rays_per_cluster.max(1);
                let mut rays: Vec<ClusterRay> = (0..m)
                    .map(|_| {
                        let dt = rng::exponential(&mut r, cfg.delay_spread_s);
                        ClusterRay {
                            delay_offset_s: dt,
                            aoa_offset_rad: cfg.angle_spread_rad * rng::normal(&mut r),
                            power_fraction: (-dt / cfg.delay_spread_s).exp(),
                            delay_s: 0.0,
                            aoa_rad: 0.0,
                            power: 0.0,
                        }
                    })
                    .collect();
                let total: f64 = rays.iter().map(|r| r.power_fraction).sum();
                rays.iter_mut().for_each(|r| r.power_fraction /= total);
                state.clusters.push(DynamicCluster {
                    object_index: j,
                    birth_time: t_new,
                    centroid_delay_s: 0.0,
                    centroid_aoa_rad: 0.0,
                    power: 0.0,
                    rays,
                });
            }
            (None, Some(i)) => {
                state.clusters.remove(i);
            }
            _ => {}
        }
    }
    for c in &mut state.clusters {
        let pos = scene.dynamic_objects()[c.object_index]
            .position(t_new)
            .expect("alive clusters belong to active objects");
        update_geometry(c, scene, rx, pos);
    }
    state.t = t_new;
    state
}

/// Advances the cluster state of the receiver at `rx` from `t` to
/// `t + dt`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_dynamic(
    state: DynamicClusterState,
    scene: &Scene,
    rx: Point3,
    t: f64,
    dt: f64,
    cfg: &DynamicConfig,
    seed: u64,
) -> Result<DynamicClusterState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config("dynamic step must be > 0".into()));
    }
    Ok(advance(state, scene, rx, t + dt, cfg, seed))
}

/// Replays the birth-death process from the earliest waypoint up to `t`.
pub fn dynamic_state_at(
    scene: &Scene,
    rx: Point3,
    t: f64,
    cfg: &DynamicConfig,
    seed: u64,
) -> Result<DynamicClusterState> {
    if !(cfg.step_s > 0.0) {
        return Err(Error::Config("dynamic step must be > 0".into()));
    }
    let objects = scene.dynamic_objects();
    let t0 = objects.iter().map(|o| o.time_span().0).fold(f64::INFINITY, f64::min);
    if objects.is_empty() || t < t0 {
        return Ok(DynamicClusterState::empty(t));
    }
    let mut state = advance(DynamicClusterState::empty(t0), scene, rx, t0, cfg, seed);
    let mut i = 0u64;
    while state.t < t {
        i += 1;
        let next = (t0 + i as f64 * cfg.step_s).min(t);
        state = advance(state, scene, rx, next, cfg, seed);
    }
    Ok(state)
}

/// Taps `sqrt(P(t)) exp(j 2 pi f_c tau(t))` over all rays of all alive clusters.
pub fn dynamic_cir(state: &DynamicClusterState, f_c: f64, t: f64) -> Cir {
    let taps = state
        .clusters
        .iter()
        .flat_map(|c| c.rays.iter())
        .map(|r| Tap {
            amplitude: carrier_phasor(f_c, r.delay_s) * r.power.sqrt(),
            delay_s: r.delay_s,
            aoa_rad: r.aoa_rad,
        })
        .collect();
    Cir { taps, t, node_index: 0 }
}
