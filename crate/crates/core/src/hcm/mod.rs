//! Hybrid channel model.
//!
//! A node's impulse response is the weighted mix of three components:
//! deterministic specular rays from the image-method tracer, clusters bound
//! to moving scatterers, and dense diffuse multipath (DMC) hung off the bounce
//! points of the specular rays. The mixing weights are set by the power
//! ratios `K_D` and `K_DMC` and their squares always sum to one.
//!
//! Taps keep exact continuous delays; nothing is binned until
//! [`cir_to_matrix`] or delay-PSD evaluation.

mod dmc;
mod dynamic;
mod tracer;

use alloc::vec::Vec;
use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::rng;
use crate::scene::{LocationGrid, Scene};
use crate::SPEED_OF_LIGHT;

pub use dmc::{dmc_cir, DmcConfig};
pub use dynamic::{
    dynamic_cir, dynamic_state_at, evolve_dynamic, ClusterRay, DynamicCluster,
    DynamicClusterState, DynamicConfig,
};
pub use tracer::trace_specular;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PathKind {
    LineOfSight,
    SingleReflection,
    DoubleReflection,
}

/// One specular path from the tracer.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    /// Linear received power.
    pub power: f64,
    pub delay_s: f64,
    /// Azimuth of arrival at the receiver.
    pub aoa_rad: f64,
    pub first_bounce: Option<Point3>,
    pub last_bounce: Option<Point3>,
    pub kind: PathKind,
    /// Identifies the reflection sequence, so the same path seen from
    /// different receivers shares one id.
    pub path_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub amplitude: Complex64,
    pub delay_s: f64,
    pub aoa_rad: f64,
}

impl Tap {
    pub fn power(&self) -> f64 {
        self.amplitude.norm_sqr()
    }
}

/// Tapped impulse response of one node at one time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cir {
    pub taps: Vec<Tap>,
    pub t: f64,
    pub node_index: usize,
}

impl Cir {
    pub fn new(taps: Vec<Tap>) -> Self {
        Cir { taps, t: 0.0, node_index: 0 }
    }

    pub fn tagged(mut self, node_index: usize, t: f64) -> Self {
        self.node_index = node_index;
        self.t = t;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(Tap::power).sum()
    }
}

#[inline]
pub(crate) fn carrier_phasor(f_c: f64, delay_s: f64) -> Complex64 {
    // Reduce the cycle count first so large f_c * tau keeps full precision.
    let cycles = f_c * delay_s;
    let frac = cycles - cycles.floor();
    Complex64::from_polar(1.0, core::f64::consts::TAU * frac)
}

/// Specular component: one tap `sqrt(P) exp(j 2 pi f_c tau)` per ray.
pub fn rt_cir(rays: &[RayPath], f_c: f64) -> Cir {
    Cir::new(
        rays.iter()
            .map(|r| Tap {
                amplitude: carrier_phasor(f_c, r.delay_s) * r.power.sqrt(),
                delay_s: r.delay_s,
                aoa_rad: r.aoa_rad,
            })
            .collect(),
    )
}

/// Power ratios of the specular component to the dynamic and diffuse ones.
/// `f64::INFINITY` switches a component off.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixRatios {
    pub k_d: f64,
    pub k_dmc: f64,
}

impl Default for MixRatios {
    fn default() -> Self {
        MixRatios::from_db(5.0, 5.0)
    }
}

impl MixRatios {
    pub fn new(k_d: f64, k_dmc: f64) -> Result<Self> {
        let ok = |k: f64| k > 0.0 && !k.is_nan();
        if !ok(k_d) || !ok(k_dmc) {
            return Err(Error::Config("mix ratios must be > 0 or +inf".into()));
        }
        Ok(MixRatios { k_d, k_dmc })
    }

    pub fn from_db(k_d_db: f64, k_dmc_db: f64) -> Self {
        MixRatios { k_d: 10f64.powf(k_d_db / 10.0), k_dmc: 10f64.powf(k_dmc_db / 10.0) }
    }

    /// Amplitude weights `(w_rt, w_d, w_dmc)` of the three components.
    pub fn weights(&self) -> (f64, f64, f64) {
        let inv = |k: f64| if k.is_infinite() { 0.0 } else { 1.0 / k };
        let (id, idmc) = (inv(self.k_d), inv(self.k_dmc));
        let denom = id + idmc + 1.0;
        ((1.0 / denom).sqrt(), (id / denom).sqrt(), (idmc / denom).sqrt())
    }
}

/// Scales the three components by their mixing weights and concatenates them.
pub fn combine_cir(rt: &Cir, dynamic: &Cir, dmc: &Cir, ratios: &MixRatios) -> Result<Cir> {
    for other in [dynamic, dmc] {
        if other.node_index != rt.node_index || other.t != rt.t {
            return Err(Error::Shape("component CIRs disagree on node or time".into()));
        }
    }
    let (w_rt, w_d, w_dmc) = ratios.weights();
    let mut taps = Vec::with_capacity(rt.taps.len() + dynamic.taps.len() + dmc.taps.len());
    for (cir, w) in [(rt, w_rt), (dynamic, w_d), (dmc, w_dmc)] {
        if w == 0.0 {
            continue;
        }
        taps.extend(cir.taps.iter().map(|tap| Tap { amplitude: tap.amplitude * w, ..*tap }));
    }
    Ok(Cir { taps, t: rt.t, node_index: rt.node_index })
}

/// Receive array and OFDM grid used to turn a CIR into a channel matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArrayConfig {
    pub n_antennas: usize,
    /// Uniform linear array element spacing (m).
    pub antenna_spacing_m: f64,
    pub n_subcarriers: usize,
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
}

impl ArrayConfig {
    /// Half-wavelength array for the given carrier.
    pub fn half_wavelength(n_antennas: usize, n_subcarriers: usize, carrier_hz: f64, bandwidth_hz: f64) -> Self {
        ArrayConfig {
            n_antennas,
            antenna_spacing_m: 0.5 * SPEED_OF_LIGHT / carrier_hz,
            n_subcarriers,
            bandwidth_hz,
            carrier_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_subcarriers == 0 {
            return Err(Error::Config("array needs N, L >= 1".into()));
        }
        if !(self.antenna_spacing_m >= 0.0 && self.bandwidth_hz > 0.0 && self.carrier_hz > 0.0) {
            return Err(Error::Config("array spacing, bandwidth and carrier must be positive".into()));
        }
        Ok(())
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }
}

/// Complex `N x L` matrix (antennas x subcarriers) of one grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    /// Row-major: entry `(a, f)` at `a * n_subcarriers + f`.
    pub entries: Vec<Complex64>,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub node_index: usize,
    pub t: f64,
}

impl ChannelMatrix {
    pub fn zeros(n_antennas: usize, n_subcarriers: usize) -> Self {
        ChannelMatrix {
            entries: alloc::vec![Complex64::new(0.0, 0.0); n_antennas * n_subcarriers],
            n_antennas,
            n_subcarriers,
            node_index: 0,
            t: 0.0,
        }
    }

    pub fn from_entries(n_antennas: usize, n_subcarriers: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != n_antennas * n_subcarriers {
            return Err(Error::Shape("entry count does not match N x L".into()));
        }
        Ok(ChannelMatrix { entries, n_antennas, n_subcarriers, node_index: 0, t: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.entries[antenna * self.n_subcarriers + subcarrier]
    }

    /// Squared Frobenius norm.
    pub fn power(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn same_shape(&self, other: &ChannelMatrix) -> bool {
        self.n_antennas == other.n_antennas && self.n_subcarriers == other.n_subcarriers
    }

    /// Squared Frobenius distance to `other`.
    pub fn distance_sqr(&self, other: &ChannelMatrix) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| (a - b).norm_sqr()).sum()
    }
}

/// Frequency/array response of a CIR:
/// `H(a, f) = sum_taps amp * exp(-j 2 pi f_f tau) * exp(-j 2 pi (a d / lambda) sin(aoa))`
/// with `f_f = f * B / L`.
pub fn cir_to_matrix(cir: &Cir, array: &ArrayConfig) -> ChannelMatrix {
    let (n, l) = (array.n_antennas, array.n_subcarriers);
    let mut m = ChannelMatrix::zeros(n, l);
    m.node_index = cir.node_index;
    m.t = cir.t;
    let df = array.subcarrier_spacing_hz();
    let d_over_lambda = array.antenna_spacing_m * array.carrier_hz / SPEED_OF_LIGHT;
    let mut freq = alloc::vec![Complex64::new(0.0, 0.0); l];
    let mut space = alloc::vec![Complex64::new(0.0, 0.0); n];
    for tap in &cir.taps {
        for (f, z) in freq.iter_mut().enumerate() {
            *z = carrier_phasor(f as f64 * df, tap.delay_s).conj();
        }
        let s = tap.aoa_rad.sin();
        for (a, z) in space.iter_mut().enumerate() {
            *z = carrier_phasor(a as f64 * d_over_lambda, s).conj() * tap.amplitude;
        }
        for (a, sa) in space.iter().enumerate() {
            let row = &mut m.entries[a * l..(a + 1) * l];
            for (e, fz) in row.iter_mut().zip(&freq) {
                *e += sa * fz;
            }
        }
    }
    m
}

/// Everything besides scene, grid, time and seed that map synthesis needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HcmConfig {
    pub ratios: MixRatios,
    pub dmc: DmcConfig,
    pub dynamic: DynamicConfig,
    pub array: ArrayConfig,
}

impl HcmConfig {
    pub fn for_scene(scene: &Scene, n_antennas: usize, n_subcarriers: usize) -> Self {
        HcmConfig {
            ratios: MixRatios::default(),
            dmc: DmcConfig::default(),
            dynamic: DynamicConfig::default(),
            array: ArrayConfig::half_wavelength(
                n_antennas,
                n_subcarriers,
                scene.carrier_hz(),
                scene.bandwidth_hz(),
            ),
        }
    }
}

/// Component CIRs of one node, before mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeComponents {
    pub rays: Vec<RayPath>,
    pub rt: Cir,
    pub dynamic: Cir,
    pub dmc: Cir,
}

/// Synthesizes the three components for receiver `rx` (grid node `node`) at time `t`.
pub fn node_components(
    scene: &Scene,
    rx: Point3,
    node: usize,
    t: f64,
    cfg: &HcmConfig,
    seed: u64,
) -> Result<NodeComponents> {
    let f_c = scene.carrier_hz();
    let rays = trace_specular(scene, rx);
    let rt = rt_cir(&rays, f_c).tagged(node, t);
    let dmc = dmc_cir(&rays, &cfg.dmc, f_c, rng::derive_seed(seed, &[0xD3C]))?
        .tagged(node, t);
    let dynamic = if scene.dynamic_objects().is_empty() || cfg.ratios.k_d.is_infinite() {
        Cir::default().tagged(node, t)
    } else {
        let state = dynamic_state_at(scene, rx, t, &cfg.dynamic, seed)?;
        dynamic_cir(&state, f_c, t).tagged(node, t)
    };
    Ok(NodeComponents { rays, rt, dynamic, dmc })
}

/// Mixed impulse responses for every grid node at time `t`, in grid order.
/// Each node draws from its own RNG stream, so the result does not depend
/// on evaluation order.
pub fn generate_cirs(
    scene: &Scene,
    grid: &LocationGrid,
    t: f64,
    cfg: &HcmConfig,
    seed: u64,
) -> Result<Vec<Cir>> {
    cfg.array.validate()?;
    (0..grid.len())
        .map(|k| {
            let c = node_components(scene, grid.position(k), k, t, cfg, seed)?;
            combine_cir(&c.rt, &c.dynamic, &c.dmc, &cfg.ratios)
        })
        .collect()
}

/// One channel matrix per grid node at time `t`, in grid order.
pub fn generate_map(
    scene: &Scene,
    grid: &LocationGrid,
    t: f64,
    cfg: &HcmConfig,
    seed: u64,
) -> Result<Vec<ChannelMatrix>> {
    Ok(generate_cirs(scene, grid, t, cfg, seed)?
        .iter()
        .map(|c| cir_to_matrix(c, &cfg.array))
        .collect())
}

/// Channel matrices for arbitrary receiver positions, indexed from `first_index`.
pub fn generate_at(
    scene: &Scene,
    positions: &[Point3],
    first_index: usize,
    t: f64,
    cfg: &HcmConfig,
    seed: u64,
) -> Result<Vec<ChannelMatrix>> {
    cfg.array.validate()?;
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let k = first_index + i;
            let c = node_components(scene, p, k, t, cfg, seed)?;
            Ok(cir_to_matrix(&combine_cir(&c.rt, &c.dynamic, &c.dmc, &cfg.ratios)?, &cfg.array))
        })
        .collect()
}
