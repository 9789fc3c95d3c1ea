//! Simulated environment: reflecting surfaces, transmitter, moving point
//! scatterers and the receiver grid.
//!
//! Geometry is 2.5-D. Surfaces are arbitrary planar polygons, in practice
//! vertical walls plus optional floor and ceiling slabs. Scene and grid are
//! immutable after construction and safe to share between workers.

use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{newell_normal, point_in_polygon, Plane, Point3};

/// Tolerance used when deciding whether a segment really crosses a surface.
const SEGMENT_EPS: f64 = 1e-9;

/// Planar reflecting and occluding polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    vertices: Vec<Point3>,
    reflection_loss_db: f64,
    plane: Plane,
}

impl Surface {
    pub fn new(vertices: Vec<Point3>, reflection_loss_db: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Scene(format!(
                "surface needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(Error::Scene("non-finite surface vertex".into()));
        }
        if !(reflection_loss_db >= 0.0 && reflection_loss_db.is_finite()) {
            return Err(Error::Scene(format!(
                "reflection loss must be finite and >= 0 dB, got {reflection_loss_db}"
            )));
        }
        let n = newell_normal(&vertices);
        let len = n.norm();
        let extent = vertices
            .iter()
            .map(|v| v.distance(vertices[0]))
            .fold(0.0, f64::max);
        if len <= 1e-12 * extent.max(1.0).powi(2) {
            return Err(Error::Scene("degenerate (collinear) surface polygon".into()));
        }
        let normal = n * (1.0 / len);
        let off_plane = vertices
            .iter()
            .map(|v| (*v - vertices[0]).dot(normal).abs())
            .fold(0.0, f64::max);
        if off_plane > 1e-6 * extent.max(1.0) {
            return Err(Error::Scene("surface polygon is not planar".into()));
        }
        Ok(Surface { plane: Plane { origin: vertices[0], normal }, vertices, reflection_loss_db })
    }

    /// Vertical rectangular wall standing on the segment `a`-`b`.
    pub fn wall(a: (f64, f64), b: (f64, f64), bottom: f64, top: f64, loss_db: f64) -> Result<Self> {
        Self::new(
            alloc::vec![
                Point3::new(a.0, a.1, bottom),
                Point3::new(b.0, b.1, bottom),
                Point3::new(b.0, b.1, top),
                Point3::new(a.0, a.1, top),
            ],
            loss_db,
        )
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn reflection_loss_db(&self) -> f64 {
        self.reflection_loss_db
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn contains(&self, p: Point3) -> bool {
        point_in_polygon(&self.vertices, self.plane.normal, p)
    }

    /// Whether the open segment `a`-`b` passes through the polygon.
    pub fn intersects_segment(&self, a: Point3, b: Point3) -> bool {
        let da = self.plane.signed_distance(a);
        let db = self.plane.signed_distance(b);
        if (da > 0.0 && db > 0.0) || (da < 0.0 && db < 0.0) {
            return false;
        }
        match self.plane.segment_parameter(a, b) {
            Some(s) if s > SEGMENT_EPS && s < 1.0 - SEGMENT_EPS => self.contains(a.lerp(b, s)),
            _ => false,
        }
    }
}

/// Point scatterer moving along time-stamped waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObject {
    waypoints: Vec<(f64, Point3)>,
    scatter_gain_db: f64,
    active_interval: (f64, f64),
}

impl DynamicObject {
    pub fn new(
        waypoints: Vec<(f64, Point3)>,
        scatter_gain_db: f64,
        active_interval: (f64, f64),
    ) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Scene("dynamic object has no waypoints".into()));
        }
        if waypoints.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(Error::Scene("non-finite waypoint".into()));
        }
        if waypoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Scene("waypoint times must be strictly increasing".into()));
        }
        if !scatter_gain_db.is_finite() {
            return Err(Error::Scene("non-finite scatter gain".into()));
        }
        let (t0, t1) = (waypoints[0].0, waypoints[waypoints.len() - 1].0);
        let (a, b) = active_interval;
        if !(a <= b && a >= t0 && b <= t1) {
            return Err(Error::Scene(format!(
                "active interval [{a}, {b}] not within waypoint span [{t0}, {t1}]"
            )));
        }
        Ok(DynamicObject { waypoints, scatter_gain_db, active_interval })
    }

    pub fn waypoints(&self) -> &[(f64, Point3)] {
        &self.waypoints
    }

    pub fn scatter_gain_db(&self) -> f64 {
        self.scatter_gain_db
    }

    pub fn active_interval(&self) -> (f64, f64) {
        self.active_interval
    }

    pub fn time_span(&self) -> (f64, f64) {
        (self.waypoints[0].0, self.waypoints[self.waypoints.len() - 1].0)
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active_interval.0 && t <= self.active_interval.1
    }

    /// Piecewise-linear position at time `t`; exact at waypoints.
    pub fn position(&self, t: f64) -> Result<Point3> {
        let (start, end) = self.time_span();
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let i = self.waypoints.partition_point(|(wt, _)| *wt <= t);
        if i == 0 {
            return Ok(self.waypoints[0].1);
        }
        let (ta, pa) = self.waypoints[i - 1];
        if ta == t || i == self.waypoints.len() {
            return Ok(pa);
        }
        let (tb, pb) = self.waypoints[i];
        Ok(pa.lerp(pb, (t - ta) / (tb - ta)))
    }

    /// Largest segment speed (m/s).
    pub fn max_speed(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[1].1.distance(w[0].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }
}

/// Free function form of [`DynamicObject::position`].
pub fn object_position(obj: &DynamicObject, t: f64) -> Result<Point3> {
    obj.position(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    surfaces: Vec<Surface>,
    tx_position: Point3,
    carrier_hz: f64,
    bandwidth_hz: f64,
    dynamic_objects: Vec<DynamicObject>,
}

impl Scene {
    pub fn new(
        surfaces: Vec<Surface>,
        tx_position: Point3,
        carrier_hz: f64,
        bandwidth_hz: f64,
        dynamic_objects: Vec<DynamicObject>,
    ) -> Result<Self> {
        if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
            return Err(Error::Scene(format!("carrier must be > 0 Hz, got {carrier_hz}")));
        }
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(Error::Scene(format!("bandwidth must be > 0 Hz, got {bandwidth_hz}")));
        }
        if !tx_position.is_finite() {
            return Err(Error::Scene("non-finite transmitter position".into()));
        }
        for (i, s) in surfaces.iter().enumerate() {
            if s.plane.signed_distance(tx_position).abs() < 1e-9 && s.contains(tx_position) {
                return Err(Error::Scene(format!("transmitter lies on surface {i}")));
            }
        }
        Ok(Scene { surfaces, tx_position, carrier_hz, bandwidth_hz, dynamic_objects })
    }

    /// Scene with no surfaces or scatterers.
    pub fn free_space(tx_position: Point3, carrier_hz: f64, bandwidth_hz: f64) -> Result<Self> {
        Self::new(Vec::new(), tx_position, carrier_hz, bandwidth_hz, Vec::new())
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.surfaces
    }

    pub fn tx_position(&self) -> Point3 {
        self.tx_position
    }

    pub fn tx_height(&self) -> f64 {
        self.tx_position.z
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }

    pub fn wavelength(&self) -> f64 {
        crate::SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn dynamic_objects(&self) -> &[DynamicObject] {
        &self.dynamic_objects
    }

    /// Whether the open segment `a`-`b` is blocked by any surface not listed
    /// in `skip`.
    pub fn blocked(&self, a: Point3, b: Point3, skip: &[usize]) -> bool {
        self.surfaces
            .iter()
            .enumerate()
            .any(|(i, s)| !skip.contains(&i) && s.intersects_segment(a, b))
    }

    /// Whether `p` has an unobstructed path to the transmitter.
    pub fn has_los(&self, p: Point3) -> bool {
        !self.blocked(self.tx_position, p, &[])
    }
}

/// Uniform row-major receiver grid at constant height.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationGrid {
    rows: usize,
    cols: usize,
    spacing_m: f64,
    origin: Point3,
    coordinates: Vec<(f64, f64)>,
}

impl LocationGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn spacing_m(&self) -> f64 {
        self.spacing_m
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn rx_height(&self) -> f64 {
        self.origin.z
    }

    pub fn coordinates(&self) -> &[(f64, f64)] {
        &self.coordinates
    }

    /// 3-D receiver position of node `k`.
    pub fn position(&self, k: usize) -> Point3 {
        let (x, y) = self.coordinates[k];
        Point3::new(x, y, self.origin.z)
    }

    /// Row and column of node `k`.
    pub fn row_col(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }
}

/// Lays out `rows x cols` nodes row-major: node `r * cols + c` sits at
/// `origin + (c * spacing, r * spacing)`.
pub fn build_grid(rows: usize, cols: usize, spacing_m: f64, origin: Point3) -> Result<LocationGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::Grid(format!("dimensions must be >= 1, got {rows}x{cols}")));
    }
    if !(spacing_m > 0.0 && spacing_m.is_finite()) {
        return Err(Error::Grid(format!("spacing must be > 0, got {spacing_m}")));
    }
    if !origin.is_finite() {
        return Err(Error::Grid("non-finite origin".into()));
    }
    let coordinates = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| {
                (origin.x + c as f64 * spacing_m, origin.y + r as f64 * spacing_m)
            })
        })
        .collect();
    Ok(LocationGrid { rows, cols, spacing_m, origin, coordinates })
}
