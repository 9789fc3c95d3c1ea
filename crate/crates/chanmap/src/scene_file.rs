//! TOML scene description.
//!
//! ```toml
//! carrier_hz = 5.5e9
//! bandwidth_hz = 1e8
//!
//! [tx]
//! position = [10.0, 14.0, 3.0]
//!
//! [grid]                      # optional, see `GridSpec`
//! rows = 5
//! cols = 800
//! spacing_m = 0.05
//! origin = [5.0, 5.0, 1.5]
//!
//! [surface.south]             # vertical wall on a floor-plan segment
//! wall = { a = [0.0, 0.0], b = [50.0, 0.0], bottom = 0.0, top = 4.0 }
//! loss_db = 6.0
//!
//! [surface.ceiling]           # or an explicit planar polygon
//! vertices = [[0, 0, 4], [50, 0, 4], [50, 20, 4], [0, 20, 4]]
//! loss_db = 10.0
//!
//! [dynamic.walker]            # rows are [t, x, y, z]
//! waypoints = [[0.0, 5.0, 10.0, 1.0], [10.0, 45.0, 10.0, 1.0]]
//! gain_db = -10.0
//! active = [0.0, 10.0]        # defaults to the waypoint span
//! ```
//!
//! Units are metres, seconds, hertz and decibels. Sections are applied in
//! name order, which fixes surface indices.

use std::collections::BTreeMap;
use std::path::Path;

use chanmap_core::geometry::Point3;
use chanmap_core::scene::{build_grid, DynamicObject, LocationGrid, Scene, Surface};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub tx: TxSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, rename = "surface")]
    pub surfaces: BTreeMap<String, SurfaceSpec>,
    #[serde(default, rename = "dynamic")]
    pub dynamic: BTreeMap<String, DynamicSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSpec {
    pub position: [f64; 3],
}

/// Receiver grid; `origin` is node (0, 0) and its `z` is the receiver height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub origin: [f64; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { rows: 5, cols: 800, spacing_m: 0.05, origin: [5.0, 5.0, 1.5] }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<LocationGrid> {
        let [x, y, z] = self.origin;
        Ok(build_grid(self.rows, self.cols, self.spacing_m, Point3::new(x, y, z))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub bottom: f64,
    pub top: f64,
}

/// Exactly one of `wall` and `vertices` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall: Option<WallSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 3]>>,
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicSpec {
    pub waypoints: Vec<[f64; 4]>,
    pub gain_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<[f64; 2]>,
}

fn point(v: [f64; 3]) -> Point3 {
    Point3::new(v[0], v[1], v[2])
}

impl SceneFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| Error::Toml { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene values are always representable")
    }

    /// Validated scene.
    pub fn scene(&self) -> Result<Scene> {
        let mut surfaces = Vec::with_capacity(self.surfaces.len());
        for (name, s) in &self.surfaces {
            let built = match (&s.wall, &s.vertices) {
                (Some(w), None) => Surface::wall((w.a[0], w.a[1]), (w.b[0], w.b[1]), w.bottom, w.top, s.loss_db),
                (None, Some(v)) => Surface::new(v.iter().copied().map(point).collect(), s.loss_db),
                _ => return Err(Error::Config(format!("surface {name}: give exactly one of wall, vertices"))),
            };
            surfaces.push(built.map_err(|e| Error::Config(format!("surface {name}: {e}")))?);
        }
        let mut objects = Vec::with_capacity(self.dynamic.len());
        for (name, d) in &self.dynamic {
            let waypoints: Vec<(f64, Point3)> =
                d.waypoints.iter().map(|w| (w[0], Point3::new(w[1], w[2], w[3]))).collect();
            let span = match (waypoints.first(), waypoints.last()) {
                (Some(a), Some(b)) => (a.0, b.0),
                _ => (0.0, 0.0),
            };
            let active = d.active.map_or(span, |a| (a[0], a[1]));
            objects.push(
                DynamicObject::new(waypoints, d.gain_db, active)
                    .map_err(|e| Error::Config(format!("dynamic {name}: {e}")))?,
            );
        }
        Ok(Scene::new(surfaces, point(self.tx.position), self.carrier_hz, self.bandwidth_hz, objects)?)
    }

    /// A 50 x 20 m hall, 4 m high, with a short interior partition and one
    /// walker crossing the room. Used when a run config names no scene.
    ///
    /// Its 5 x 800 grid is centred at (25, 5) with a spacing of 1/400 of
    /// the wavelength, so 100 observed nodes sit a tenth of a wavelength
    /// apart along the long axis.
    pub fn hall() -> Self {
        let carrier_hz = 5.5e9;
        let spacing_m = chanmap_core::SPEED_OF_LIGHT / carrier_hz / 400.0;
        let wall = |a: [f64; 2], b: [f64; 2], loss_db: f64| SurfaceSpec {
            wall: Some(WallSpec { a, b, bottom: 0.0, top: 4.0 }),
            vertices: None,
            loss_db,
        };
        let surfaces = [
            ("east", wall([50.0, 0.0], [50.0, 20.0], 6.0)),
            ("north", wall([50.0, 20.0], [0.0, 20.0], 6.0)),
            ("partition", wall([20.0, 8.0], [24.0, 8.0], 3.0)),
            ("south", wall([0.0, 0.0], [50.0, 0.0], 6.0)),
            ("west", wall([0.0, 20.0], [0.0, 0.0], 6.0)),
        ];
        let walker = DynamicSpec {
            waypoints: vec![[0.0, 20.0, 12.0, 1.0], [20.0, 45.0, 12.0, 1.0]],
            gain_db: -10.0,
            active: None,
        };
        SceneFile {
            carrier_hz,
            bandwidth_hz: 1e8,
            tx: TxSpec { position: [10.0, 14.0, 3.0] },
            grid: Some(GridSpec { rows: 5, cols: 800, spacing_m, origin: [25.0 - 400.0 * spacing_m, 5.0, 1.5] }),
            surfaces: surfaces.into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
            dynamic: BTreeMap::from([("walker".to_string(), walker)]),
        }
    }
}
