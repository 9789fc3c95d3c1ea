//! On-disk artifacts.
//!
//! Binary files share a 16-byte header: an 8-byte magic, a little-endian
//! `u32` format version and the `u32` marker `0x01020304`, also written
//! little-endian so a reader on any host can tell a byte-swapped file. All
//! integers are `u64` and all reals `f64`, little-endian. Checkpoints end
//! with the SHA-256 of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use chanmap_core::geometry::Point3;
use chanmap_core::gnn::{GnnDims, GnnParams};
use chanmap_core::graph::{EdgeFeature, EdgeMetric, FeatureMode, GraphEdge, SpatialGraph, Standardizer};
use chanmap_core::hcm::{ChannelMatrix, Cir, Tap};
use chanmap_core::scene::{build_grid, LocationGrid};
use chanmap_core::train::{LogRow, TrainConfig, TrainedModel};
use chanmap_core::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 8] = b"CHANMAP\0";
pub const CIR_MAGIC: &[u8; 8] = b"CHANCIR\0";
pub const GRAPH_MAGIC: &[u8; 8] = b"CHGRAPH\0";
pub const CKPT_MAGIC: &[u8; 8] = b"CHCKPT\0\0";
pub const VERSION: u32 = 1;
const ENDIAN_MARK: u32 = 0x0102_0304;

struct Out(Vec<u8>);

impl Out {
    fn new(magic: &[u8; 8]) -> Self {
        let mut o = Out(Vec::new());
        o.0.extend_from_slice(magic);
        o.0.extend_from_slice(&VERSION.to_le_bytes());
        o.0.extend_from_slice(&ENDIAN_MARK.to_le_bytes());
        o
    }

    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len());
        self.0.extend_from_slice(b);
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> In<'a> {
    fn open(buf: &'a [u8], path: &'a Path, magic: &[u8; 8]) -> Result<Self> {
        let mut r = In { buf, pos: 0, path };
        if r.take(8)? != magic {
            return Err(r.err(format!("not a {} file", String::from_utf8_lossy(&magic[..7]).trim_end_matches('\0'))));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let mark = r.take(4)?;
        if mark == ENDIAN_MARK.to_be_bytes() {
            return Err(r.err("byte-swapped file"));
        }
        if mark != ENDIAN_MARK.to_le_bytes() {
            return Err(r.err("bad endianness marker"));
        }
        if version != VERSION {
            return Err(r.err(format!("unsupported format version {version}")));
        }
        Ok(r)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| self.err("count overflows usize"))
    }

    /// A count whose items take at least `item_bytes` each; rejects counts
    /// the remaining input cannot hold before anything is allocated.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.checked_mul(item_bytes).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(self.err("truncated file"));
        }
        Ok(n)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(self.err("truncated file"));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count(1)?;
        self.take(n)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Grid and radio parameters stored with a channel map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub rows: usize,
    pub cols: usize,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub t: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub spacing_m: f64,
    pub origin: [f64; 3],
}

impl MapMeta {
    pub fn grid(&self) -> Result<LocationGrid> {
        let [x, y, z] = self.origin;
        Ok(build_grid(self.rows, self.cols, self.spacing_m, Point3::new(x, y, z))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFile {
    pub meta: MapMeta,
    /// One matrix per grid node in grid order.
    pub matrices: Vec<ChannelMatrix>,
}

impl MapFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let m = &self.meta;
        if self.matrices.len() != m.rows * m.cols {
            return Err(Error::Config(format!(
                "map holds {} matrices for a {} x {} grid",
                self.matrices.len(),
                m.rows,
                m.cols
            )));
        }
        let mut o = Out::new(MAP_MAGIC);
        for v in [m.rows, m.cols, m.n_antennas, m.n_subcarriers] {
            o.u64(v);
        }
        o.f64s(&[m.t, m.carrier_hz, m.bandwidth_hz, m.spacing_m]);
        o.f64s(&m.origin);
        for h in &self.matrices {
            if h.n_antennas != m.n_antennas || h.n_subcarriers != m.n_subcarriers {
                return Err(chanmap_core::Error::Shape("map matrices differ in shape".into()).into());
            }
            for z in &h.entries {
                o.f64(z.re);
                o.f64(z.im);
            }
        }
        Ok(o.0)
    }

    pub fn decode(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = In::open(buf, path, MAP_MAGIC)?;
        let (rows, cols, na, nl) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let v = r.f64s(7)?;
        let meta = MapMeta {
            rows,
            cols,
            n_antennas: na,
            n_subcarriers: nl,
            t: v[0],
            carrier_hz: v[1],
            bandwidth_hz: v[2],
            spacing_m: v[3],
            origin: [v[4], v[5], v[6]],
        };
        let per = na.checked_mul(nl).ok_or_else(|| r.err("matrix size overflows"))?;
        let total = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(per))
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| r.err("map size overflows"))?;
        let data = r.f64s(total)?;
        r.finish()?;
        let matrices = data
            .chunks_exact(2 * per)
            .enumerate()
            .map(|(k, c)| {
                let entries = c.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                let mut h = ChannelMatrix::from_entries(na, nl, entries)?;
                h.node_index = k;
                h.t = meta.t;
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MapFile { meta, matrices })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_all(path)?, path)
    }

    /// Long-form CSV: one row per matrix entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let grid = self.meta.grid()?;
        let mut w = csv_writer(path)?;
        w.write_record(["node", "row", "col", "x", "y", "antenna", "subcarrier", "re", "im"])?;
        for (k, h) in self.matrices.iter().enumerate() {
            let (row, col) = grid.row_col(k);
            let (x, y) = grid.coordinates()[k];
            for a in 0..h.n_antennas {
                for f in 0..h.n_subcarriers {
                    let z = h.get(a, f);
                    w.serialize((k, row, col, x, y, a, f, z.re, z.im))?;
                }
            }
        }
        flush(w, path)
    }
}

/// Ground-truth impulse responses, one per grid node.
pub fn encode_cirs(cirs: &[Cir]) -> Vec<u8> {
    let mut o = Out::new(CIR_MAGIC);
    o.u64(cirs.len());
    for c in cirs {
        o.u64(c.node_index);
        o.f64(c.t);
        o.u64(c.taps.len());
        for t in &c.taps {
            o.f64s(&[t.amplitude.re, t.amplitude.im, t.delay_s, t.aoa_rad]);
        }
    }
    o.0
}

pub fn decode_cirs(buf: &[u8], path: &Path) -> Result<Vec<Cir>> {
    let mut r = In::open(buf, path, CIR_MAGIC)?;
    let n = r.count(24)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let node_index = r.u64()?;
        let t = r.f64()?;
        let m = r.count(32)?;
        let taps = (0..m)
            .map(|_| {
                let v = r.f64s(4)?;
                Ok(Tap { amplitude: Complex64::new(v[0], v[1]), delay_s: v[2], aoa_rad: v[3] })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Cir { taps, t, node_index });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_cirs(path: &Path, cirs: &[Cir]) -> Result<()> {
    write_atomic(path, &encode_cirs(cirs))
}

pub fn read_cirs(path: &Path) -> Result<Vec<Cir>> {
    decode_cirs(&read_all(path)?, path)
}

/// A graph together with the observation mask it was built for.
#[derive(Debug, Clone)]
pub struct GraphFile {
    pub graph: SpatialGraph,
    pub observed: Vec<bool>,
}

fn metric_code(m: EdgeMetric) -> u8 {
    match m {
        EdgeMetric::Wasserstein => 0,
        EdgeMetric::Euclidean => 1,
    }
}

impl GraphFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let g = &self.graph;
        if self.observed.len() != g.n_nodes() {
            return Err(chanmap_core::Error::Shape("mask length differs from node count".into()).into());
        }
        let mut o = Out::new(GRAPH_MAGIC);
        o.u64(g.n_nodes());
        o.u64(g.k());
        o.u8(metric_code(g.metric()));
        o.f64(g.tau_w());
        o.f64(g.dist_scale());
        for &(x, y) in g.coords() {
            o.f64(x);
            o.f64(y);
        }
        for &b in &self.observed {
            o.u8(b as u8);
        }
        o.u64(g.n_edges());
        for e in g.edges() {
            o.u64(e.u);
            o.u64(e.v);
            let f = e.feature;
            o.f64s(&[f.dx, f.dy, f.d_euc, f.w_dist]);
            o.u8(f.los as u8);
            o.f64(e.weight);
        }
        Ok(o.0)
    }

    pub fn decode(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = In::open(buf, path, GRAPH_MAGIC)?;
        let n = r.count(17)?;
        let k = r.u64()?;
        let metric = match r.u8()? {
            0 => EdgeMetric::Wasserstein,
            1 => EdgeMetric::Euclidean,
            c => return Err(r.err(format!("unknown edge metric code {c}"))),
        };
        let tau_w = r.f64()?;
        let dist_scale = r.f64()?;
        let xy = r.f64s(2 * n)?;
        let coords = xy.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let observed = (0..n)
            .map(|_| match r.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                c => Err(r.err(format!("bad mask byte {c}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let m = r.count(57)?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let (u, v) = (r.u64()?, r.u64()?);
            let f = r.f64s(4)?;
            let los = r.u8()? != 0;
            let weight = r.f64()?;
            edges.push(GraphEdge {
                u,
                v,
                feature: EdgeFeature { dx: f[0], dy: f[1], d_euc: f[2], w_dist: f[3], los },
                weight,
            });
        }
        r.finish()?;
        let graph = SpatialGraph::from_parts(coords, edges, k, metric, tau_w, dist_scale)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(GraphFile { graph, observed })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_all(path)?, path)
    }

    pub fn write_edges_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["u", "v", "dx", "dy", "d_euc", "w_dist", "los", "weight"])?;
        for e in self.graph.edges() {
            let f = e.feature;
            w.serialize((e.u, e.v, f.dx, f.dy, f.d_euc, f.w_dist, f.los as u8, e.weight))?;
        }
        flush(w, path)
    }
}

/// Everything about a checkpoint except the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dims: GnnDims,
    pub feature_mode: FeatureMode,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_nmse: Option<f64>,
    pub initial_val_nmse: Option<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        if m.params.dims != self.manifest.dims || m.mode != self.manifest.feature_mode {
            return Err(Error::Config("checkpoint manifest disagrees with the model".into()));
        }
        let mut o = Out::new(CKPT_MAGIC);
        o.bytes(&serde_json::to_vec(&self.manifest)?);
        o.u64(m.standardizer.dim());
        o.f64s(&m.standardizer.mean);
        o.f64s(&m.standardizer.std);
        o.u64(m.params.len());
        o.f64s(&m.params.data);
        let digest = Sha256::digest(&o.0);
        o.0.extend_from_slice(&digest);
        Ok(o.0)
    }

    pub fn decode(buf: &[u8], path: &Path) -> Result<Self> {
        if buf.len() < 32 {
            return Err(Error::format(path, "truncated file"));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        let mut r = In::open(body, path, CKPT_MAGIC)?;
        if Sha256::digest(body).as_slice() != digest {
            return Err(r.err("checksum mismatch"));
        }
        let manifest: CheckpointManifest =
            serde_json::from_slice(r.bytes()?).map_err(|e| Error::format(path, format!("manifest: {e}")))?;
        let f = r.count(16)?;
        let mean = r.f64s(f)?;
        let std = r.f64s(f)?;
        let n = r.count(8)?;
        let data = r.f64s(n)?;
        r.finish()?;
        let params = GnnParams::from_flat(manifest.dims, data).map_err(|e| Error::format(path, e.to_string()))?;
        if f != manifest.dims.feature_dim {
            return Err(Error::format(path, "standardizer width differs from the feature dimension"));
        }
        let model = TrainedModel {
            params,
            standardizer: Standardizer { mean, std },
            mode: manifest.feature_mode,
            n_antennas: manifest.n_antennas,
            n_subcarriers: manifest.n_subcarriers,
        };
        Ok(Checkpoint { manifest, model })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_all(path)?, path)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let d = Sha256::digest(read_all(path)?);
    Ok(d.iter().map(|b| format!("{b:02x}")).collect())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskRow {
    node: usize,
    row: usize,
    col: usize,
    observed: u8,
}

pub fn write_mask_csv(path: &Path, grid: &LocationGrid, observed: &[bool]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (k, &o) in observed.iter().enumerate() {
        let (row, col) = grid.row_col(k);
        w.serialize(MaskRow { node: k, row, col, observed: o as u8 })?;
    }
    flush(w, path)
}

/// Reads a mask written by [`write_mask_csv`]; rows must list nodes in order.
pub fn read_mask_csv(path: &Path) -> Result<Vec<bool>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(f).deserialize::<MaskRow>().enumerate() {
        let row = row?;
        if row.node != i || row.observed > 1 {
            return Err(Error::format(path, format!("bad mask row {}", i + 1)));
        }
        out.push(row.observed == 1);
    }
    Ok(out)
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "L_r", "L_s", "L_p", "total", "val_nmse", "lr", "seconds"])?;
    for r in log {
        let l = r.losses;
        w.serialize((r.epoch, l.reconstruction, l.smoothness, l.prior, l.total(), r.val_nmse, r.lr, r.seconds))?;
    }
    flush(w, path)
}

/// One cell of an experiment sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub density: usize,
    pub variant: String,
    pub seed: u64,
    pub nmse: f64,
    pub train_s: f64,
    pub infer_s: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    flush(w, path)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f).deserialize().collect::<Result<_, _>>()?)
}

/// Per-node power and dispersion maps next to an evaluation report.
pub fn write_maps_csv(
    path: &Path,
    grid: &LocationGrid,
    observed: &[bool],
    report: &chanmap_core::metrics::EvalReport,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["node", "x", "y", "observed", "power", "predicted_power", "delay_spread_s", "angle_spread_rad"])?;
    for k in 0..grid.len() {
        let (x, y) = grid.coordinates()[k];
        w.serialize((
            k,
            x,
            y,
            observed[k] as u8,
            report.power_map[k],
            report.predicted_power_map[k],
            report.ds_map.as_ref().map(|m| m[k]),
            report.as_map.as_ref().map(|m| m[k]),
        ))?;
    }
    flush(w, path)
}

/// Empirical CDFs in long form: `kind, value, probability`.
pub fn write_cdf_csv(path: &Path, report: &chanmap_core::metrics::EvalReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "value", "probability"])?;
    let kinds = [
        ("predicted_power_db", Some(&report.power_cdf_db)),
        ("delay_spread_s", report.ds_cdf.as_ref()),
        ("angle_spread_rad", report.as_cdf.as_ref()),
    ];
    for (kind, cdf) in kinds {
        for &(v, p) in cdf.into_iter().flatten() {
            w.serialize((kind, v, p))?;
        }
    }
    flush(w, path)
}
