//! Pipeline stages, the end-to-end driver and the experiment sweep.
//!
//! Each `stage_*` function reads the artifacts of earlier stages from disk
//! and writes its own, so any stage can be rerun in isolation. The sweep
//! keeps everything in memory and writes only its table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chanmap_core::clock::WallClock;
use chanmap_core::graph::{
    build_wknn_graph, idw_priors, los_indicator, prepare_nodes, EdgeMetric, PreparedNodes, PriorMode, SpatialGraph,
};
use chanmap_core::hcm::{cir_to_matrix, generate_cirs, ChannelMatrix, Cir};
use chanmap_core::metrics::{evaluate_pipeline, nmse, EvalReport, Timing};
use chanmap_core::sampling::select_observed;
use chanmap_core::scene::{LocationGrid, Scene};
use chanmap_core::train::{train, TrainConfig};
use serde::Serialize;

use crate::config::{ExperimentSpec, GraphSpec, RunConfig, Variant};
use crate::error::{AtStage, Error, Result, Stage, StageError};
use crate::formats::{
    read_cirs, read_mask_csv, write_atomic, write_cdf_csv, write_cirs, write_log_csv, write_maps_csv,
    write_mask_csv, write_sweep_csv, Checkpoint, CheckpointManifest, GraphFile, MapFile, MapMeta, SweepRow,
};

/// Artifact paths of one run. [`Artifacts::new`] puts every file under
/// one directory with its standard name; fields can be overridden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub map: PathBuf,
    pub cirs: PathBuf,
    pub mask: PathBuf,
    pub graph: PathBuf,
    pub edges: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub prediction: PathBuf,
    pub baseline: PathBuf,
    pub report: PathBuf,
    pub maps_csv: PathBuf,
    pub cdf_csv: PathBuf,
    pub timings: PathBuf,
    pub sweep: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Artifacts {
            map: dir.join("map.bin"),
            cirs: dir.join("cirs.bin"),
            mask: dir.join("mask.csv"),
            graph: dir.join("graph.bin"),
            edges: dir.join("edges.csv"),
            checkpoint: dir.join("ckpt.bin"),
            train_log: dir.join("train_log.csv"),
            prediction: dir.join("pred.bin"),
            baseline: dir.join("idw.bin"),
            report: dir.join("report.json"),
            maps_csv: dir.join("maps.csv"),
            cdf_csv: dir.join("cdf.csv"),
            timings: dir.join("timings.json"),
            sweep: dir.join("sweep.csv"),
        }
    }
}

/// Ground-truth map and impulse responses for `cfg` with `seed`.
pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<(MapFile, Vec<Cir>)> {
    let (scene, grid_spec, hcm) = cfg.resolve()?;
    let grid = grid_spec.build()?;
    let cirs = generate_cirs(&scene, &grid, cfg.t, &hcm, seed)?;
    let matrices = cirs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut h = cir_to_matrix(c, &hcm.array);
            h.node_index = k;
            h.t = cfg.t;
            h
        })
        .collect();
    let meta = MapMeta {
        rows: grid_spec.rows,
        cols: grid_spec.cols,
        n_antennas: hcm.array.n_antennas,
        n_subcarriers: hcm.array.n_subcarriers,
        t: cfg.t,
        carrier_hz: scene.carrier_hz(),
        bandwidth_hz: scene.bandwidth_hz(),
        spacing_m: grid_spec.spacing_m,
        origin: grid_spec.origin,
    };
    Ok((MapFile { meta, matrices }, cirs))
}

/// W-KNN (or Euclidean KNN) graph over all grid nodes. Distributions come
/// from measured values at observed nodes and IDW priors elsewhere, for
/// every metric and prior setting. Without a scene every pair counts as LoS.
pub fn build_graph(
    grid: &LocationGrid,
    truth: &[ChannelMatrix],
    observed: &[bool],
    scene: Option<&Scene>,
    spec: &GraphSpec,
    idw_power: f64,
) -> Result<SpatialGraph> {
    let prep = prepare_nodes(grid.coordinates(), truth, observed, spec.feature_mode, idw_power, PriorMode::Idw)?;
    graph_from_prepared(grid, &prep, scene, spec)
}

fn graph_from_prepared(
    grid: &LocationGrid,
    prep: &PreparedNodes,
    scene: Option<&Scene>,
    spec: &GraphSpec,
) -> Result<SpatialGraph> {
    let los = |a: usize, b: usize| scene.is_none_or(|s| los_indicator(s, grid.position(a), grid.position(b)));
    Ok(build_wknn_graph(grid.coordinates(), &prep.distributions, &spec.graph_config(), los)?)
}

/// IDW prediction: priors at unobserved nodes, measurements elsewhere.
pub fn idw_baseline(
    coords: &[(f64, f64)],
    truth: &[ChannelMatrix],
    observed: &[bool],
    idw_power: f64,
) -> Result<Vec<ChannelMatrix>> {
    let priors = idw_priors(coords, truth, observed, idw_power)?;
    Ok(fill_observed(priors.into_iter().map(|p| p.unwrap_or_else(|| ChannelMatrix::zeros(0, 0))).collect(), truth, observed))
}

/// Replaces predictions at observed nodes by the measurements.
fn fill_observed(mut pred: Vec<ChannelMatrix>, truth: &[ChannelMatrix], observed: &[bool]) -> Vec<ChannelMatrix> {
    for (k, h) in pred.iter_mut().enumerate() {
        if observed[k] {
            *h = truth[k].clone();
        }
        h.node_index = k;
    }
    pred
}

fn manifest(cfg: &TrainConfig, out: &chanmap_core::train::TrainOutcome, seed: u64) -> CheckpointManifest {
    let m = &out.model;
    CheckpointManifest {
        dims: m.params.dims,
        feature_mode: m.mode,
        n_antennas: m.n_antennas,
        n_subcarriers: m.n_subcarriers,
        seed,
        train: cfg.clone(),
        epochs_run: out.log.len(),
        best_epoch: out.best_epoch,
        best_val_nmse: out.best_val_nmse,
        initial_val_nmse: out.initial_val_nmse,
        stopped_early: out.stopped_early,
    }
}

/// Trains on `graph` and returns the checkpoint with the training log.
pub fn train_checkpoint(
    graph: &SpatialGraph,
    prep: &PreparedNodes,
    shape: (usize, usize),
    spec: &GraphSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Checkpoint, Vec<chanmap_core::train::LogRow>)> {
    let out = train(graph, &prep.nodes, shape, spec.feature_mode, cfg, seed, &WallClock::new())?;
    let ckpt = Checkpoint { manifest: manifest(cfg, &out, seed), model: out.model };
    Ok((ckpt, out.log))
}

/// Network predictions at every node, measurements kept at observed ones.
pub fn predict(
    ckpt: &Checkpoint,
    graph: &SpatialGraph,
    truth: &[ChannelMatrix],
    observed: &[bool],
) -> Result<Vec<ChannelMatrix>> {
    let t = &ckpt.manifest.train;
    let prep = prepare_nodes(graph.coords(), truth, observed, ckpt.model.mode, t.idw_power, t.prior)?;
    let pred = ckpt.model.predict(graph, &prep.nodes)?;
    Ok(fill_observed(pred, truth, observed))
}

/// Seconds spent per stage, kept next to the artifacts.
pub type StageTimes = BTreeMap<String, f64>;

fn read_times(path: &Path) -> StageTimes {
    std::fs::read(path).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default()
}

fn record_time(art: &Artifacts, stage: Stage, seconds: f64) -> Result<()> {
    let mut times = read_times(&art.timings);
    times.insert(stage.to_string(), seconds);
    write_atomic(&art.timings, &serde_json::to_vec_pretty(&times)?)
}

fn check_len(path: &Path, what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::format(path, format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

/// Writes `map.bin` and `cirs.bin`.
pub fn stage_simulate(cfg: &RunConfig, art: &Artifacts) -> Result<MapFile> {
    let start = Instant::now();
    let (map, cirs) = simulate(cfg, cfg.seed)?;
    let seconds = start.elapsed().as_secs_f64();
    map.write(&art.map)?;
    write_cirs(&art.cirs, &cirs)?;
    record_time(art, Stage::Simulate, seconds)?;
    Ok(map)
}

/// Writes `mask.csv` for the map in `art`.
pub fn stage_mask(cfg: &RunConfig, art: &Artifacts) -> Result<Vec<bool>> {
    let map = MapFile::read(&art.map)?;
    let grid = map.meta.grid()?;
    let mask = select_observed(&grid, cfg.observe.count)?;
    write_mask_csv(&art.mask, &grid, &mask)?;
    Ok(mask)
}

/// Writes `graph.bin` and `edges.csv`.
pub fn stage_build_graph(cfg: &RunConfig, scene: Option<&Scene>, art: &Artifacts) -> Result<GraphFile> {
    let start = Instant::now();
    let map = MapFile::read(&art.map)?;
    let observed = read_mask_csv(&art.mask)?;
    check_len(&art.mask, "mask", observed.len(), map.matrices.len())?;
    let grid = map.meta.grid()?;
    let graph = build_graph(&grid, &map.matrices, &observed, scene, &cfg.graph, cfg.train.idw_power)?;
    let file = GraphFile { graph, observed };
    file.write(&art.graph)?;
    file.write_edges_csv(&art.edges)?;
    record_time(art, Stage::BuildGraph, start.elapsed().as_secs_f64())?;
    Ok(file)
}

/// Writes `ckpt.bin` and `train_log.csv`. Only observed entries of the map
/// are read.
pub fn stage_train(cfg: &RunConfig, art: &Artifacts) -> Result<Checkpoint> {
    let start = Instant::now();
    let g = GraphFile::read(&art.graph)?;
    let map = MapFile::read(&art.map)?;
    check_len(&art.map, "map", map.matrices.len(), g.graph.n_nodes())?;
    let t = &cfg.train;
    let prep = prepare_nodes(g.graph.coords(), &map.matrices, &g.observed, cfg.graph.feature_mode, t.idw_power, t.prior)?;
    let shape = (map.meta.n_antennas, map.meta.n_subcarriers);
    let (ckpt, log) = train_checkpoint(&g.graph, &prep, shape, &cfg.graph, t, cfg.seed)?;
    ckpt.write(&art.checkpoint)?;
    write_log_csv(&art.train_log, &log)?;
    record_time(art, Stage::Train, start.elapsed().as_secs_f64())?;
    Ok(ckpt)
}

/// Writes `pred.bin` and the IDW baseline `idw.bin`.
pub fn stage_infer(art: &Artifacts) -> Result<MapFile> {
    let ckpt = Checkpoint::read(&art.checkpoint)?;
    let g = GraphFile::read(&art.graph)?;
    let map = MapFile::read(&art.map)?;
    check_len(&art.map, "map", map.matrices.len(), g.graph.n_nodes())?;
    if (map.meta.n_antennas, map.meta.n_subcarriers) != (ckpt.model.n_antennas, ckpt.model.n_subcarriers) {
        return Err(Error::Config("checkpoint and map disagree on N x L".into()));
    }
    let start = Instant::now();
    let matrices = predict(&ckpt, &g.graph, &map.matrices, &g.observed)?;
    let seconds = start.elapsed().as_secs_f64();
    let idw_power = ckpt.manifest.train.idw_power;
    let baseline = idw_baseline(g.graph.coords(), &map.matrices, &g.observed, idw_power)?;
    let pred = MapFile { meta: map.meta, matrices };
    pred.write(&art.prediction)?;
    MapFile { meta: map.meta, matrices: baseline }.write(&art.baseline)?;
    record_time(art, Stage::Infer, seconds)?;
    Ok(pred)
}

#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    schema: u32,
    files: BTreeMap<&'static str, String>,
    stage_seconds: &'a StageTimes,
    #[serde(flatten)]
    report: &'a EvalReport,
}

/// Writes `report.json`, `maps.csv` and `cdf.csv`. The baseline and the
/// impulse responses are optional.
pub fn stage_eval(art: &Artifacts) -> Result<EvalReport> {
    let truth = MapFile::read(&art.map)?;
    let pred = MapFile::read(&art.prediction)?;
    let observed = read_mask_csv(&art.mask)?;
    let n = truth.matrices.len();
    check_len(&art.prediction, "prediction", pred.matrices.len(), n)?;
    check_len(&art.mask, "mask", observed.len(), n)?;
    let baseline = art.baseline.is_file().then(|| MapFile::read(&art.baseline)).transpose()?;
    let cirs = art.cirs.is_file().then(|| read_cirs(&art.cirs)).transpose()?;
    let times = read_times(&art.timings);
    let timing = Timing {
        model_stage_s: times.get("simulate").copied().unwrap_or(0.0),
        data_stage_s: times.get("infer").copied().unwrap_or(0.0),
    };
    let report = evaluate_pipeline(
        &truth.matrices,
        &pred.matrices,
        &observed,
        baseline.as_ref().map(|b| b.matrices.as_slice()),
        cirs.as_deref(),
        timing,
    )?;
    let mut files = BTreeMap::new();
    let name = |p: &Path| p.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    files.insert("truth", name(&art.map));
    files.insert("prediction", name(&art.prediction));
    files.insert("mask", name(&art.mask));
    if baseline.is_some() {
        files.insert("baseline", name(&art.baseline));
    }
    if cirs.is_some() {
        files.insert("cirs", name(&art.cirs));
    }
    let json = ReportJson { schema: crate::config::SCHEMA, files, stage_seconds: &times, report: &report };
    write_atomic(&art.report, &serde_json::to_vec_pretty(&json)?)?;
    write_maps_csv(&art.maps_csv, &truth.meta.grid()?, &observed, &report)?;
    write_cdf_csv(&art.cdf_csv, &report)?;
    Ok(report)
}

/// Runs every stage into `out_dir` (or the config's `out_dir`).
pub fn run_pipeline(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<EvalReport, StageError> {
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory given".into()))
        .at(Stage::Config)?;
    let art = Artifacts::new(dir);
    let (scene, _, _) = cfg.resolve().at(Stage::Config)?;
    stage_simulate(cfg, &art).at(Stage::Simulate)?;
    stage_mask(cfg, &art).at(Stage::Mask)?;
    stage_build_graph(cfg, Some(&scene), &art).at(Stage::BuildGraph)?;
    stage_train(cfg, &art).at(Stage::Train)?;
    stage_infer(&art).at(Stage::Infer)?;
    stage_eval(&art).at(Stage::Eval)
}

/// Maps `f` over `items` on up to `jobs` scoped threads, keeping input order.
fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot is filled")).collect()
}

struct Prepared {
    count: usize,
    seed: u64,
    observed: Vec<bool>,
    idw: PreparedNodes,
    zero: Option<PreparedNodes>,
    graph_w: Option<SpatialGraph>,
    graph_euc: Option<SpatialGraph>,
    baseline: Vec<ChannelMatrix>,
    idw_s: f64,
}

/// Runs the sweep of `spec` around `base`; one row per cell in
/// [`ExperimentSpec::cells`] order. Writes `sweep.csv` when `out_dir` is set.
pub fn run_experiment(spec: &ExperimentSpec, base: &RunConfig, out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    base.validate()?;
    let (scene, grid_spec, _) = base.resolve()?;
    let grid = grid_spec.build()?;
    let cells = spec.cells();
    let jobs = spec.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let needs = |c: usize, v: Variant| cells.iter().any(|&(cc, vv, _)| cc == c && vv == v);

    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let truths: Vec<Result<MapFile>> = par_map(jobs, &seeds, |&s| simulate(base, s).map(|(m, _)| m));
    let truths: BTreeMap<u64, MapFile> = seeds.iter().copied().zip(truths).map(|(s, m)| m.map(|m| (s, m))).collect::<Result<_>>()?;

    let mut counts = spec.counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let groups: Vec<(usize, u64)> = counts.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let t = &base.train;
    let mode = base.graph.feature_mode;
    let prepared = par_map(jobs, &groups, |&(count, seed)| -> Result<Prepared> {
        let truth = &truths[&seed].matrices;
        let observed = select_observed(&grid, count)?;
        let coords = grid.coordinates();
        let start = Instant::now();
        let idw = prepare_nodes(coords, truth, &observed, mode, t.idw_power, PriorMode::Idw)?;
        let idw_s = start.elapsed().as_secs_f64();
        let baseline = fill_observed(
            idw.priors.iter().map(|p| p.clone().unwrap_or_else(|| ChannelMatrix::zeros(0, 0))).collect(),
            truth,
            &observed,
        );
        let zero = needs(count, Variant::NoPrior)
            .then(|| prepare_nodes(coords, truth, &observed, mode, t.idw_power, PriorMode::Zero))
            .transpose()?;
        let w_spec = GraphSpec { metric: EdgeMetric::Wasserstein, ..base.graph };
        let e_spec = GraphSpec { metric: EdgeMetric::Euclidean, ..base.graph };
        let graph_w = (needs(count, Variant::Full) || needs(count, Variant::NoPrior))
            .then(|| graph_from_prepared(&grid, &idw, Some(&scene), &w_spec))
            .transpose()?;
        let graph_euc = needs(count, Variant::NoWEdges)
            .then(|| graph_from_prepared(&grid, &idw, Some(&scene), &e_spec))
            .transpose()?;
        Ok(Prepared { count, seed, observed, idw, zero, graph_w, graph_euc, baseline, idw_s })
    });
    let prepared: Vec<Prepared> = prepared.into_iter().collect::<Result<_>>()?;
    let find = |c: usize, s: u64| prepared.iter().find(|p| p.count == c && p.seed == s).expect("prepared group");
    let shape = (base.channel.n_antennas, base.channel.n_subcarriers);

    let rows = par_map(jobs, &cells, |&(count, variant, seed)| -> Result<SweepRow> {
        let p = find(count, seed);
        let truth = &truths[&seed].matrices;
        let unobserved: Vec<usize> = (0..truth.len()).filter(|&k| !p.observed[k]).collect();
        let (graph, nodes, cfg) = match variant {
            Variant::IdwBaseline => {
                return Ok(SweepRow {
                    density: count,
                    variant: variant.name().into(),
                    seed,
                    nmse: nmse(&p.baseline, truth, &unobserved)?,
                    train_s: 0.0,
                    infer_s: p.idw_s,
                });
            }
            Variant::Full => (p.graph_w.as_ref(), &p.idw, t.clone()),
            Variant::NoWEdges => (p.graph_euc.as_ref(), &p.idw, t.clone()),
            Variant::NoPrior => (p.graph_w.as_ref(), p.zero.as_ref().expect("zero-prior nodes"), TrainConfig { prior: PriorMode::Zero, ..t.clone() }),
        };
        let graph = graph.expect("graph for variant");
        let start = Instant::now();
        let (ckpt, _) = train_checkpoint(graph, nodes, shape, &base.graph, &cfg, seed)?;
        let train_s = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let pred = fill_observed(ckpt.model.predict(graph, &nodes.nodes)?, truth, &p.observed);
        let infer_s = start.elapsed().as_secs_f64();
        Ok(SweepRow {
            density: count,
            variant: variant.name().into(),
            seed,
            nmse: nmse(&pred, truth, &unobserved)?,
            train_s,
            infer_s,
        })
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    if let Some(dir) = out_dir {
        write_sweep_csv(&Artifacts::new(dir).sweep, &rows)?;
    }
    Ok(rows)
}

/// Median of the `variant` NMSE values at `density`.
pub fn median_nmse(rows: &[SweepRow], density: usize, variant: Variant) -> Option<f64> {
    let mut v: Vec<f64> =
        rows.iter().filter(|r| r.density == density && r.variant == variant.name()).map(|r| r.nmse).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
