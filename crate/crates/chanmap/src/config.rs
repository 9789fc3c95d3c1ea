//! Run and experiment configuration files.
//!
//! Both are TOML with a `schema` version. Every field has a default, so an
//! empty run config is valid: the built-in hall scene, a 5 x 800 grid, 100
//! observed nodes and the standard training hyperparameters.

use std::path::{Path, PathBuf};

use chanmap_core::graph::{EdgeMetric, FeatureMode, GraphConfig};
use chanmap_core::hcm::{ArrayConfig, DmcConfig, DynamicConfig, HcmConfig, MixRatios};
use chanmap_core::scene::Scene;
use chanmap_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_file::{GridSpec, SceneFile};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    /// Scene file; relative paths are resolved against the config file.
    Path(PathBuf),
    Inline(Box<SceneFile>),
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Inline(Box::new(SceneFile::hall()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    pub scene: SceneSource,
    /// Overrides the scene file's grid.
    pub grid: Option<GridSpec>,
    /// Snapshot time (s).
    pub t: f64,
    pub out_dir: Option<PathBuf>,
    pub channel: ChannelSpec,
    pub observe: ObserveSpec,
    pub graph: GraphSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA,
            seed: 1,
            scene: SceneSource::default(),
            grid: None,
            t: 0.0,
            out_dir: None,
            channel: ChannelSpec::default(),
            observe: ObserveSpec::default(),
            graph: GraphSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    /// Specular-to-dynamic power ratio; `inf` removes the dynamic part.
    pub k_d_db: f64,
    /// Specular-to-diffuse power ratio; `inf` removes the diffuse part.
    pub k_dmc_db: f64,
    pub dmc: DmcConfig,
    pub dynamic: DynamicConfig,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            n_antennas: 4,
            n_subcarriers: 16,
            k_d_db: 5.0,
            k_dmc_db: 5.0,
            dmc: DmcConfig::default(),
            dynamic: DynamicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserveSpec {
    pub count: usize,
    pub rule: SelectionRule,
}

impl Default for ObserveSpec {
    fn default() -> Self {
        ObserveSpec { count: 100, rule: SelectionRule::Uniform }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub k: usize,
    /// Fixed edge-weight temperature; omitted means the median edge distance.
    pub tau_w: Option<f64>,
    pub metric: EdgeMetric,
    pub feature_mode: FeatureMode,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec { k: 10, tau_w: None, metric: EdgeMetric::Wasserstein, feature_mode: FeatureMode::Concat }
    }
}

impl GraphSpec {
    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig { k: self.k, tau_w: self.tau_w, metric: self.metric }
    }
}

fn check_schema(schema: u32, path: &Path) -> Result<()> {
    if schema != SCHEMA {
        return Err(Error::Config(format!(
            "{}: schema {schema} is not supported (expected {SCHEMA})",
            path.display()
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|source| Error::Toml { path: path.to_path_buf(), source })?;
        check_schema(cfg.schema, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let SceneSource::Path(p) = &mut cfg.scene {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(d) = &mut cfg.out_dir {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable")
    }

    pub fn scene_file(&self) -> Result<SceneFile> {
        match &self.scene {
            SceneSource::Path(p) => SceneFile::load(p),
            SceneSource::Inline(s) => Ok((**s).clone()),
        }
    }

    /// Scene, effective grid spec and channel model settings.
    pub fn resolve(&self) -> Result<(Scene, GridSpec, HcmConfig)> {
        self.validate()?;
        let file = self.scene_file()?;
        let scene = file.scene()?;
        let grid = self.grid.or(file.grid).unwrap_or_default();
        let c = &self.channel;
        let hcm = HcmConfig {
            ratios: MixRatios::new(10f64.powf(c.k_d_db / 10.0), 10f64.powf(c.k_dmc_db / 10.0))?,
            dmc: c.dmc,
            dynamic: c.dynamic,
            array: ArrayConfig::half_wavelength(c.n_antennas, c.n_subcarriers, scene.carrier_hz(), scene.bandwidth_hz()),
        };
        hcm.array.validate()?;
        Ok((scene, grid, hcm))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("schema {} is not supported (expected {SCHEMA})", self.schema)));
        }
        if let SceneSource::Path(p) = &self.scene {
            if !p.is_file() {
                return Err(Error::Config(format!("scene file {} does not exist", p.display())));
            }
        }
        if !self.t.is_finite() {
            return Err(Error::Config("t must be finite".into()));
        }
        if self.channel.k_d_db.is_nan() || self.channel.k_dmc_db.is_nan() {
            return Err(Error::Config("mix ratios must not be NaN".into()));
        }
        if self.observe.count == 0 {
            return Err(Error::Config("observe.count must be >= 1".into()));
        }
        if self.graph.k == 0 {
            return Err(Error::Config("graph.k must be >= 1".into()));
        }
        self.channel.dmc.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// One arm of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Euclidean instead of Wasserstein neighbour selection.
    NoWEdges,
    /// Unobserved nodes start from zeros instead of IDW priors.
    NoPrior,
    /// The IDW priors themselves, untrained.
    IdwBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoWEdges, Variant::NoPrior, Variant::IdwBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoWEdges => "no-w-edges",
            Variant::NoPrior => "no-prior",
            Variant::IdwBaseline => "idw-baseline",
        }
    }

    pub fn is_ablation(self) -> bool {
        matches!(self, Variant::NoWEdges | Variant::NoPrior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: u32,
    /// Observed-node counts to sweep.
    pub counts: Vec<usize>,
    /// One repetition per seed; each seed draws its own ground truth.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Restricts ablation variants to these counts; all counts when omitted.
    pub ablation_counts: Option<Vec<usize>>,
    /// Worker threads; defaults to the available parallelism.
    pub jobs: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schema: SCHEMA,
            counts: vec![25, 50, 100, 200],
            seeds: vec![1, 2, 3],
            variants: Variant::ALL.to_vec(),
            ablation_counts: None,
            jobs: None,
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|source| Error::Toml { path: path.to_path_buf(), source })?;
        check_schema(spec.schema, path)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.counts.contains(&0) {
            return Err(Error::Config("counts must be non-empty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }

    /// Cells in output order: count, then variant, then seed.
    pub fn cells(&self) -> Vec<(usize, Variant, u64)> {
        let mut variants = self.variants.clone();
        variants.sort();
        variants.dedup();
        let mut out = Vec::new();
        for &c in &self.counts {
            for &v in &variants {
                if v.is_ablation() && self.ablation_counts.as_ref().is_some_and(|a| !a.contains(&c)) {
                    continue;
                }
                out.extend(self.seeds.iter().map(|&s| (c, v, s)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = RunConfig::parse("", Path::new("run.toml")).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.hidden, 64);
        assert_eq!(cfg.train.layers, 2);
        assert_eq!(cfg.graph.k, 10);
        assert_eq!(cfg.train.optimizer.lr, 1e-3);
        let (_, grid, hcm) = cfg.resolve().unwrap();
        assert_eq!((grid.rows, grid.cols), (5, 800));
        assert_eq!((hcm.array.n_antennas, hcm.array.n_subcarriers), (4, 16));
    }

    #[test]
    fn round_trip_and_infinite_ratios() {
        let text = "schema = 1\nseed = 9\n[channel]\nk_d_db = inf\n[train]\nhidden = 8\n[train.optimizer]\nlr = 0.01\n";
        let cfg = RunConfig::parse(text, Path::new("run.toml")).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.channel.k_d_db.is_infinite());
        assert_eq!(cfg.train.hidden, 8);
        assert_eq!(cfg.train.optimizer.lr, 0.01);
        assert_eq!(cfg.train.optimizer.weight_decay, 1e-4);
        let (_, _, hcm) = cfg.resolve().unwrap();
        assert!(hcm.ratios.k_d.is_infinite());
        let back = RunConfig::parse(&cfg.to_toml(), Path::new("run.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_wrong_schema_unknown_keys_and_missing_scene() {
        assert!(RunConfig::parse("schema = 2", Path::new("r")).is_err());
        assert!(RunConfig::parse("sead = 1", Path::new("r")).is_err());
        let cfg = RunConfig::parse("scene = \"nowhere.toml\"", Path::new("/tmp/x/run.toml")).unwrap();
        assert_eq!(cfg.scene, SceneSource::Path("/tmp/x/nowhere.toml".into()));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn experiment_cells() {
        let one = ExperimentSpec { counts: vec![50], seeds: vec![1], ..Default::default() };
        assert_eq!(one.cells().len(), 4);
        assert_eq!(ExperimentSpec::default().cells().len(), 48);
        let limited = ExperimentSpec { ablation_counts: Some(vec![50, 100]), ..Default::default() };
        assert_eq!(limited.cells().len(), 4 * 2 * 3 + 2 * 2 * 3);
        let spec = ExperimentSpec::parse("counts = [10]\nvariants = [\"full\", \"no-w-edges\"]", Path::new("e")).unwrap();
        assert_eq!(spec.cells(), vec![(10, Variant::Full, 1), (10, Variant::Full, 2), (10, Variant::Full, 3),
            (10, Variant::NoWEdges, 1), (10, Variant::NoWEdges, 2), (10, Variant::NoWEdges, 3)]);
        assert!(ExperimentSpec { seeds: vec![], ..Default::default() }.validate().is_err());
    }
}
