use std::path::PathBuf;

use chanmap::config::{ExperimentSpec, RunConfig, SceneSource};
use chanmap::scene_file::SceneFile;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_hall_matches_the_built_in_scene() {
    let file = SceneFile::load(&configs().join("hall.toml")).unwrap();
    assert_eq!(file, SceneFile::hall());
}

#[test]
fn shipped_run_config_is_the_default() {
    let cfg = RunConfig::load(&configs().join("run.toml")).unwrap();
    assert!(matches!(cfg.scene, SceneSource::Path(ref p) if p.is_file()));
    let default = RunConfig::default();
    assert_eq!(cfg.resolve().unwrap(), default.resolve().unwrap());
    assert_eq!(cfg.train, default.train);
    assert_eq!((cfg.seed, cfg.observe, cfg.graph), (default.seed, default.observe, default.graph));
}

#[test]
fn shipped_quick_and_experiment_configs_parse() {
    let quick = RunConfig::load(&configs().join("quick.toml")).unwrap();
    let (_, grid, _) = quick.resolve().unwrap();
    assert_eq!((grid.rows, grid.cols), (3, 200));
    let spec = ExperimentSpec::load(&configs().join("experiment.toml")).unwrap();
    spec.validate().unwrap();
    assert_eq!(spec.cells().len(), 36);
}
