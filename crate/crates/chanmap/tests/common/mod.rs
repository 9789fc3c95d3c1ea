#![allow(dead_code)]

use chanmap::config::RunConfig;
use chanmap::scene_file::GridSpec;

/// The built-in hall shrunk to a 3 x 40 grid with a small network, so a
/// whole pipeline run takes well under a second.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    let spacing_m = 5e-4;
    cfg.grid = Some(GridSpec { rows: 3, cols: 40, spacing_m, origin: [25.0, 5.0, 1.5] });
    cfg.channel.n_antennas = 2;
    cfg.channel.n_subcarriers = 4;
    cfg.observe.count = 12;
    cfg.graph.k = 4;
    cfg.train.hidden = 8;
    cfg.train.filter_hidden = 4;
    cfg.train.max_epochs = 6;
    cfg.train.patience = 3;
    cfg
}
