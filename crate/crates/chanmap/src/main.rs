use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chanmap::config::{ExperimentSpec, RunConfig, SceneSource};
use chanmap::error::{AtStage, Stage, StageError};
use chanmap::pipeline::{self, Artifacts};
use chanmap::scene_file::SceneFile;
use clap::{Parser, Subcommand};

/// Space-time channel map construction: simulate a ground-truth map, pick
/// observed nodes, build the graph, train, infer and evaluate.
#[derive(Parser)]
#[command(name = "chanmap", version)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts with standard names.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the ground-truth map and impulse responses.
    Simulate {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cirs: Option<PathBuf>,
        /// Also export the map as long-form CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Select observed nodes.
    Mask {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the k-NN graph over all nodes.
    BuildGraph {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        observed: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Scene for the LoS edge flag; every pair counts as LoS without one.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
    },
    /// Train the network and write a checkpoint.
    Train {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict every node and the IDW baseline.
    Infer {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Score predictions and write the report.
    Eval {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        observed: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        cirs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Density sweep with ablations.
    Experiment {
        /// Experiment spec (TOML). Defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All stages from simulation to evaluation.
    Run,
}

fn set(slot: &mut PathBuf, value: Option<PathBuf>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn scene_at(path: &Path) -> Result<chanmap::core::scene::Scene, chanmap::Error> {
    SceneFile::load(path)?.scene()
}

fn run(cli: Cli) -> Result<(), StageError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).at(Stage::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = cli.out_dir.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut art = Artifacts::new(&dir);
    match cli.command {
        Command::Simulate { scene, out, cirs, csv } => {
            if let Some(s) = scene {
                cfg.scene = SceneSource::Path(s);
            }
            set(&mut art.map, out);
            set(&mut art.cirs, cirs);
            let map = pipeline::stage_simulate(&cfg, &art).at(Stage::Simulate)?;
            if let Some(p) = csv {
                map.write_csv(&p).at(Stage::Simulate)?;
            }
            println!("wrote {} ({} nodes)", art.map.display(), map.matrices.len());
        }
        Command::Mask { map, count, out } => {
            set(&mut art.map, map);
            set(&mut art.mask, out);
            if let Some(c) = count {
                cfg.observe.count = c;
            }
            let mask = pipeline::stage_mask(&cfg, &art).at(Stage::Mask)?;
            let n = mask.iter().filter(|&&o| o).count();
            println!("wrote {} ({n} of {} observed)", art.mask.display(), mask.len());
        }
        Command::BuildGraph { map, observed, k, scene, out, edges } => {
            set(&mut art.map, map);
            set(&mut art.mask, observed);
            set(&mut art.graph, out);
            set(&mut art.edges, edges);
            if let Some(k) = k {
                cfg.graph.k = k;
            }
            let scene = match (scene, &cli.config) {
                (Some(p), _) => Some(scene_at(&p).at(Stage::BuildGraph)?),
                (None, Some(_)) => Some(cfg.resolve().at(Stage::Config)?.0),
                (None, None) => None,
            };
            let g = pipeline::stage_build_graph(&cfg, scene.as_ref(), &art).at(Stage::BuildGraph)?;
            println!("wrote {} ({} nodes, {} edges)", art.graph.display(), g.graph.n_nodes(), g.graph.n_edges());
        }
        Command::Train { graph, map, out, log } => {
            set(&mut art.graph, graph);
            set(&mut art.map, map);
            set(&mut art.checkpoint, out);
            set(&mut art.train_log, log);
            let ckpt = pipeline::stage_train(&cfg, &art).at(Stage::Train)?;
            let m = &ckpt.manifest;
            println!(
                "wrote {} ({} epochs, best {:?}, val nmse {:?} -> {:?})",
                art.checkpoint.display(),
                m.epochs_run,
                m.best_epoch,
                m.initial_val_nmse,
                m.best_val_nmse
            );
        }
        Command::Infer { ckpt, graph, map, out, baseline } => {
            set(&mut art.checkpoint, ckpt);
            set(&mut art.graph, graph);
            set(&mut art.map, map);
            set(&mut art.prediction, out);
            set(&mut art.baseline, baseline);
            pipeline::stage_infer(&art).at(Stage::Infer)?;
            println!("wrote {} and {}", art.prediction.display(), art.baseline.display());
        }
        Command::Eval { map, pred, observed, baseline, cirs, out } => {
            set(&mut art.map, map);
            set(&mut art.prediction, pred);
            set(&mut art.mask, observed);
            set(&mut art.baseline, baseline);
            set(&mut art.cirs, cirs);
            set(&mut art.report, out);
            let report = pipeline::stage_eval(&art).at(Stage::Eval)?;
            print_report(&report);
            println!("wrote {}", art.report.display());
        }
        Command::Experiment { spec, out } => {
            let spec = match spec {
                Some(p) => ExperimentSpec::load(&p).at(Stage::Config)?,
                None => ExperimentSpec::default(),
            };
            let rows = pipeline::run_experiment(&spec, &cfg, Some(&dir)).at(Stage::Experiment)?;
            if let Some(p) = out {
                chanmap::formats::write_sweep_csv(&p, &rows).at(Stage::Experiment)?;
            }
            println!("density,variant,seed,nmse");
            for r in &rows {
                println!("{},{},{},{:.6}", r.density, r.variant, r.seed, r.nmse);
            }
        }
        Command::Run => {
            let report = pipeline::run_pipeline(&cfg, Some(&dir))?;
            print_report(&report);
            println!("artifacts in {}", dir.display());
        }
    }
    Ok(())
}

fn print_report(r: &chanmap::core::metrics::EvalReport) {
    print!("nmse {:.6} over {} unobserved nodes", r.nmse, r.n_unobserved);
    if let Some(b) = r.baseline_nmse {
        print!(" (idw {b:.6})");
    }
    println!();
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
