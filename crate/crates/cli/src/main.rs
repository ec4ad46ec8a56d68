use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use tradyn::config::PipelineConfig;
use tradyn::manifest::RunManifest;
use tradyn::pipeline;
use tradyn::planner::{NavTask, Variant};
use tradyn::sim::{sample_robot_params, SimState};
use tradyn::Error;

/// Terrain- and robot-aware dynamics workbench.
///
/// Exit codes: 0 success, 2 configuration or usage error, 3 missing or
/// incompatible artifact, 4 numeric failure. `TRADYN_THREADS` sets the
/// worker thread count.
#[derive(Parser)]
#[command(name = "tradyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the 50 training and 50 test terrain layouts.
    GenTerrains {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the trajectory dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        terrains: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train lookup and concat models for every model seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file or the directory holding dataset.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction study: error-vs-horizon CSV and plot.
    EvalPredict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        terrains: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Planning study: summary table, pairwise energy matrix and plot.
    EvalPlan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        terrains: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One navigation episode rendered over its terrain.
    DemoNav {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Terrain PNG (with its JSON sidecar next to it).
        #[arg(long)]
        terrain: PathBuf,
        /// Start as `x,y` or `x,y,heading`.
        #[arg(long, value_parser = parse_vec)]
        start: Coords,
        /// Goal as `x,y`.
        #[arg(long, value_parser = parse_vec)]
        goal: Coords,
        /// One of `-T,-C`, `-T,+C`, `+T,-C`, `+T,+C`.
        #[arg(long, allow_hyphen_values = true)]
        variant: String,
        /// Seeds the robot parameters, calibration and CEM sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages in sequence into one run directory.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Comma-separated numbers kept as one argument value.
#[derive(Clone, Debug)]
struct Coords(Vec<f64>);

fn parse_vec(s: &str) -> Result<Coords, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Coords)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::Incompatible { .. } => 3,
        Error::Numeric { .. } => 4,
    }
}

fn dataset_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(pipeline::DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

#[allow(clippy::too_many_arguments)]
fn demo(
    config: &Path,
    checkpoint: &Path,
    terrain: &Path,
    start: &[f64],
    goal: &[f64],
    variant: &str,
    seed: u64,
    out: &Path,
) -> tradyn::Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let variant = Variant::parse(variant)?;
    if !(start.len() == 2 || start.len() == 3) || goal.len() != 2 {
        return Err(Error::InvalidInput("--start takes x,y[,heading] and --goal takes x,y".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (_, split) = tradyn::terrain::load_terrain(terrain)?;
    let sidecar = std::fs::read_to_string(terrain.with_extension("json")).map_err(|e| Error::Io {
        path: terrain.with_extension("json"),
        source: e,
    })?;
    let meta = tradyn::terrain::TerrainSidecar::from_json(&sidecar)?;
    let task = NavTask {
        start: SimState::new(start[0], start[1], 0.0, start.get(2).copied().unwrap_or(0.0)),
        goal: [goal[0], goal[1]],
        step_limit: cfg.eval.step_limit,
        terrain_id: meta.id,
        robot_params: sample_robot_params(&mut rng),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut manifest = RunManifest::new(
        "demo-nav",
        serde_json::json!({ "config": cfg, "task": task, "variant": variant.label(), "split": split }),
        vec![seed],
    );
    manifest.add_input(checkpoint)?;
    manifest.add_input(terrain)?;
    let outcome = pipeline::demo_nav(checkpoint, terrain, &task, variant, &cfg, seed)?;
    let json = serde_json::to_string_pretty(&outcome.result).expect("plan result serialises");
    let write = |name: &str, bytes: &[u8]| {
        let p = out.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::Io { path: p, source: e })
    };
    write("plan_result.json", json.as_bytes())?;
    write("overlay.png", &outcome.overlay_png)?;
    manifest.finish(out)?;
    println!(
        "{}: energy {:.4}, final distance {:.1} mm, success {}",
        variant.label(),
        outcome.result.throttle_energy,
        1e3 * outcome.result.final_goal_distance,
        outcome.result.success
    );
    Ok(())
}

fn run(cli: Cli) -> tradyn::Result<()> {
    match cli.command {
        Command::GenTerrains { seed, out } => {
            pipeline::gen_terrains(seed, &out)?;
        }
        Command::GenData { config, terrains, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let ds = pipeline::gen_data(&cfg, &terrains, &out)?;
            println!("wrote {} settings to {}", ds.settings.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let cfg = PipelineConfig::load(&config)?;
            pipeline::train_models(&cfg, &dataset_path(&data), &out)?;
        }
        Command::EvalPredict {
            config,
            checkpoints,
            terrains,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            for m in pipeline::eval_predict(&cfg, &checkpoints, &terrains, &out)? {
                let last = m.position.mean.len().saturating_sub(1);
                println!(
                    "{}: position error at step {} = {:.1} mm",
                    m.variant.label(),
                    last + 1,
                    1e3 * m.position.mean.get(last).copied().unwrap_or(0.0)
                );
            }
        }
        Command::EvalPlan {
            config,
            checkpoints,
            terrains,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let table = pipeline::eval_plan(&cfg, &checkpoints, &terrains, &out)?;
            print!("{}", tradyn::eval::planning_table_csv(&table));
        }
        Command::DemoNav {
            config,
            checkpoint,
            terrain,
            start,
            goal,
            variant,
            seed,
            out,
        } => demo(&config, &checkpoint, &terrain, &start.0, &goal.0, &variant, seed, &out)?,
        Command::RunAll { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let summary = pipeline::run_all(&cfg, &out)?;
            print!("{}", tradyn::eval::planning_table_csv(&summary.planning));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("TRADYN_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot configure {n} threads: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: TRADYN_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
