use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use legimod::diffusion::DiffusionModel;
use legimod::env::{make_scene, SceneSpec, SceneVariant};
use legimod::eval::{self, emit_report, eval_max_legible, eval_sweep, oracle_baseline, Report};
use legimod::guided_policy::{rollout, train_stage2};
use legimod::ipf::{default_resolution, rasterize};
use legimod::path_diffuser::{generate_path, train_stage1};
use legimod::qd::{generate_all_targets, Dataset, QdConfig};
use legimod::reference;
use legimod::{Error, Result};

#[derive(Parser)]
#[command(name = "legimod", version, about = "Legibility-conditioned path and policy diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Max,
    Sweep,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default scene file.
    MakeScene {
        #[arg(long, value_enum, default_value = "2d")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        intended: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize the potential field of a scene.
    Ipf {
        #[arg(long)]
        scene: PathBuf,
        /// Cells per axis; 64 in 2D and 32 in 3D when omitted.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill the archive for every goal and write the labeled dataset.
    GenDataset {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        /// Cells per axis, e.g. `10x10` or `6`.
        #[arg(long)]
        cells: Option<String>,
        #[arg(long, default_value_t = reference::DATASET_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    TrainDiffuser {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = reference::DIFFUSER_SEED)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
    },
    GenPath {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        ell: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    TrainPolicy {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = reference::POLICY_SEED)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a path at `ell` and execute it with the policy.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        diffuser: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        ell: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Eval {
        #[arg(long)]
        diffuser: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Per target in `max` mode, per level in `sweep` mode.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = reference::EVAL_SEED)]
        seed: u64,
        /// Adds dataset-oracle rows in `max` mode.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct PathFile {
    ell: f64,
    seed: u64,
    waypoints: Vec<Vec<f64>>,
    start_snapped: bool,
    goal_miss: Option<f64>,
}

fn parse_cells(text: &str, dim: usize) -> Result<Vec<usize>> {
    let cells = text
        .split('x')
        .map(|c| c.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Usage(format!("bad --cells {text:?}: {e}")))?;
    match cells.len() {
        1 => Ok(vec![cells[0]; dim]),
        n if n == dim => Ok(cells),
        n => Err(Error::Usage(format!("--cells has {n} axes, scene has {dim}"))),
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeScene { variant, intended, out } => {
            let scene = make_scene(match variant {
                Variant::TwoD => SceneVariant::Default2d,
                Variant::ThreeD => SceneVariant::Default3d,
            })?
            .with_intended(intended)?;
            SceneSpec::new(scene).save(&out)?;
        }
        Command::Ipf { scene, resolution, out } => {
            let spec = SceneSpec::load(scene)?;
            let res = match resolution {
                Some(r) => vec![r; spec.dim()],
                None => default_resolution(spec.dim()),
            };
            let grid = rasterize(&spec.scene, &res, spec.sigma)?;
            let mut w = create(&out)?;
            grid.write_to(&mut w)?;
            w.flush()?;
        }
        Command::GenDataset {
            scene,
            budget,
            cells,
            seed,
            out,
        } => {
            let spec = SceneSpec::load(scene)?;
            let mut config = QdConfig::for_scene(&spec, seed);
            config.budget = budget;
            if let Some(c) = cells {
                config.cells = parse_cells(&c, spec.dim())?;
            }
            let ds = generate_all_targets(&spec, &config)?;
            for c in &ds.cohorts {
                log::info!("{}: {} records, fill {:.3}", c.scene_id, c.size, c.fill_rate);
            }
            ds.save(out)?;
        }
        Command::TrainDiffuser {
            dataset,
            out,
            seed,
            steps,
        } => {
            let ds = Dataset::load(dataset)?;
            let mut config = reference::stage1_config(seed);
            if let Some(s) = steps {
                config.train.steps = s;
            }
            let model = train_stage1(&ds, &config)?;
            log::info!("final loss {}", model.final_loss);
            model.save(out)?;
        }
        Command::GenPath {
            ckpt,
            scene,
            ell,
            seed,
            out,
        } => {
            let model = DiffusionModel::load(ckpt)?;
            let spec = SceneSpec::load(scene)?;
            let g = generate_path(&model, &spec.scene, ell, seed)?;
            let file = PathFile {
                ell,
                seed,
                waypoints: g.path.waypoints().iter().map(|p| p.as_slice().to_vec()).collect(),
                start_snapped: g.start_snapped,
                goal_miss: g.goal_miss,
            };
            std::fs::write(out, serde_json::to_string_pretty(&file)? + "\n")?;
        }
        Command::TrainPolicy {
            dataset,
            out,
            seed,
            steps,
        } => {
            let ds = Dataset::load(dataset)?;
            let mut config = reference::policy_config(seed);
            if let Some(s) = steps {
                config.train.steps = s;
            }
            let model = train_stage2(&ds, &config)?;
            log::info!("final loss {}", model.final_loss);
            model.save(out)?;
        }
        Command::Rollout {
            policy,
            diffuser,
            scene,
            ell,
            seed,
            out,
        } => {
            let policy = DiffusionModel::load(policy)?;
            let diffuser = DiffusionModel::load(diffuser)?;
            let spec = SceneSpec::load(scene)?;
            let (path_seed, rollout_seed) = eval::episode_seeds(seed, spec.scene.intended, 0, 0);
            let path = generate_path(&diffuser, &spec.scene, ell, path_seed)?.path;
            let r = rollout(&policy, &spec, &path, spec.env.max_steps, rollout_seed)?;
            let (ld, lp) = eval::score_states(&r.states, &spec)?;
            println!(
                "{:?} after {} steps; L_d {ld:.4}, L_p {lp:.4}",
                r.status,
                r.actions.len()
            );
            let mut w = create(&out)?;
            eval::write_trajectory(&r, &mut w)?;
            w.flush()?;
        }
        Command::Eval {
            diffuser,
            policy,
            scene,
            mode,
            episodes,
            seed,
            dataset,
            out,
        } => {
            let diffuser = DiffusionModel::load(diffuser)?;
            let policy = DiffusionModel::load(policy)?;
            let spec = SceneSpec::load(scene)?;
            let mut report = Report::default();
            match mode {
                Mode::Max => {
                    let (table, eps) = eval_max_legible(&diffuser, &policy, &spec, episodes.unwrap_or(100), seed)?;
                    for m in &table {
                        println!(
                            "target {}: SR {:.2}  L_d {:.4}  L_p {:.4}",
                            m.target, m.success_rate, m.mean_ld, m.mean_lp
                        );
                    }
                    if let Some(path) = dataset {
                        report.oracle = oracle_baseline(&Dataset::load(path)?, &spec)?;
                        for o in &report.oracle {
                            println!("oracle {}: L_d {:.4}  L_p {:.4}", o.target, o.ld, o.lp);
                        }
                    }
                    report.max_legible = table;
                    report.episodes = eps;
                }
                Mode::Sweep => {
                    let (table, eps) = eval_sweep(
                        &diffuser,
                        &policy,
                        &spec,
                        &eval::DEFAULT_LEVELS,
                        episodes.unwrap_or(eval::DEFAULT_SWEEP_EPISODES),
                        seed,
                    )?;
                    for r in &table.rows {
                        println!(
                            "ell {:+.2}: L_p {:.4} +- {:.4}  SR {:.2}",
                            r.ell, r.mean_lp, r.std_lp, r.success_rate
                        );
                    }
                    println!("spearman {:.3} (pooled {:.3})", table.spearman, table.spearman_pooled);
                    report.sweeps = vec![table];
                    report.episodes = eps;
                }
            }
            for f in emit_report(&report, &spec, &out)? {
                log::debug!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
