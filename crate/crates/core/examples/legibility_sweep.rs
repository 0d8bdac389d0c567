//! The full experiment: trains both stages with the reference settings (or
//! loads checkpoints), runs the max-legible comparison and the legibility
//! sweep, and writes a report directory.
//!
//! `cargo run --release --example legibility_sweep -- <out-dir> [3d] [diffuser.json policy.json]`

use legimod::diffusion::DiffusionModel;
use legimod::env::SceneSpec;
use legimod::eval::{self, emit_report, eval_max_legible, eval_sweep, oracle_baseline, Report};
use legimod::qd::generate_all_targets;
use legimod::reference::{self, Pipeline};

fn main() -> legimod::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "legibility-report".into());
    let three = args.iter().any(|a| a == "3d");
    let spec = if three { SceneSpec::default_3d() } else { SceneSpec::default_2d() };
    let ckpts: Vec<&String> = args.iter().filter(|a| a.ends_with(".json")).collect();

    let (dataset, diffuser, policy) = if let [d, p] = ckpts[..] {
        let ds = generate_all_targets(&spec, &reference::qd_config(&spec))?;
        (ds, DiffusionModel::load(d)?, DiffusionModel::load(p)?)
    } else {
        let p = Pipeline::train(&spec)?;
        (p.dataset, p.diffuser, p.policy)
    };

    let (max, mut episodes) = eval_max_legible(&diffuser, &policy, &spec, 100, reference::EVAL_SEED)?;
    let oracle = oracle_baseline(&dataset, &spec)?;
    println!("target     SR     L_d     L_p   oracle L_d  oracle L_p");
    for (m, o) in max.iter().zip(&oracle) {
        println!(
            "{:>6} {:>6.2} {:>7.3} {:>7.3} {:>12.3} {:>11.3}",
            m.target, m.success_rate, m.mean_ld, m.mean_lp, o.ld, o.lp
        );
    }

    let mut sweeps = Vec::new();
    for target in 0..2 {
        let (table, eps) = eval_sweep(
            &diffuser,
            &policy,
            &spec.with_intended(target)?,
            &eval::DEFAULT_LEVELS,
            eval::DEFAULT_SWEEP_EPISODES,
            reference::EVAL_SEED,
        )?;
        for r in &table.rows {
            println!(
                "target {target} ell {:+.1}: L_p {:.3} +- {:.3}, SR {:.2}",
                r.ell, r.mean_lp, r.std_lp, r.success_rate
            );
        }
        println!("target {target} spearman {:.3} (per episode {:.3})", table.spearman, table.spearman_pooled);
        sweeps.push(table);
        if target == 0 {
            episodes = eps;
        }
    }

    let report = Report {
        max_legible: max,
        oracle,
        sweeps,
        episodes,
    };
    emit_report(&report, &spec, &out)?;
    println!("report written to {out}");
    Ok(())
}
