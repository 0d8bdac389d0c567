//! Trains the path-guided policy and executes it on paths taken from the
//! dataset, reporting success, path adherence and legibility.
//!
//! `cargo run --release --example guided_policy -- [steps]`

use legimod::env::SceneSpec;
use legimod::eval::score_states;
use legimod::geometry::Path;
use legimod::guided_policy::{rollout_batch, train_stage2};
use legimod::qd::generate_all_targets;
use legimod::reference;

fn main() -> legimod::Result<()> {
    env_logger::init();
    let spec = SceneSpec::default_2d();
    let ds = generate_all_targets(&spec, &reference::qd_config(&spec))?;
    let mut config = reference::policy_config(reference::POLICY_SEED);
    config.train.steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let model = train_stage2(&ds, &config)?;
    println!("trained {} steps, final loss {:.4}", model.train_steps, model.final_loss);

    for target in 0..2 {
        let sp = spec.with_intended(target)?;
        let records: Vec<_> = ds.cohort(target).step_by(7).collect();
        let paths: Vec<Path> = records.iter().map(|r| r.path.clone()).collect();
        let seeds: Vec<u64> = (0..paths.len() as u64).collect();
        let rollouts = rollout_batch(&model, &sp, &paths, sp.env.max_steps, &seeds)?;
        for (r, (rec, path)) in rollouts.iter().zip(records.iter().zip(&paths)) {
            let adherence = r.states.iter().map(|s| path.distance_to(s)).sum::<f64>() / r.states.len() as f64;
            let (_, lp) = score_states(&r.states, &sp)?;
            let (_, demo_lp) = score_states(rec.trajectory.states(), &sp)?;
            println!(
                "target {target} ell {:+.2}: {:?} in {:>3} steps, adherence {adherence:.3}, L_p {lp:.3} (demo {demo_lp:.3})",
                rec.label.normalized,
                r.status,
                r.actions.len()
            );
        }
    }
    Ok(())
}
