//! Trains the path diffuser on the reference 2D dataset and generates paths
//! at several legibility levels for both goals.
//!
//! `cargo run --release --example path_diffuser -- [steps]`

use legimod::env::SceneSpec;
use legimod::path_diffuser::{generate_paths, train_stage1};
use legimod::qd::generate_all_targets;
use legimod::reference;
use legimod::scoring::score_lp_eval;

fn main() -> legimod::Result<()> {
    env_logger::init();
    let spec = SceneSpec::default_2d();
    let ds = generate_all_targets(&spec, &reference::qd_config(&spec))?;
    let mut config = reference::stage1_config(reference::DIFFUSER_SEED);
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        config.train.steps = steps;
    }
    let model = train_stage1(&ds, &config)?;
    println!("trained {} steps, final loss {:.4}", model.train_steps, model.final_loss);

    for target in 0..2 {
        let sp = spec.with_intended(target)?;
        for ell in [-1.0, 0.0, 1.0] {
            let requests: Vec<(f64, u64)> = (0..20).map(|s| (ell, s)).collect();
            let paths = generate_paths(&model, &sp.scene, &requests)?;
            let lp: f64 = paths
                .iter()
                .map(|g| score_lp_eval(g.path.waypoints(), &sp.scene, sp.sigma).unwrap())
                .sum::<f64>()
                / paths.len() as f64;
            let w = paths[0].path.waypoints();
            println!("target {target} ell {ell:+}: mean waypoint L_p {lp:.3}; e.g. midpoint {:?}", w[w.len() / 2]);
        }
    }
    Ok(())
}
