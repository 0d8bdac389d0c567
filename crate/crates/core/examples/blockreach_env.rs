//! Drives the point-mass environment with a scripted straight-line agent on
//! both default scenes.

use legimod::env::{step, EnvState, SceneSpec};
use legimod::eval::score_states;

fn main() -> legimod::Result<()> {
    for spec in [SceneSpec::default_2d(), SceneSpec::default_3d()] {
        for target in 0..2 {
            let spec = spec.with_intended(target)?;
            let mut s = EnvState::reset(&spec.scene);
            let mut states = vec![s.position];
            while !s.is_done() {
                let a = (spec.scene.goal() - s.position) * (1.0 / spec.env.dt);
                s = step(&s, &a, &spec)?;
                states.push(s.position);
            }
            let (ld, lp) = score_states(&states, &spec)?;
            println!(
                "{}D target {target}: {:?} after {} steps, L_d {ld:.3}, L_p {lp:.3}",
                spec.dim(),
                s.status,
                s.step_count
            );
        }
    }
    Ok(())
}
