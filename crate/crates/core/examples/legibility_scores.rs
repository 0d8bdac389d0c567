//! Scores three hand-made trajectories on the default 2D scene: a straight
//! line, an arc that commits early toward the intended goal, and one that
//! drifts toward the distractor first.

use legimod::env::SceneSpec;
use legimod::geometry::{resample_arclength, BezierCurve, Point};
use legimod::scoring::{score_ld, score_lp_eval, score_lp_train, DEFAULT_ALPHA};

fn main() -> legimod::Result<()> {
    let spec = SceneSpec::default_2d();
    let (s, g) = (spec.scene.start, spec.scene.goal());
    let distractor = spec.scene.goals[1];
    let curves = [
        ("straight", Point::xy(0.433, 0.367), Point::xy(0.367, 0.633)),
        ("legible", Point::xy(0.1, 0.2), Point::xy(0.1, 0.7)),
        ("ambiguous", Point::xy(0.8, 0.4), Point::xy(0.6, 0.8)),
    ];
    println!("{:<10} {:>10} {:>8} {:>8}", "", "train L_p", "eval L_p", "L_d");
    for (name, c1, c2) in curves {
        let traj = resample_arclength(&BezierCurve::new(s, c1, c2, g)?, 100)?;
        let states = traj.states();
        println!(
            "{name:<10} {:>10.3} {:>8.3} {:>8.3}",
            score_lp_train(states, &spec.scene, spec.sigma, DEFAULT_ALPHA)?,
            score_lp_eval(states, &spec.scene, spec.sigma)?,
            score_ld(states, &distractor)?
        );
    }
    Ok(())
}
