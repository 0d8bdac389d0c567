//! Samples a random Bézier candidate for the default scene, resamples it to
//! equal chords and reports its deviation descriptor and 8-waypoint path.

use legimod::env::SceneSpec;
use legimod::geometry::{deviation_descriptor, resample_arclength, subsample_path};
use legimod::qd::sample_curve;

fn main() -> legimod::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let spec = SceneSpec::default_2d();
    let curve = sample_curve(&spec.scene, seed, &spec.scene.bounds)?;
    println!("control points {:?}", curve.control_points());
    println!("arc length {:.6}", curve.arc_length());

    let traj = resample_arclength(&curve, 100)?;
    let seg = traj.segment_lengths();
    let (lo, hi) = seg.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    println!("99 chords between {lo:.6} and {hi:.6}; polyline length {:.6}", traj.polyline_length());

    let d = deviation_descriptor(traj.states(), &spec.scene.start, &spec.scene.goal())?;
    println!("largest deviation {:.4} at {:?}", d.magnitude, d.position);
    println!("path {:?}", subsample_path(&traj, 8)?.waypoints());
    Ok(())
}
