//! Fills the archive for both goals of a scene and prints each cohort's
//! label map: one character per cell, from `-` (ambiguous) to `+` (legible).
//!
//! `cargo run --release --example qd_archive -- [3d]`

use legimod::env::SceneSpec;
use legimod::qd::generate_all_targets;
use legimod::reference;

fn main() -> legimod::Result<()> {
    env_logger::init();
    let three = std::env::args().any(|a| a == "3d");
    let spec = if three { SceneSpec::default_3d() } else { SceneSpec::default_2d() };
    let config = reference::qd_config(&spec);
    let ds = generate_all_targets(&spec, &config)?;
    for c in &ds.cohorts {
        println!(
            "{}: {} elites, fill {:.2}, straight line would rank at ell {:.2}",
            c.scene_id, c.size, c.fill_rate, c.straight_line_ell
        );
    }
    if three {
        return Ok(());
    }
    let n = config.cells[0];
    for target in 0..2 {
        let mut map = vec![vec![' '; n]; n];
        for r in ds.cohort(target) {
            let p = r.descriptor.position;
            let (i, j) = ((p.coord(0) * n as f64) as usize, (p.coord(1) * n as f64) as usize);
            let marks = ['-', '-', '~', ':', '.', 'o', 'O', '+', '+'];
            map[j.min(n - 1)][i.min(n - 1)] = marks[((r.label.normalized + 1.0) * 4.0).round() as usize];
        }
        println!("target {target}:");
        for row in map.iter().rev() {
            println!("  |{}|", row.iter().collect::<String>());
        }
    }
    Ok(())
}
