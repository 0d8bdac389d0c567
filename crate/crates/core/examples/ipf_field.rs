//! Rasterizes the potential field of the default 2D scene and prints it as a
//! coarse character map, denser where the intended goal is less evident.
//! With equal-width goals the field varies only along the goal axis.

use legimod::env::SceneSpec;
use legimod::geometry::Point;
use legimod::ipf::{posterior, potential, rasterize};

fn main() -> legimod::Result<()> {
    let spec = SceneSpec::default_2d();
    let grid = rasterize(&spec.scene, &[64, 64], spec.sigma)?;
    println!("sigma {}, max potential {:.2}", spec.sigma, grid.max_value());

    for p in [spec.scene.start, Point::xy(0.5, 0.9), Point::xy(0.3, 0.5), Point::xy(0.7, 0.5)] {
        println!(
            "  {p:?}: P(g*|x) = {:.4}, phi = {:.4}",
            posterior(&p, &spec.scene, spec.sigma)?,
            potential(&p, &spec.scene, spec.sigma)?
        );
    }

    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let max = grid.max_value();
    for row in (0..16).rev() {
        let line: String = (0..64)
            .map(|col| {
                let v = grid.sample(&Point::xy((col as f64 + 0.5) / 64.0, (row as f64 + 0.5) / 16.0)).unwrap();
                shades[((v / max).sqrt() * 9.0).round() as usize]
            })
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
