//! Information potential field.
//!
//! Each goal explains an observed configuration `x` through an isotropic
//! Gaussian `N(g, sigma^2 I)`. The posterior of the intended goal competes
//! against every other goal, and the potential is its negative log:
//! small where `x` clearly points at the intended goal, large where it is
//! ambiguous or points elsewhere.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{Bounds, Point};

/// Start state, candidate goals and the goal the robot actually intends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalScene {
    pub start: Point,
    pub goals: Vec<Point>,
    pub intended: usize,
    pub bounds: Bounds,
}

/// Minimum separation for two goals to count as distinct.
pub const MIN_GOAL_SEPARATION: f64 = 1e-6;

impl GoalScene {
    pub fn new(start: Point, goals: Vec<Point>, intended: usize, bounds: Bounds) -> Result<Self> {
        let scene = GoalScene {
            start,
            goals,
            intended,
            bounds,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.start.dim();
        if !(2..=3).contains(&dim) {
            return Err(domain("scene dimension must be 2 or 3"));
        }
        self.bounds.min.check_dim(dim)?;
        if self.goals.len() < 2 {
            return Err(domain("a scene needs at least two goals"));
        }
        if self.intended >= self.goals.len() {
            return Err(domain(format!(
                "intended index {} out of range for {} goals",
                self.intended,
                self.goals.len()
            )));
        }
        for g in &self.goals {
            g.check_dim(dim)?;
            if !self.bounds.contains(g) {
                return Err(domain(format!("goal {g:?} lies outside the workspace")));
            }
        }
        if !self.bounds.contains(&self.start) {
            return Err(domain("start lies outside the workspace"));
        }
        for (i, a) in self.goals.iter().enumerate() {
            for b in &self.goals[i + 1..] {
                if a.distance(b) <= MIN_GOAL_SEPARATION {
                    return Err(domain("goals must be pairwise distinct"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.start.dim()
    }

    pub fn goal(&self) -> Point {
        self.goals[self.intended]
    }

    /// Goals other than the intended one.
    pub fn distractors(&self) -> impl Iterator<Item = &Point> {
        self.goals
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.intended)
            .map(|(_, g)| g)
    }

    pub fn with_intended(&self, intended: usize) -> Result<Self> {
        GoalScene::new(self.start, self.goals.clone(), intended, self.bounds)
    }

    /// 0.2 times the distance between the two closest goals.
    pub fn default_sigma(&self) -> f64 {
        let mut nearest = f64::INFINITY;
        for (i, a) in self.goals.iter().enumerate() {
            for b in &self.goals[i + 1..] {
                nearest = nearest.min(a.distance(b));
            }
        }
        0.2 * nearest
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Isotropic Gaussian density of `x` around `g`.
pub fn likelihood(x: &Point, g: &Point, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    g.check_dim(x.dim())?;
    let d = x.dim() as f64;
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-d / 2.0);
    Ok(norm * (-x.distance_squared(g) / (2.0 * sigma * sigma)).exp())
}

/// `-log P(goals[target] | x)` computed in the log domain.
fn neg_log_posterior(x: &Point, goals: &[Point], target: usize, sigma: f64) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let own = x.distance_squared(&goals[target]);
    // Log-likelihood ratios of every goal against the target; the target's own term is 0.
    let mut max = 0.0f64;
    for g in goals {
        max = max.max((own - x.distance_squared(g)) * inv);
    }
    let mut rest = 0.0;
    for (i, g) in goals.iter().enumerate() {
        if i != target {
            rest += ((own - x.distance_squared(g)) * inv - max).exp();
        }
    }
    if max == 0.0 {
        rest.ln_1p()
    } else {
        max + ((-max).exp() + rest).ln()
    }
}

/// Posterior of every goal given `x`; sums to one.
pub fn posteriors(x: &Point, goals: &[Point], sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    for g in goals {
        g.check_dim(x.dim())?;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let logits: Vec<f64> = goals.iter().map(|g| -x.distance_squared(g) * inv).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Posterior probability of the scene's intended goal given `x`.
pub fn posterior(x: &Point, scene: &GoalScene, sigma: f64) -> Result<f64> {
    Ok((-potential(x, scene, sigma)?).exp())
}

/// Information potential `-log P(g* | x)`; nonnegative.
pub fn potential(x: &Point, scene: &GoalScene, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    x.check_dim(scene.dim())?;
    Ok(neg_log_posterior(x, &scene.goals, scene.intended, sigma))
}

/// Potential at every state; assumes the scene and sigma were validated.
pub(crate) fn potentials_unchecked(states: &[Point], scene: &GoalScene, sigma: f64) -> Vec<f64> {
    states
        .iter()
        .map(|x| neg_log_posterior(x, &scene.goals, scene.intended, sigma))
        .collect()
}

/// Rasterized potential over the workspace, sampled at cell centers.
///
/// Values are stored x-fastest: index `ix + nx * (iy + ny * iz)`. In image
/// terms a 2D grid is a `1 x H x W` single-channel image with `H = ny`,
/// `W = nx`; a 3D grid is `D x H x W` with `D = nz`.
#[derive(Clone, Debug, PartialEq)]
pub struct IpfGrid {
    pub bounds: Bounds,
    pub resolution: Vec<usize>,
    pub sigma: f64,
    pub goals: Vec<Point>,
    pub intended: usize,
    pub values: Vec<f64>,
}

/// Default rasterization: 64x64 in 2D, 32x32x32 in 3D.
pub fn default_resolution(dim: usize) -> Vec<usize> {
    if dim == 3 {
        vec![32, 32, 32]
    } else {
        vec![64, 64]
    }
}

pub fn rasterize(scene: &GoalScene, resolution: &[usize], sigma: f64) -> Result<IpfGrid> {
    check_sigma(sigma)?;
    scene.validate()?;
    if resolution.len() != scene.dim() {
        return Err(Error::DimensionMismatch {
            expected: scene.dim(),
            found: resolution.len(),
        });
    }
    if resolution.iter().any(|&n| n < 2) {
        return Err(domain("every grid axis needs at least 2 cells"));
    }
    let mut grid = IpfGrid {
        bounds: scene.bounds,
        resolution: resolution.to_vec(),
        sigma,
        goals: scene.goals.clone(),
        intended: scene.intended,
        values: Vec::new(),
    };
    let total: usize = resolution.iter().product();
    let mut idx = vec![0usize; resolution.len()];
    grid.values = (0..total)
        .map(|flat| {
            grid.unflatten(flat, &mut idx);
            let c = grid.cell_center(&idx);
            neg_log_posterior(&c, &scene.goals, scene.intended, sigma)
        })
        .collect();
    Ok(grid)
}

impl IpfGrid {
    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_size(&self, axis: usize) -> f64 {
        self.bounds.extent(axis) / self.resolution[axis] as f64
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.resolution)
            .rev()
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for (o, &n) in out.iter_mut().zip(&self.resolution) {
            *o = flat % n;
            flat /= n;
        }
    }

    pub fn cell_center(&self, idx: &[usize]) -> Point {
        let mut c = [0.0; 3];
        for (axis, &i) in idx.iter().enumerate() {
            c[axis] = self.bounds.min.coord(axis) + (i as f64 + 0.5) * self.cell_size(axis);
        }
        Point::new(&c[..idx.len()]).expect("cell centers are finite")
    }

    pub fn value(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multilinear interpolation between cell centers, clamped at the border cells.
    pub fn sample(&self, p: &Point) -> Result<f64> {
        p.check_dim(self.dim())?;
        let dim = self.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for axis in 0..dim {
            let n = self.resolution[axis];
            let g = (p.coord(axis) - self.bounds.min.coord(axis)) / self.cell_size(axis) - 0.5;
            let g = g.clamp(0.0, (n - 1) as f64);
            let i = (g.floor() as usize).min(n - 2);
            base[axis] = i;
            frac[axis] = g - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for axis in 0..dim {
                let bit = (corner >> axis) & 1;
                idx[axis] = base[axis] + bit;
                w *= if bit == 1 { frac[axis] } else { 1.0 - frac[axis] };
            }
            if w != 0.0 {
                acc += w * self.value(&idx[..dim]);
            }
        }
        Ok(acc)
    }

    /// Writes the grid as a header line followed by one line of values.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = IpfHeader {
            dim: self.dim(),
            bounds_min: self.bounds.min.as_slice().to_vec(),
            bounds_max: self.bounds.max.as_slice().to_vec(),
            resolution: self.resolution.clone(),
            sigma: self.sigma,
            goals: self.goals.iter().map(|g| g.as_slice().to_vec()).collect(),
            intended: self.intended,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        serde_json::to_writer(
            &mut out,
            &IpfValues {
                values: self.values.clone(),
            },
        )?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("missing IPF header".into()))??;
        let header: IpfHeader = serde_json::from_str(&header_line)?;
        let values_line = lines
            .next()
            .ok_or_else(|| Error::Format("missing IPF values".into()))??;
        let values: IpfValues = serde_json::from_str(&values_line)?;

        if header.resolution.len() != header.dim {
            return Err(Error::Format("resolution does not match dim".into()));
        }
        let expected: usize = header.resolution.iter().product();
        if values.values.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} values, found {}",
                values.values.len()
            )));
        }
        if values.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format("potentials must be finite and nonnegative".into()));
        }
        let bounds = Bounds::new(Point::new(&header.bounds_min)?, Point::new(&header.bounds_max)?)?;
        let goals = header
            .goals
            .iter()
            .map(|g| Point::new(g))
            .collect::<Result<Vec<_>>>()?;
        if header.intended >= goals.len() {
            return Err(Error::Format("intended goal index out of range".into()));
        }
        Ok(IpfGrid {
            bounds,
            resolution: header.resolution,
            sigma: header.sigma,
            goals,
            intended: header.intended,
            values: values.values,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IpfHeader {
    dim: usize,
    bounds_min: Vec<f64>,
    bounds_max: Vec<f64>,
    resolution: Vec<usize>,
    sigma: f64,
    goals: Vec<Vec<f64>>,
    intended: usize,
}

#[derive(Serialize, Deserialize)]
struct IpfValues {
    values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn two_goal_scene() -> GoalScene {
        GoalScene::new(
            Point::xy(0.5, 0.1),
            vec![Point::xy(0.3, 0.9), Point::xy(0.7, 0.9)],
            0,
            Bounds::unit(2),
        )
        .unwrap()
    }

    #[test]
    fn likelihood_at_mean() {
        let p = Point::xy(0.2, 0.4);
        let v = likelihood(&p, &p, 1.0).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((v - 0.159155).abs() < 1e-6);
        assert!(likelihood(&p, &p, 0.0).is_err());
        assert!(likelihood(&p, &p, -1.0).is_err());
    }

    #[test]
    fn likelihood_is_symmetric_and_decays() {
        let a = Point::xy(0.1, 0.7);
        let b = Point::xy(0.4, 0.2);
        assert_eq!(likelihood(&a, &b, 0.3).unwrap(), likelihood(&b, &a, 0.3).unwrap());
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let x = Point::xy(i as f64 * 0.1, 0.0);
            let v = likelihood(&x, &Point::xy(0.0, 0.0), 0.5).unwrap();
            assert!(v < last && v > 0.0 || v == 0.0);
            last = v;
        }
    }

    #[test]
    fn posterior_fixtures() {
        let scene = two_goal_scene();
        let sigma = 0.08;
        let mid = Point::xy(0.5, 0.4);
        assert!((posterior(&mid, &scene, sigma).unwrap() - 0.5).abs() < 1e-12);
        assert!((potential(&mid, &scene, sigma).unwrap() - LN_2).abs() < 1e-12);

        // Other goal ten sigmas away.
        let far = GoalScene::new(
            Point::xy(0.0, 0.0),
            vec![Point::xy(0.0, 0.0), Point::xy(1.0, 0.0)],
            0,
            Bounds::new(Point::xy(-1.0, -1.0), Point::xy(2.0, 2.0)).unwrap(),
        )
        .unwrap();
        let p = posterior(&far.goals[0], &far, 0.1).unwrap();
        assert!(p > 1.0 - 1e-9, "{p}");

        let tri = GoalScene::new(
            Point::xy(0.0, 0.0),
            (0..3)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / 3.0;
                    Point::xy(a.cos(), a.sin())
                })
                .collect(),
            1,
            Bounds::new(Point::xy(-2.0, -2.0), Point::xy(2.0, 2.0)).unwrap(),
        )
        .unwrap();
        let origin = Point::xy(0.0, 0.0);
        assert!((posterior(&origin, &tri, 0.7).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((potential(&origin, &tri, 0.7).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn potential_decreases_toward_intended_goal() {
        let scene = two_goal_scene();
        let mid = Point::xy(0.5, 0.9);
        let goal = scene.goal();
        let mut last = f64::INFINITY;
        for i in 0..=200 {
            let u = i as f64 / 200.0;
            let x = mid + (goal - mid) * u;
            let phi = potential(&x, &scene, 0.08).unwrap();
            assert!(phi <= last);
            assert!(phi >= 0.0);
            last = phi;
        }
    }

    #[test]
    fn far_field_does_not_underflow() {
        let scene = two_goal_scene();
        let x = Point::xy(50.0, -40.0);
        let phi = potential(&x, &scene, 0.01).unwrap();
        assert!(phi.is_finite() && phi > 0.0);
        let post = posteriors(&x, &scene.goals, 0.01).unwrap();
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_validation() {
        let b = Bounds::unit(2);
        let s = Point::xy(0.5, 0.1);
        assert!(GoalScene::new(s, vec![Point::xy(0.3, 0.9)], 0, b).is_err());
        assert!(GoalScene::new(s, vec![Point::xy(0.3, 0.9), Point::xy(0.3, 0.9)], 0, b).is_err());
        assert!(GoalScene::new(s, vec![Point::xy(0.3, 0.9), Point::xy(0.7, 0.9)], 2, b).is_err());
        assert!(GoalScene::new(s, vec![Point::xy(0.3, 1.9), Point::xy(0.7, 0.9)], 0, b).is_err());
        assert!((two_goal_scene().default_sigma() - 0.08).abs() < 1e-15);
    }

    #[test]
    fn rasterize_samples_cell_centers() {
        let scene = two_goal_scene();
        let grid = rasterize(&scene, &[16, 12], 0.08).unwrap();
        assert_eq!(grid.len(), 16 * 12);
        for idx in [[0usize, 0usize], [7, 5], [15, 11], [3, 9]] {
            let c = grid.cell_center(&idx);
            let exact = potential(&c, &scene, 0.08).unwrap();
            assert!((grid.value(&idx) - exact).abs() < 1e-12);
            assert!((grid.sample(&c).unwrap() - exact).abs() < 1e-12);
        }
        assert!(rasterize(&scene, &[1, 12], 0.08).is_err());
        assert!(rasterize(&scene, &[4, 4, 4], 0.08).is_err());
    }

    #[test]
    fn bisector_cell_is_near_ln2() {
        let scene = two_goal_scene();
        let grid = rasterize(&scene, &[64, 64], 0.08).unwrap();
        // x = 0.5 is the border between columns 31 and 32; average them.
        let row = 25;
        let v = 0.5 * (grid.value(&[31, row]) + grid.value(&[32, row]));
        let variation = (grid.value(&[32, row]) - grid.value(&[31, row])).abs();
        assert!((v - LN_2).abs() <= variation);
    }

    #[test]
    fn interpolation_error_shrinks_with_resolution() {
        let scene = two_goal_scene();
        let err = |n: usize| {
            let grid = rasterize(&scene, &[n, n], 0.08).unwrap();
            let mut worst = 0.0f64;
            for i in 0..97 {
                for j in 0..97 {
                    let p = Point::xy(0.1 + 0.8 * i as f64 / 96.0, 0.1 + 0.8 * j as f64 / 96.0);
                    let e = (grid.sample(&p).unwrap() - potential(&p, &scene, 0.08).unwrap()).abs();
                    worst = worst.max(e);
                }
            }
            worst
        };
        let (e16, e32) = (err(16), err(32));
        assert!(e32 < e16, "{e32} !< {e16}");
    }

    #[test]
    fn grid_file_round_trip() {
        let scene = GoalScene::new(
            Point::xyz(0.5, 0.5, 0.1),
            vec![Point::xyz(0.3, 0.5, 0.9), Point::xyz(0.7, 0.5, 0.9)],
            1,
            Bounds::unit(3),
        )
        .unwrap();
        let grid = rasterize(&scene, &[4, 3, 5], 0.08).unwrap();
        let mut buf = Vec::new();
        grid.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        for key in ["dim", "bounds_min", "bounds_max", "resolution", "sigma", "goals", "intended"] {
            assert!(first.contains(&format!("\"{key}\"")), "{first}");
        }
        assert!(text.lines().nth(1).unwrap().starts_with("{\"values\":"));
        let back = IpfGrid::read_from(&buf[..]).unwrap();
        assert_eq!(back, grid);
        // plane-major layout: last cell is the far corner
        assert_eq!(grid.flat_index(&[3, 2, 4]), grid.len() - 1);
        assert_eq!(grid.flat_index(&[1, 0, 0]), 1);
        assert_eq!(grid.flat_index(&[0, 1, 0]), 4);
    }
}
