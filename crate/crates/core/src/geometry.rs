//! Workspace geometry: points, cubic Bézier curves, arc-length resampling,
//! deviation descriptors and the trajectory/path data model.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A point (or velocity vector) in a 2D or 3D workspace.
///
/// Stored inline so it is `Copy`; unused trailing coordinates are always zero.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point {
    coords: [f64; 3],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&coords.len()) {
            return Err(domain(format!(
                "points must have 2 or 3 coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(domain("point coordinates must be finite"));
        }
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Point {
            coords: [x, y, 0.0],
            dim: 2,
        }
    }

    pub fn xyz(x: f64, y: f64, z: f64) -> Self {
        Point {
            coords: [x, y, z],
            dim: 3,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!((2..=3).contains(&dim), "dimension must be 2 or 3");
        Point {
            coords: [0.0; 3],
            dim: dim as u8,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    pub fn coord(&self, axis: usize) -> f64 {
        self.as_slice()[axis]
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        (*self - *other).norm_squared()
    }

    pub fn map(&self, mut f: impl FnMut(usize, f64) -> f64) -> Point {
        let mut out = *self;
        for axis in 0..self.dim() {
            out.coords[axis] = f(axis, self.coords[axis]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Point").field(&self.as_slice()).finish()
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(&v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.as_slice().to_vec()
    }
}

impl Add for Point {
    type Output = Point;

    fn add(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        for i in 0..3 {
            out.coords[i] += rhs.coords[i];
        }
        out
    }
}

impl Sub for Point {
    type Output = Point;

    fn sub(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        for i in 0..3 {
            out.coords[i] -= rhs.coords[i];
        }
        out
    }
}

impl Mul<f64> for Point {
    type Output = Point;

    fn mul(self, rhs: f64) -> Point {
        let mut out = self;
        for c in out.coords.iter_mut() {
            *c *= rhs;
        }
        out
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        min.check_dim(max.dim())?;
        if (0..min.dim()).any(|a| min.coord(a) >= max.coord(a)) {
            return Err(domain("bounds must satisfy min < max on every axis"));
        }
        Ok(Bounds { min, max })
    }

    pub fn unit(dim: usize) -> Self {
        let one = Point::zeros(dim).map(|_, _| 1.0);
        Bounds {
            min: Point::zeros(dim),
            max: one,
        }
    }

    pub fn dim(&self) -> usize {
        self.min.dim()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max.coord(axis) - self.min.coord(axis)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim()
            && (0..self.dim())
                .all(|a| p.coord(a) >= self.min.coord(a) && p.coord(a) <= self.max.coord(a))
    }

    pub fn contains_box(&self, other: &Bounds) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn clamp(&self, p: &Point) -> Point {
        p.map(|a, v| v.clamp(self.min.coord(a), self.max.coord(a)))
    }

    /// Grows every axis by `fraction` of its extent on both sides.
    pub fn inflate(&self, fraction: f64) -> Bounds {
        Bounds {
            min: self.min.map(|a, v| v - fraction * self.extent(a)),
            max: self.max.map(|a, v| v + fraction * self.extent(a)),
        }
    }
}

/// Cubic Bézier curve from `p0` (start) to `p3` (goal) with controls `p1`, `p2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BezierCurve {
    pub p0: Point,
    pub p1: Point,
    pub p2: Point,
    pub p3: Point,
}

/// Parameter samples in the cumulative chord-length table.
pub const ARC_TABLE_SAMPLES: usize = 512;

impl BezierCurve {
    pub fn new(p0: Point, p1: Point, p2: Point, p3: Point) -> Result<Self> {
        let dim = p0.dim();
        for p in [&p1, &p2, &p3] {
            p.check_dim(dim)?;
        }
        Ok(BezierCurve { p0, p1, p2, p3 })
    }

    pub fn dim(&self) -> usize {
        self.p0.dim()
    }

    pub fn control_points(&self) -> [Point; 4] {
        [self.p0, self.p1, self.p2, self.p3]
    }

    pub fn evaluate(&self, u: f64) -> Result<Point> {
        if !(0.0..=1.0).contains(&u) {
            return Err(domain(format!("Bézier parameter {u} outside [0, 1]")));
        }
        Ok(self.eval(u))
    }

    /// Bernstein-form evaluation without the range check.
    pub(crate) fn eval(&self, u: f64) -> Point {
        let v = 1.0 - u;
        self.p0 * (v * v * v)
            + self.p1 * (3.0 * v * v * u)
            + self.p2 * (3.0 * v * u * u)
            + self.p3 * (u * u * u)
    }

    /// Cumulative chord lengths over `ARC_TABLE_SAMPLES` uniform parameter steps.
    fn arc_table(&self) -> (Vec<Point>, Vec<f64>) {
        let points: Vec<Point> = (0..=ARC_TABLE_SAMPLES)
            .map(|i| self.eval(i as f64 / ARC_TABLE_SAMPLES as f64))
            .collect();
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + w[0].distance(&w[1]));
        }
        (points, cumulative)
    }

    /// Arc length estimated from the cumulative chord table.
    pub fn arc_length(&self) -> f64 {
        *self.arc_table().1.last().unwrap()
    }
}

/// Dense state sequence, optionally with the actions that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<Point>,
    actions: Option<Vec<Point>>,
    dt: f64,
}

/// Default simulation step in seconds.
pub const DEFAULT_DT: f64 = 0.05;

impl Trajectory {
    pub fn new(states: Vec<Point>, dt: f64) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InsufficientLength {
                len: states.len(),
                required: 2,
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(domain("dt must be positive"));
        }
        let dim = states[0].dim();
        for s in &states {
            s.check_dim(dim)?;
        }
        Ok(Trajectory {
            states,
            actions: None,
            dt,
        })
    }

    pub fn with_actions(mut self, actions: Vec<Point>) -> Result<Self> {
        if actions.len() + 1 != self.states.len() {
            return Err(domain(format!(
                "{} states need {} actions, got {}",
                self.states.len(),
                self.states.len() - 1,
                actions.len()
            )));
        }
        for a in &actions {
            a.check_dim(self.dim())?;
        }
        self.actions = Some(actions);
        Ok(self)
    }

    pub fn states(&self) -> &[Point] {
        &self.states
    }

    pub fn actions(&self) -> Option<&[Point]> {
        self.actions.as_deref()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn first(&self) -> Point {
        self.states[0]
    }

    pub fn last(&self) -> Point {
        *self.states.last().unwrap()
    }

    pub fn polyline_length(&self) -> f64 {
        self.states.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.states.windows(2).map(|w| w[0].distance(&w[1])).collect()
    }
}

/// Sparse k-waypoint plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    waypoints: Vec<Point>,
}

/// Waypoints per path.
pub const DEFAULT_PATH_LEN: usize = 8;

impl Path {
    pub fn new(waypoints: Vec<Point>, k: usize) -> Result<Self> {
        if waypoints.len() != k || k == 0 {
            return Err(domain(format!(
                "path must have exactly {k} waypoints, got {}",
                waypoints.len()
            )));
        }
        let dim = waypoints[0].dim();
        for w in &waypoints {
            w.check_dim(dim)?;
        }
        Ok(Path { waypoints })
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn k(&self) -> usize {
        self.waypoints.len()
    }

    pub fn dim(&self) -> usize {
        self.waypoints[0].dim()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.waypoints
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect()
    }

    pub fn from_flat(values: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(domain("flat path length is not a multiple of dimension"));
        }
        let waypoints = values
            .chunks(dim)
            .map(Point::new)
            .collect::<Result<Vec<_>>>()?;
        let k = waypoints.len();
        Path::new(waypoints, k)
    }

    pub fn set_first(&mut self, p: Point) {
        self.waypoints[0] = p;
    }

    /// Distance from `p` to the nearest segment of the waypoint polyline.
    pub fn distance_to(&self, p: &Point) -> f64 {
        if self.waypoints.len() == 1 {
            return self.waypoints[0].distance(p);
        }
        self.waypoints
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = *b - *a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return p.distance(a);
    }
    let u = ((*p - *a).dot(&ab) / len2).clamp(0.0, 1.0);
    p.distance(&(*a + ab * u))
}

/// Location and size of a trajectory's largest excursion from the start→goal line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationDescriptor {
    pub position: Point,
    pub magnitude: f64,
}

/// Perpendicular distance from `p` to the infinite line through `start` and `goal`.
pub fn perpendicular_distance(p: &Point, start: &Point, goal: &Point) -> f64 {
    let dir = *goal - *start;
    let rel = *p - *start;
    let along = rel.dot(&dir) / dir.norm_squared();
    (rel - dir * along).norm()
}

/// Resamples a Bézier curve into `n_points` states with equal consecutive
/// chord lengths; the first and last states are exactly the curve endpoints.
///
/// Points start at equal arc length, found by inverting a cumulative chord
/// table over [`ARC_TABLE_SAMPLES`] parameter steps, and are then moved along
/// the curve by a damped Newton solve until every chord has the same length.
/// The chord system is tridiagonal in the interior parameters.
pub fn resample_arclength(curve: &BezierCurve, n_points: usize) -> Result<Trajectory> {
    if n_points < 2 {
        return Err(domain("resampling needs at least 2 points"));
    }
    let (_, cumulative) = curve.arc_table();
    let total = *cumulative.last().unwrap();
    if total < 1e-9 {
        return Err(Error::DegenerateGeometry(format!(
            "curve arc length {total:e} is below 1e-9"
        )));
    }
    if n_points == 2 {
        return Trajectory::new(vec![curve.p0, curve.p3], DEFAULT_DT);
    }
    let mut params = arclength_params(&cumulative, n_points);
    equalize_chords(curve, &mut params);
    if chord_spread(curve, &params) > CHORD_SPREAD_TARGET {
        // Hooks and near-cusps can trap the local solve; march from the start
        // instead and polish whatever the march finds.
        if let Some(mut marched) = march_equal_chords(curve, &cumulative, n_points) {
            equalize_chords(curve, &mut marched);
            if chord_spread(curve, &marched) < chord_spread(curve, &params) {
                params = marched;
            }
        }
    }
    polish_with_hops(curve, &mut params);
    let uniform_start = (0..n_points).map(|i| i as f64 / (n_points - 1) as f64);
    let mut restarts: Vec<Vec<f64>> = vec![uniform_start.collect()];
    for k in 1..=6 {
        // Deterministic jitter of the current best.
        restarts.push(
            params
                .iter()
                .enumerate()
                .map(|(i, &u)| {
                    let phase = (i as f64 * 0.618_033_988_75 * k as f64).fract() - 0.5;
                    u + phase * 0.5 / n_points as f64
                })
                .collect(),
        );
    }
    for mut start in restarts {
        if chord_spread(curve, &params) <= CHORD_SPREAD_TARGET {
            break;
        }
        start[0] = 0.0;
        start[n_points - 1] = 1.0;
        if !start.windows(2).all(|w| w[0] < w[1]) {
            continue;
        }
        equalize_chords(curve, &mut start);
        polish_with_hops(curve, &mut start);
        if chord_spread(curve, &start) < chord_spread(curve, &params) {
            params = start;
        }
    }
    let mut states: Vec<Point> = params.iter().map(|&u| curve.eval(u)).collect();
    states[0] = curve.p0;
    states[n_points - 1] = curve.p3;
    Trajectory::new(states, DEFAULT_DT)
}

const CHORD_SPREAD_TARGET: f64 = 1e-9;

/// Largest relative deviation of a chord from the mean chord.
fn chord_spread(curve: &BezierCurve, params: &[f64]) -> f64 {
    let points: Vec<Point> = params.iter().map(|&u| curve.eval(u)).collect();
    let (chords, _) = chord_residuals(&points);
    let mean = chords.iter().sum::<f64>() / chords.len() as f64;
    chords.iter().map(|c| (c - mean).abs() / mean).fold(0.0, f64::max)
}

/// Walks forward from `from` to the first parameter whose point lies `chord`
/// away from `origin`, using the table samples to bracket the crossing.
fn first_crossing(curve: &BezierCurve, origin: &Point, from: f64, chord: f64) -> Option<f64> {
    let step = 1.0 / ARC_TABLE_SAMPLES as f64;
    let mut lo = from;
    let mut j = (from / step).floor() as usize + 1;
    while j <= ARC_TABLE_SAMPLES {
        let u = j as f64 * step;
        if curve.eval(u).distance(origin) >= chord {
            let mut hi = u;
            for _ in 0..52 {
                let mid = 0.5 * (lo + hi);
                if curve.eval(mid).distance(origin) >= chord {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        lo = u;
        j += 1;
    }
    None
}

/// Parameters of the first `n_points - 1` points of a first-crossing march
/// with fixed chord, or `None` if the curve runs out first.
fn march(curve: &BezierCurve, n_points: usize, chord: f64) -> Option<Vec<f64>> {
    let mut params = Vec::with_capacity(n_points);
    params.push(0.0);
    let mut u = 0.0;
    let mut q = curve.p0;
    for _ in 1..n_points - 1 {
        u = first_crossing(curve, &q, u, chord)?;
        q = curve.eval(u);
        params.push(u);
    }
    Some(params)
}

/// Shooting on the common chord: scans for a sign change of the closing
/// chord mismatch, then bisects it.
fn march_equal_chords(curve: &BezierCurve, cumulative: &[f64], n_points: usize) -> Option<Vec<f64>> {
    const SCAN: usize = 256;
    let total = *cumulative.last().unwrap();
    let c_max = total / (n_points - 1) as f64;
    let mismatch = |c: f64| -> Option<(f64, Vec<f64>)> {
        let params = march(curve, n_points, c)?;
        let last = curve.eval(*params.last().unwrap());
        Some((last.distance(&curve.p3) - c, params))
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut upper = mismatch(c_max);
    for i in (1..SCAN).rev() {
        let c_lo = c_max * i as f64 / SCAN as f64;
        let lower = mismatch(c_lo);
        if let (Some((g_lo, _)), Some((g_hi, _))) = (&lower, &upper) {
            if *g_lo > 0.0 && *g_hi <= 0.0 {
                let (mut a, mut b) = (c_lo, c_max * (i + 1) as f64 / SCAN as f64);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    match mismatch(mid) {
                        Some((g, _)) if g > 0.0 => a = mid,
                        _ => b = mid,
                    }
                }
                if let Some((g, mut params)) = mismatch(a) {
                    if g.abs() <= 1e-9 * a {
                        params.push(1.0);
                        return Some(params);
                    }
                    if best.as_ref().is_none_or(|(bg, _)| g.abs() < *bg) {
                        best = Some((g.abs(), params));
                    }
                }
            }
        }
        upper = lower;
    }
    best.map(|(_, mut params)| {
        params.push(1.0);
        params
    })
}

fn polish_with_hops(curve: &BezierCurve, params: &mut Vec<f64>) {
    for _ in 0..32 {
        if chord_spread(curve, params) <= CHORD_SPREAD_TARGET {
            break;
        }
        match hop_tip(curve, params) {
            Some(better) => *params = better,
            None => break,
        }
    }
}

/// A point stuck on a cusp tip keeps one chord short. Moves an endpoint of
/// the shortest chord into the longest one and re-solves; returns the best
/// improvement, if any.
fn hop_tip(curve: &BezierCurve, params: &[f64]) -> Option<Vec<f64>> {
    let n = params.len();
    let points: Vec<Point> = params.iter().map(|&u| curve.eval(u)).collect();
    let (chords, _) = chord_residuals(&points);
    let by_len = |pick_max: bool| {
        (0..chords.len())
            .max_by(|&a, &b| {
                let o = chords[a].total_cmp(&chords[b]);
                if pick_max { o } else { o.reverse() }
            })
            .unwrap()
    };
    let (short, long) = (by_len(false), by_len(true));
    let current = chord_spread(curve, params);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in [short.saturating_sub(1), short, short + 1, short + 2] {
        if j == 0 || j >= n - 1 {
            continue;
        }
        let mut trial: Vec<f64> = params.to_vec();
        trial.remove(j);
        let at = if long >= j { long } else { long + 1 };
        let (a, b) = (trial[at - 1], trial[at]);
        trial.insert(at, 0.5 * (a + b));
        if !trial.windows(2).all(|w| w[0] < w[1]) {
            continue;
        }
        equalize_chords(curve, &mut trial);
        let spread = chord_spread(curve, &trial);
        if spread < current && best.as_ref().is_none_or(|(s, _)| spread < *s) {
            best = Some((spread, trial));
        }
    }
    best.map(|(_, p)| p)
}

/// Parameters at equal arc length, by linear inverse interpolation of the table.
fn arclength_params(cumulative: &[f64], n_points: usize) -> Vec<f64> {
    let total = *cumulative.last().unwrap();
    let mut params: Vec<f64> = (0..n_points)
        .map(|i| {
            let s = total * i as f64 / (n_points - 1) as f64;
            let j = cumulative
                .partition_point(|&c| c < s)
                .clamp(1, ARC_TABLE_SAMPLES);
            let (s0, s1) = (cumulative[j - 1], cumulative[j]);
            let frac = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
            ((j - 1) as f64 + frac) / ARC_TABLE_SAMPLES as f64
        })
        .collect();
    params[0] = 0.0;
    params[n_points - 1] = 1.0;
    params
}

fn chord_residuals(points: &[Point]) -> (Vec<f64>, f64) {
    let chords: Vec<f64> = points.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let merit = chords.windows(2).map(|w| (w[0] - w[1]).powi(2)).sum::<f64>();
    (chords, merit)
}

fn bezier_tangent(curve: &BezierCurve, u: f64) -> Point {
    let v = 1.0 - u;
    (curve.p1 - curve.p0) * (3.0 * v * v)
        + (curve.p2 - curve.p1) * (6.0 * v * u)
        + (curve.p3 - curve.p2) * (3.0 * u * u)
}

/// Newton iterations on `F_i = c_i - c_{i+1}` over the interior parameters,
/// with backtracking that keeps parameters strictly increasing.
fn equalize_chords(curve: &BezierCurve, params: &mut [f64]) {
    let n = params.len();
    let m = n - 2;
    let mut points: Vec<Point> = params.iter().map(|&u| curve.eval(u)).collect();
    let (mut chords, mut worst) = chord_residuals(&points);
    for _ in 0..200 {
        let mean = chords.iter().sum::<f64>() / chords.len() as f64;
        if worst <= (1e-13 * mean).powi(2) {
            break;
        }
        let tangents: Vec<Point> = params.iter().map(|&u| bezier_tangent(curve, u)).collect();
        // dc_i/du_i and dc_i/du_{i-1} for chord i between points i-1 and i.
        let d_end: Vec<f64> = (1..n)
            .map(|i| (points[i] - points[i - 1]).dot(&tangents[i]) / chords[i - 1].max(1e-300))
            .collect();
        let d_begin: Vec<f64> = (1..n)
            .map(|i| -(points[i] - points[i - 1]).dot(&tangents[i - 1]) / chords[i - 1].max(1e-300))
            .collect();
        // Row r solves for u_{r+1}; F_r = c_{r} - c_{r+1} (0-based chords).
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for r in 0..m {
            lower[r] = if r > 0 { d_begin[r] } else { 0.0 };
            diag[r] = d_end[r] - d_begin[r + 1];
            upper[r] = if r + 1 < m { -d_end[r + 1] } else { 0.0 };
            rhs[r] = -(chords[r] - chords[r + 1]);
        }
        let Some(step) = solve_tridiagonal(&lower, &diag, &upper, &rhs) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n)
                .map(|i| {
                    if i == 0 || i == n - 1 {
                        params[i]
                    } else {
                        params[i] + lambda * step[i - 1]
                    }
                })
                .collect();
            if trial.windows(2).all(|w| w[0] < w[1]) {
                let trial_points: Vec<Point> = trial.iter().map(|&u| curve.eval(u)).collect();
                let (trial_chords, trial_worst) = chord_residuals(&trial_points);
                if trial_worst < worst {
                    params.copy_from_slice(&trial);
                    points = trial_points;
                    chords = trial_chords;
                    worst = trial_worst;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// Thomas algorithm; `None` on a zero pivot.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return None;
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..m {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() < 1e-300 {
            return None;
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Finds the state farthest from the start→goal line; ties go to the earliest index.
pub fn deviation_descriptor(
    states: &[Point],
    start: &Point,
    goal: &Point,
) -> Result<DeviationDescriptor> {
    if states.is_empty() {
        return Err(domain("trajectory is empty"));
    }
    if start.distance(goal) < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "start and goal coincide; chord undefined".into(),
        ));
    }
    let mut best = DeviationDescriptor {
        position: states[0],
        magnitude: perpendicular_distance(&states[0], start, goal),
    };
    for s in &states[1..] {
        let d = perpendicular_distance(s, start, goal);
        if d > best.magnitude {
            best = DeviationDescriptor {
                position: *s,
                magnitude: d,
            };
        }
    }
    Ok(best)
}

/// State indices picked by [`subsample_path`].
pub fn subsample_indices(len: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(domain("k must be positive"));
    }
    if k > len {
        return Err(Error::InsufficientLength { len, required: k });
    }
    if k == 1 {
        return Ok(vec![len - 1]);
    }
    let span = len - 1;
    let gaps = k - 1;
    // round(i * span / gaps) in integer arithmetic
    Ok((0..k).map(|i| (2 * i * span + gaps) / (2 * gaps)).collect())
}

/// Picks `k` evenly spaced states, always including the first and final ones.
pub fn subsample_path(traj: &Trajectory, k: usize) -> Result<Path> {
    let idx = subsample_indices(traj.len(), k)?;
    Path::new(idx.into_iter().map(|i| traj.states()[i]).collect(), k)
}
