//! Quality-diversity trajectory dataset.
//!
//! Candidates are cubic Béziers from the start to the intended goal with
//! uniformly sampled control points. Each is keyed by the workspace cell of
//! its most deviating point; a cell keeps the candidate with the highest
//! training label `L_p`. Occupied cells are finally ranked into `ell` labels.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{integrate, EnvConfig, SceneSpec};
use crate::error::{domain, Error, Result};
use crate::geometry::{
    deviation_descriptor, resample_arclength, subsample_path, BezierCurve, Bounds,
    DeviationDescriptor, Path, Point, Trajectory, DEFAULT_PATH_LEN,
};
use crate::ipf::GoalScene;
use crate::scoring::{rank_normalize, score_lp_train, LegibilityLabel, DEFAULT_ALPHA};

/// States per sampled trajectory.
pub const DEFAULT_TRAJECTORY_STATES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QdConfig {
    /// Archive cells per workspace axis.
    pub cells: Vec<usize>,
    pub budget: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
    pub n_states: usize,
    /// Sampling box for the two control points; the workspace when `None`.
    pub control_bounds: Option<Bounds>,
}

impl QdConfig {
    /// 10x10 cells in 2D, 6x6x6 in 3D, budget 10^4.
    pub fn for_scene(spec: &SceneSpec, seed: u64) -> Self {
        QdConfig {
            cells: if spec.dim() == 3 { vec![6; 3] } else { vec![10; 2] },
            budget: 10_000,
            sigma: spec.sigma,
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_PATH_LEN,
            seed,
            n_states: DEFAULT_TRAJECTORY_STATES,
            control_bounds: None,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }
}

/// SplitMix64 finalizer; derives independent per-candidate seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the two control points uniformly from `control_bounds`.
pub fn sample_curve(scene: &GoalScene, seed: u64, control_bounds: &Bounds) -> Result<BezierCurve> {
    if !scene.bounds.contains_box(control_bounds) {
        return Err(domain("control bounds must lie within the workspace"));
    }
    control_bounds.min.check_dim(scene.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        control_bounds
            .min
            .map(|a, lo| lo + rng.gen::<f64>() * control_bounds.extent(a))
    };
    let c1 = draw();
    let c2 = draw();
    BezierCurve::new(scene.start, c1, c2, scene.goal())
}

/// Arc-length-resampled Bézier candidate, deterministic in `seed`.
pub fn sample_candidate(
    scene: &GoalScene,
    seed: u64,
    control_bounds: &Bounds,
    n_states: usize,
) -> Result<Trajectory> {
    resample_arclength(&sample_curve(scene, seed, control_bounds)?, n_states)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertOutcome {
    NewCell,
    Improved,
    Rejected,
    OutOfBounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Elite {
    pub trajectory: Trajectory,
    pub lp_raw: f64,
    pub descriptor: DeviationDescriptor,
    pub seed: u64,
}

/// MAP-Elites style grid archive keyed by deviation position.
#[derive(Clone, Debug)]
pub struct Archive {
    pub scene: GoalScene,
    pub cells: Vec<usize>,
    sigma: f64,
    alpha: f64,
    elites: BTreeMap<usize, Elite>,
    out_of_bounds: usize,
    /// `(cell, lp_raw)` for every accepted insertion, in order.
    accepted: Vec<(usize, f64)>,
}

impl Archive {
    pub fn new(scene: GoalScene, cells: Vec<usize>, sigma: f64, alpha: f64) -> Result<Self> {
        if cells.len() != scene.dim() || cells.contains(&0) {
            return Err(domain("cell grid must have one positive count per axis"));
        }
        Ok(Archive {
            scene,
            cells,
            sigma,
            alpha,
            elites: BTreeMap::new(),
            out_of_bounds: 0,
            accepted: Vec::new(),
        })
    }

    /// Flat x-fastest cell index of `p`, or `None` outside the workspace.
    pub fn cell_of(&self, p: &Point) -> Option<usize> {
        let b = &self.scene.bounds;
        if !b.contains(p) {
            return None;
        }
        let mut flat = 0;
        for axis in (0..p.dim()).rev() {
            let n = self.cells[axis];
            let u = (p.coord(axis) - b.min.coord(axis)) / b.extent(axis);
            let i = ((u * n as f64).floor() as usize).min(n - 1);
            flat = flat * n + i;
        }
        Some(flat)
    }

    pub fn insert(&mut self, traj: Trajectory, seed: u64) -> Result<InsertOutcome> {
        let (start, goal) = (self.scene.start, self.scene.goal());
        if traj.first().distance(&start) > 1e-9 || traj.last().distance(&goal) > 1e-9 {
            return Err(domain("trajectory endpoints must match the scene start and goal"));
        }
        let descriptor = deviation_descriptor(traj.states(), &start, &goal)?;
        let Some(cell) = self.cell_of(&descriptor.position) else {
            self.out_of_bounds += 1;
            return Ok(InsertOutcome::OutOfBounds);
        };
        let lp_raw = score_lp_train(traj.states(), &self.scene, self.sigma, self.alpha)?;
        let outcome = match self.elites.get(&cell) {
            None => InsertOutcome::NewCell,
            Some(e) if lp_raw > e.lp_raw => InsertOutcome::Improved,
            Some(_) => return Ok(InsertOutcome::Rejected),
        };
        self.elites.insert(
            cell,
            Elite {
                trajectory: traj,
                lp_raw,
                descriptor,
                seed,
            },
        );
        self.accepted.push((cell, lp_raw));
        Ok(outcome)
    }

    pub fn fill_count(&self) -> usize {
        self.elites.len()
    }

    pub fn fill_rate(&self) -> f64 {
        self.fill_count() as f64 / self.cells.iter().product::<usize>() as f64
    }

    pub fn out_of_bounds(&self) -> usize {
        self.out_of_bounds
    }

    pub fn elites(&self) -> impl Iterator<Item = (&usize, &Elite)> {
        self.elites.iter()
    }

    pub fn insertion_log(&self) -> &[(usize, f64)] {
        &self.accepted
    }
}

/// One labeled trajectory of a target cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub scene_id: String,
    pub scene: GoalScene,
    pub seed: u64,
    pub trajectory: Trajectory,
    pub path: Path,
    pub label: LegibilityLabel,
    pub descriptor: DeviationDescriptor,
}

/// Summary of one target cohort, stored in the dataset header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortInfo {
    pub scene_id: String,
    pub intended: usize,
    pub size: usize,
    pub fill_rate: f64,
    pub out_of_bounds: usize,
    /// Where the straight start→goal line would fall on the `ell` scale.
    pub straight_line_ell: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub config: QdConfig,
    pub cohorts: Vec<CohortInfo>,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn cohort(&self, intended: usize) -> impl Iterator<Item = &DatasetRecord> {
        self.records
            .iter()
            .filter(move |r| r.scene.intended == intended)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }
}

pub fn scene_id(intended: usize) -> String {
    format!("target-{intended}")
}

/// Result of filling one archive, before labeling.
pub struct ArchiveRun {
    pub archive: Archive,
    pub outcomes: Vec<InsertOutcome>,
}

pub fn fill_archive(scene: &GoalScene, config: &QdConfig) -> Result<ArchiveRun> {
    if config.budget < config.cell_count() {
        return Err(domain(format!(
            "budget {} is below the cell count {}",
            config.budget,
            config.cell_count()
        )));
    }
    let control = config.control_bounds.unwrap_or(scene.bounds);
    let mut archive = Archive::new(scene.clone(), config.cells.clone(), config.sigma, config.alpha)?;
    let mut outcomes = Vec::with_capacity(config.budget);
    for i in 0..config.budget {
        let seed = mix_seed(config.seed, i as u64);
        let traj = match sample_candidate(scene, seed, &control, config.n_states) {
            Ok(t) => t,
            // A zero-length curve cannot be placed; skip it.
            Err(Error::DegenerateGeometry(_)) => continue,
            Err(e) => return Err(e),
        };
        outcomes.push(archive.insert(traj, seed)?);
    }
    Ok(ArchiveRun { archive, outcomes })
}

/// Runs the archive for the scene's intended goal and labels its elites.
pub fn generate_dataset(scene: &GoalScene, config: &QdConfig) -> Result<(CohortInfo, Vec<DatasetRecord>)> {
    if config.k < 2 {
        return Err(domain("paths need at least 2 waypoints"));
    }
    let run = fill_archive(scene, config)?;
    let archive = &run.archive;
    if archive.fill_count() < 2 {
        return Err(Error::CohortTooSmall(archive.fill_count()));
    }
    let elites: Vec<&Elite> = archive.elites().map(|(_, e)| e).collect();
    let raw: Vec<f64> = elites.iter().map(|e| e.lp_raw).collect();
    let labels = rank_normalize(&raw)?;
    let id = scene_id(scene.intended);

    let straight = Trajectory::new(
        (0..config.n_states)
            .map(|i| scene.start + (scene.goal() - scene.start) * (i as f64 / (config.n_states - 1) as f64))
            .collect(),
        crate::geometry::DEFAULT_DT,
    )?;
    let straight_raw = score_lp_train(straight.states(), scene, config.sigma, config.alpha)?;

    let records = elites
        .iter()
        .zip(&labels)
        .map(|(e, label)| {
            Ok(DatasetRecord {
                scene_id: id.clone(),
                scene: scene.clone(),
                seed: e.seed,
                path: subsample_path(&e.trajectory, config.k)?,
                trajectory: e.trajectory.clone(),
                label: *label,
                descriptor: e.descriptor,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let info = CohortInfo {
        scene_id: id,
        intended: scene.intended,
        size: records.len(),
        fill_rate: archive.fill_rate(),
        out_of_bounds: archive.out_of_bounds(),
        straight_line_ell: interpolate_label(&labels, straight_raw),
    };
    Ok((info, records))
}

/// Position of an outside score on the cohort's `ell` scale, by linear
/// interpolation between neighbouring ranks.
fn interpolate_label(labels: &[LegibilityLabel], raw: f64) -> f64 {
    let mut sorted: Vec<&LegibilityLabel> = labels.iter().collect();
    sorted.sort_by_key(|l| l.rank);
    if raw <= sorted[0].raw {
        return -1.0;
    }
    for w in sorted.windows(2) {
        if raw <= w[1].raw {
            let f = (raw - w[0].raw) / (w[1].raw - w[0].raw);
            return w[0].normalized + f * (w[1].normalized - w[0].normalized);
        }
    }
    1.0
}

/// One cohort per goal, each ranked separately, with demonstration actions attached.
pub fn generate_all_targets(spec: &SceneSpec, config: &QdConfig) -> Result<Dataset> {
    let mut cohorts = Vec::new();
    let mut records = Vec::new();
    for intended in 0..spec.scene.goals.len() {
        let scene = spec.scene.with_intended(intended)?;
        let cfg = QdConfig {
            seed: mix_seed(config.seed, 1_000_003 + intended as u64),
            ..config.clone()
        };
        let (info, recs) = generate_dataset(&scene, &cfg)?;
        cohorts.push(info);
        for mut r in recs {
            r.trajectory = demo_rollout(&r, &spec.env)?.trajectory;
            r.path = subsample_path(&r.trajectory, cfg.k)?;
            records.push(r);
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        config: config.clone(),
        cohorts,
        records,
    })
}

#[derive(Clone, Debug)]
pub struct Demo {
    pub trajectory: Trajectory,
    pub clipped: usize,
    pub max_divergence: f64,
}

/// Replay divergence above which a demonstration is rejected.
pub const DEMO_DIVERGENCE_LIMIT: f64 = 1e-3;

/// Attaches velocity actions by inverse point-mass dynamics
/// (`a = (s' - s) / dt`, clipped) and replays them from the start. When any
/// action was clipped the replayed states replace the originals, so states
/// and actions always agree.
pub fn demo_rollout(record: &DatasetRecord, env: &EnvConfig) -> Result<Demo> {
    env.validate()?;
    let states = record.trajectory.states();
    let bounds = &record.scene.bounds;
    let mut actions = Vec::with_capacity(states.len() - 1);
    let mut replayed = Vec::with_capacity(states.len());
    let mut clipped = 0;
    let mut max_divergence = 0.0f64;
    let mut current = states[0];
    replayed.push(current);
    for w in states.windows(2) {
        let raw = (w[1] - w[0]) * (1.0 / env.dt);
        let a = env.clip_action(&raw);
        if a != raw {
            clipped += 1;
        }
        current = integrate(&current, &a, env, bounds);
        max_divergence = max_divergence.max(current.distance(&w[1]));
        actions.push(a);
        replayed.push(current);
    }
    if max_divergence > DEMO_DIVERGENCE_LIMIT {
        return Err(Error::InfeasibleDemo {
            divergence: max_divergence,
            limit: DEMO_DIVERGENCE_LIMIT,
        });
    }
    let states = if clipped == 0 { states.to_vec() } else { replayed };
    Ok(Demo {
        trajectory: Trajectory::new(states, env.dt)?.with_actions(actions)?,
        clipped,
        max_divergence,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    scene: SceneSpec,
    config: QdConfig,
    cohorts: Vec<CohortInfo>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    scene_id: String,
    seed: u64,
    states: Vec<Point>,
    actions: Option<Vec<Point>>,
    path: Vec<Point>,
    lp_raw: f64,
    lp_rank: usize,
    ell: f64,
    descriptor_pos: Point,
    descriptor_mag: f64,
}

impl Dataset {
    /// Header line with scene geometry and config, then one record per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = HeaderLine {
            header: DatasetHeader {
                scene: self.spec.clone(),
                config: self.config.clone(),
                cohorts: self.cohorts.clone(),
            },
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            let line = RecordLine {
                scene_id: r.scene_id.clone(),
                seed: r.seed,
                states: r.trajectory.states().to_vec(),
                actions: r.trajectory.actions().map(|a| a.to_vec()),
                path: r.path.waypoints().to_vec(),
                lp_raw: r.label.raw,
                lp_rank: r.label.rank,
                ell: r.label.normalized,
                descriptor_pos: r.descriptor.position,
                descriptor_mag: r.descriptor.magnitude,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let HeaderLine { header } = serde_json::from_str(&first)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: RecordLine = serde_json::from_str(&line)?;
            let cohort = header
                .cohorts
                .iter()
                .find(|c| c.scene_id == r.scene_id)
                .ok_or_else(|| Error::Format(format!("unknown scene_id {}", r.scene_id)))?;
            let scene = header.scene.scene.with_intended(cohort.intended)?;
            let mut trajectory = Trajectory::new(r.states, header.scene.env.dt)?;
            if let Some(a) = r.actions {
                trajectory = trajectory.with_actions(a)?;
            }
            let k = r.path.len();
            records.push(DatasetRecord {
                scene_id: r.scene_id,
                scene,
                seed: r.seed,
                trajectory,
                path: Path::new(r.path, k)?,
                label: LegibilityLabel {
                    raw: r.lp_raw,
                    normalized: r.ell,
                    rank: r.lp_rank,
                    cohort_size: cohort.size,
                },
                descriptor: DeviationDescriptor {
                    position: r.descriptor_pos,
                    magnitude: r.descriptor_mag,
                },
            });
        }
        Ok(Dataset {
            spec: header.scene,
            config: header.config,
            cohorts: header.cohorts,
            records,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Dataset::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DEFAULT_DT;

    fn spec() -> SceneSpec {
        SceneSpec::default_2d()
    }

    fn small_config() -> QdConfig {
        QdConfig {
            cells: vec![5, 5],
            budget: 400,
            ..QdConfig::for_scene(&spec(), 7)
        }
    }

    #[test]
    fn candidates_are_deterministic_and_anchored() {
        let s = spec();
        let a = sample_candidate(&s.scene, 11, &s.scene.bounds, 100).unwrap();
        let b = sample_candidate(&s.scene, 11, &s.scene.bounds, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        for seed in 0..1000 {
            let c = sample_curve(&s.scene, seed, &s.scene.bounds).unwrap();
            let t = resample_arclength(&c, 20).unwrap();
            assert!(t.first().distance(&s.scene.start) < 1e-9);
            assert!(t.last().distance(&s.scene.goal()) < 1e-9);
        }
    }

    #[test]
    fn collinear_controls_give_zero_deviation() {
        let s = spec().scene;
        let on_chord = |u: f64| s.start + (s.goal() - s.start) * u;
        let c = BezierCurve::new(s.start, on_chord(0.3), on_chord(0.6), s.goal()).unwrap();
        let t = resample_arclength(&c, 100).unwrap();
        let d = deviation_descriptor(t.states(), &s.start, &s.goal()).unwrap();
        assert!(d.magnitude < 1e-12);
    }

    #[test]
    fn control_bounds_must_fit_workspace() {
        let s = spec().scene;
        let wide = Bounds::unit(2).inflate(0.5);
        assert!(sample_curve(&s, 0, &wide).is_err());
    }

    fn arc(scene: &GoalScene, bulge: f64) -> Trajectory {
        let mid = (scene.start + scene.goal()) * 0.5;
        let c1 = Point::xy(mid.coord(0) + bulge, 0.35);
        let c2 = Point::xy(mid.coord(0) + bulge, 0.65);
        resample_arclength(&BezierCurve::new(scene.start, c1, c2, scene.goal()).unwrap(), 100).unwrap()
    }

    #[test]
    fn archive_insert_outcomes() {
        let s = spec();
        let mut archive = Archive::new(s.scene.clone(), vec![10, 10], s.sigma, DEFAULT_ALPHA).unwrap();
        let a = arc(&s.scene, -0.12);
        assert_eq!(archive.insert(a.clone(), 1).unwrap(), InsertOutcome::NewCell);
        assert_eq!(archive.insert(a, 1).unwrap(), InsertOutcome::Rejected);
        assert_eq!(archive.fill_count(), 1);

        let bad = Trajectory::new(vec![Point::xy(0.0, 0.0), s.scene.goal()], DEFAULT_DT).unwrap();
        assert!(archive.insert(bad, 0).is_err());
    }

    #[test]
    fn better_trajectory_in_same_cell_improves() {
        let s = spec();
        let mut archive = Archive::new(s.scene.clone(), vec![10, 10], s.sigma, DEFAULT_ALPHA).unwrap();
        // Two left-bending arcs whose deviation points share a cell.
        let weak = arc(&s.scene, -0.10);
        let strong = arc(&s.scene, -0.13);
        let dw = deviation_descriptor(weak.states(), &s.scene.start, &s.scene.goal()).unwrap();
        let ds = deviation_descriptor(strong.states(), &s.scene.start, &s.scene.goal()).unwrap();
        assert_eq!(archive.cell_of(&dw.position), archive.cell_of(&ds.position));
        let lw = score_lp_train(weak.states(), &s.scene, s.sigma, DEFAULT_ALPHA).unwrap();
        let ls = score_lp_train(strong.states(), &s.scene, s.sigma, DEFAULT_ALPHA).unwrap();
        assert!(ls > lw);
        assert_eq!(archive.insert(weak, 1).unwrap(), InsertOutcome::NewCell);
        assert_eq!(archive.insert(strong.clone(), 2).unwrap(), InsertOutcome::Improved);
        assert_eq!(archive.insert(arc(&s.scene, -0.10), 3).unwrap(), InsertOutcome::Rejected);
        let (_, elite) = archive.elites().next().unwrap();
        assert_eq!(elite.trajectory, strong);
    }

    #[test]
    fn cell_index_edges() {
        let s = spec();
        let archive = Archive::new(s.scene.clone(), vec![10, 10], s.sigma, DEFAULT_ALPHA).unwrap();
        assert_eq!(archive.cell_of(&Point::xy(0.0, 0.0)), Some(0));
        assert_eq!(archive.cell_of(&Point::xy(1.0, 1.0)), Some(99));
        assert_eq!(archive.cell_of(&Point::xy(0.15, 0.0)), Some(1));
        assert_eq!(archive.cell_of(&Point::xy(0.0, 0.15)), Some(10));
        assert_eq!(archive.cell_of(&Point::xy(1.01, 0.5)), None);
    }

    #[test]
    fn dataset_labels_and_paths() {
        let s = spec();
        let (info, records) = generate_dataset(&s.scene, &small_config()).unwrap();
        assert_eq!(info.size, records.len());
        let raw: Vec<f64> = records.iter().map(|r| r.label.raw).collect();
        let expected = rank_normalize(&raw).unwrap();
        for (r, l) in records.iter().zip(&expected) {
            assert_eq!(r.label, *l);
            assert_eq!(r.path.k(), 8);
            assert_eq!(r.path, subsample_path(&r.trajectory, 8).unwrap());
        }
        assert!((-1.0..=1.0).contains(&info.straight_line_ell));
    }

    #[test]
    fn budget_below_cells_rejected() {
        let cfg = QdConfig {
            budget: 10,
            ..small_config()
        };
        assert!(generate_dataset(&spec().scene, &cfg).is_err());
    }

    #[test]
    fn demo_straight_line_has_constant_action() {
        let s = spec();
        let states: Vec<Point> = (0..50)
            .map(|i| s.scene.start + (s.scene.goal() - s.scene.start) * (i as f64 / 49.0))
            .collect();
        let traj = Trajectory::new(states, DEFAULT_DT).unwrap();
        let record = DatasetRecord {
            scene_id: scene_id(0),
            scene: s.scene.clone(),
            seed: 0,
            path: subsample_path(&traj, 8).unwrap(),
            trajectory: traj,
            label: rank_normalize(&[0.0, 1.0]).unwrap()[0],
            descriptor: DeviationDescriptor {
                position: s.scene.start,
                magnitude: 0.0,
            },
        };
        let demo = demo_rollout(&record, &s.env).unwrap();
        let actions = demo.trajectory.actions().unwrap();
        for a in actions {
            assert!(a.distance(&actions[0]) < 1e-9);
        }
        assert_eq!(demo.clipped, 0);
        assert!(demo.trajectory.last().distance(&s.scene.goal()) < 1e-6);

        // dt small enough that the required speed exceeds the bound
        let fast = EnvConfig {
            dt: 0.001,
            ..s.env
        };
        let err = demo_rollout(&record, &fast).unwrap_err();
        assert!(matches!(err, Error::InfeasibleDemo { .. }));
    }

    #[test]
    fn demo_clipping_is_counted() {
        let s = spec();
        // one fast step in the middle, slightly over the bound
        let states = vec![
            Point::xy(0.5, 0.1),
            Point::xy(0.5, 0.15),
            Point::xy(0.5, 0.15 + 0.0755),
            Point::xy(0.5, 0.3),
        ];
        let traj = Trajectory::new(states, DEFAULT_DT).unwrap();
        let record = DatasetRecord {
            scene_id: scene_id(0),
            scene: s.scene.clone(),
            seed: 0,
            path: subsample_path(&traj, 2).unwrap(),
            trajectory: traj,
            label: rank_normalize(&[0.0, 1.0]).unwrap()[0],
            descriptor: DeviationDescriptor {
                position: s.scene.start,
                magnitude: 0.0,
            },
        };
        let demo = demo_rollout(&record, &s.env).unwrap();
        assert_eq!(demo.clipped, 1);
        assert!(demo.max_divergence > 0.0 && demo.max_divergence <= DEMO_DIVERGENCE_LIMIT);
    }

    #[test]
    fn dataset_file_round_trip() {
        let cfg = QdConfig {
            cells: vec![4, 4],
            budget: 100,
            ..QdConfig::for_scene(&spec(), 3)
        };
        let ds = generate_all_targets(&spec(), &cfg).unwrap();
        assert_eq!(ds.cohorts.len(), 2);
        let bytes = ds.to_bytes().unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        let rec_line = text.lines().nth(1).unwrap();
        for key in [
            "scene_id", "seed", "states", "actions", "path", "lp_raw", "lp_rank", "ell",
            "descriptor_pos", "descriptor_mag",
        ] {
            assert!(rec_line.contains(&format!("\"{key}\":")), "{key}");
        }
        let back = Dataset::read_from(&bytes[..]).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
