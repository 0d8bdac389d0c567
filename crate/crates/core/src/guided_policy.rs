//! Stage 2: a diffusion policy that turns a path into velocity commands.
//!
//! Each sample is an action chunk of `horizon` steps conditioned on the last
//! `n_obs` states, the goal and the path. Goal and waypoints enter relative
//! to the current state.
//!
//! Context layout: `history (n_obs·dim) | goal - x (dim) | path - x (k·dim)
//! | track (tracking features)`. The tracking block describes where the
//! current state sits relative to the path polyline; see [`PathTracking`].

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::diffusion::{ContextLayout, ContextSegment, DiffusionModel, NoiseSchedule, TrainConfig};
use crate::env::{step, EnvState, SceneSpec, Status};
use crate::error::{domain, Error, Result};
use crate::geometry::{Path, Point, Trajectory};
use crate::qd::{mix_seed, Dataset};

pub const DEFAULT_HORIZON: usize = 8;
pub const DEFAULT_N_OBS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyObservation {
    /// Oldest first; the last entry is the current state.
    pub history: Vec<Point>,
    pub goal: Point,
    pub path: Path,
}

impl PolicyObservation {
    pub fn new(history: Vec<Point>, goal: Point, path: Path) -> Result<Self> {
        let Some(current) = history.last() else {
            return Err(domain("history must not be empty"));
        };
        let dim = current.dim();
        for p in &history {
            p.check_dim(dim)?;
        }
        goal.check_dim(dim)?;
        if path.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: path.dim(),
            });
        }
        Ok(PolicyObservation { history, goal, path })
    }

    /// History of `n_obs` copies of `start`, as at the beginning of an episode.
    pub fn at_start(start: Point, goal: Point, path: Path, n_obs: usize) -> Result<Self> {
        PolicyObservation::new(vec![start; n_obs.max(1)], goal, path)
    }

    /// Observation at state `index` of `states`, padding with the first state.
    pub fn from_states(states: &[Point], index: usize, n_obs: usize, goal: Point, path: Path) -> Result<Self> {
        let history = (0..n_obs)
            .map(|j| states[(index + j + 1).saturating_sub(n_obs)])
            .collect();
        PolicyObservation::new(history, goal, path)
    }

    pub fn current(&self) -> Point {
        *self.history.last().expect("history is non-empty")
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let x = self.current();
        let mut v = Vec::new();
        for h in &self.history {
            v.extend_from_slice(h.as_slice());
        }
        v.extend_from_slice((self.goal - x).as_slice());
        for w in self.path.waypoints() {
            v.extend_from_slice((*w - x).as_slice());
        }
        PathTracking::new(&self.path, &x).extend(&x, &mut v);
        v
    }
}

/// Arc length between the projection and the lookahead point.
pub const LOOKAHEAD: f64 = 0.1;

/// Projection of a state onto the path polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathTracking {
    /// Closest point on the polyline.
    pub nearest: Point,
    /// Point [`LOOKAHEAD`] further along the polyline, capped at its end.
    pub ahead: Point,
    /// Unit direction of the closest segment.
    pub tangent: Point,
    /// Arc position of the projection as a fraction of the path length.
    pub progress: f64,
    pub length: f64,
}

impl PathTracking {
    /// Width of the tracking block for a workspace dimension.
    pub fn width(dim: usize) -> usize {
        3 * dim + 2
    }

    pub fn new(path: &Path, x: &Point) -> Self {
        let w = path.waypoints();
        let seg_len: Vec<f64> = w.windows(2).map(|p| p[0].distance(&p[1])).collect();
        let length: f64 = seg_len.iter().sum();
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for (i, pair) in w.windows(2).enumerate() {
            let ab = pair[1] - pair[0];
            let l2 = ab.norm_squared();
            let u = if l2 > 0.0 { ((*x - pair[0]).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
            let d = x.distance(&(pair[0] + ab * u));
            if d < best.0 {
                best = (d, i, u);
            }
        }
        let (_, seg, u) = best;
        if w.len() < 2 || length == 0.0 {
            return PathTracking {
                nearest: w[0],
                ahead: w[w.len() - 1],
                tangent: Point::zeros(x.dim()),
                progress: 1.0,
                length,
            };
        }
        let nearest = w[seg] + (w[seg + 1] - w[seg]) * u;
        let tangent = if seg_len[seg] > 0.0 { (w[seg + 1] - w[seg]) * (1.0 / seg_len[seg]) } else { Point::zeros(x.dim()) };
        let arc = seg_len[..seg].iter().sum::<f64>() + u * seg_len[seg];
        PathTracking {
            nearest,
            ahead: point_at_arc(w, &seg_len, arc + LOOKAHEAD),
            tangent,
            progress: arc / length,
            length,
        }
    }

    fn extend(&self, x: &Point, v: &mut Vec<f64>) {
        v.extend_from_slice((self.nearest - *x).as_slice());
        v.extend_from_slice((self.ahead - *x).as_slice());
        v.extend_from_slice(self.tangent.as_slice());
        v.push(self.progress);
        v.push(self.length);
    }
}

fn point_at_arc(w: &[Point], seg_len: &[f64], arc: f64) -> Point {
    let mut left = arc;
    for (i, l) in seg_len.iter().enumerate() {
        if left <= *l && *l > 0.0 {
            return w[i] + (w[i + 1] - w[i]) * (left / l);
        }
        left -= l;
    }
    w[w.len() - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunk {
    pub actions: Vec<Point>,
}

/// Action chunks starting every `stride` steps; a chunk running past the
/// last action is padded by repeating it. Returns `(start index, actions)`.
pub fn slice_chunks(traj: &Trajectory, horizon: usize, stride: usize) -> Result<Vec<(usize, Vec<Point>)>> {
    let actions = traj
        .actions()
        .ok_or_else(|| domain("trajectory has no actions"))?;
    if horizon == 0 || stride == 0 {
        return Err(domain("horizon and stride must be positive"));
    }
    let last = *actions.last().expect("trajectories have at least one action");
    Ok((0..actions.len())
        .step_by(stride)
        .map(|s| {
            let chunk = (s..s + horizon)
                .map(|i| actions.get(i).copied().unwrap_or(last))
                .collect();
            (s, chunk)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub train: TrainConfig,
    pub schedule: NoiseSchedule,
    pub n_obs: usize,
    pub horizon: usize,
    /// Steps between the starts of consecutive training chunks.
    pub stride: usize,
    /// Perturbed copies added per chunk; see [`train_stage2`].
    pub augment_copies: usize,
    /// Per-axis standard deviation of the perturbation, workspace units.
    pub augment_sigma: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            train: TrainConfig {
                steps: 60_000,
                cond_embed: 128,
                ..TrainConfig::default()
            },
            schedule: NoiseSchedule::default(),
            n_obs: DEFAULT_N_OBS,
            horizon: DEFAULT_HORIZON,
            stride: 1,
            augment_copies: 2,
            augment_sigma: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyEncoder {
    pub dim: usize,
    pub k: usize,
    pub n_obs: usize,
    pub horizon: usize,
    pub action_bound: f64,
}

impl PolicyEncoder {
    pub fn layout(&self) -> ContextLayout {
        let seg = |name: &str, len: usize| ContextSegment {
            name: name.into(),
            len,
        };
        let mut settings = serde_json::Map::new();
        settings.insert("stage".into(), json!("policy"));
        settings.insert("dim".into(), json!(self.dim));
        settings.insert("k".into(), json!(self.k));
        settings.insert("n_obs".into(), json!(self.n_obs));
        settings.insert("horizon".into(), json!(self.horizon));
        settings.insert("action_bound".into(), json!(self.action_bound));
        ContextLayout {
            segments: vec![
                seg("history", self.n_obs * self.dim),
                seg("goal_rel", self.dim),
                seg("path_rel", self.k * self.dim),
                seg("track", PathTracking::width(self.dim)),
            ],
            settings,
        }
    }

    pub fn from_layout(layout: &ContextLayout) -> Result<Self> {
        let s = &layout.settings;
        if s.get("stage").and_then(|v| v.as_str()) != Some("policy") {
            return Err(Error::Format("checkpoint is not a policy".into()));
        }
        let get = |key: &str| {
            s.get(key)
                .cloned()
                .ok_or_else(|| Error::Format(format!("context layout lacks {key}")))
        };
        Ok(PolicyEncoder {
            dim: serde_json::from_value(get("dim")?)?,
            k: serde_json::from_value(get("k")?)?,
            n_obs: serde_json::from_value(get("n_obs")?)?,
            horizon: serde_json::from_value(get("horizon")?)?,
            action_bound: serde_json::from_value(get("action_bound")?)?,
        })
    }

    fn check(&self, obs: &PolicyObservation) -> Result<()> {
        if obs.history.len() != self.n_obs {
            return Err(domain(format!("expected {} history states, got {}", self.n_obs, obs.history.len())));
        }
        if obs.goal.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: obs.goal.dim(),
            });
        }
        if obs.path.k() != self.k {
            return Err(domain(format!("expected {} waypoints, got {}", self.k, obs.path.k())));
        }
        Ok(())
    }
}

/// Trains on every chunk of every demonstration, each paired with the
/// observation at the chunk's first state and the record's own path.
///
/// Demonstrations never leave their path, so a policy trained on them alone
/// has no example of recovering from drift. Each perturbed copy shifts the
/// observed history by a Gaussian offset `d` and subtracts `d / (H dt)` from
/// every action; under the integrator dynamics that chunk ends back on the
/// demonstration.
pub fn train_stage2(dataset: &Dataset, config: &PolicyConfig) -> Result<DiffusionModel> {
    let records = &dataset.records;
    let first = records.first().ok_or_else(|| domain("dataset has no records"))?;
    if config.n_obs == 0 {
        return Err(domain("n_obs must be positive"));
    }
    let encoder = PolicyEncoder {
        dim: dataset.dim(),
        k: first.path.k(),
        n_obs: config.n_obs,
        horizon: config.horizon,
        action_bound: dataset.spec.env.action_bound,
    };
    let layout = encoder.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.train.seed, 0xa4_6e));
    let offset = Normal::new(0.0, config.augment_sigma).map_err(|e| domain(e.to_string()))?;
    let dt = dataset.spec.env.dt;
    let bound = encoder.action_bound;
    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for r in records {
        let states = r.trajectory.states();
        for (start, chunk) in slice_chunks(&r.trajectory, config.horizon, config.stride)? {
            let obs = PolicyObservation::from_states(states, start, config.n_obs, r.scene.goal(), r.path.clone())?;
            encoder.check(&obs)?;
            let flat: Vec<f64> = chunk.iter().flat_map(|a| a.as_slice().to_vec()).collect();
            rows.push((flat, obs.to_vector()));
            for _ in 0..config.augment_copies {
                let d = Point::zeros(encoder.dim).map(|_, _| offset.sample(&mut rng));
                let correction = d * (1.0 / (config.horizon as f64 * dt));
                let mut shifted = obs.clone();
                shifted.history.iter_mut().for_each(|h| *h = *h + d);
                let flat: Vec<f64> = chunk
                    .iter()
                    .flat_map(|a| (*a - correction).map(|_, v| v.clamp(-bound, bound)).as_slice().to_vec())
                    .collect();
                rows.push((flat, shifted.to_vector()));
            }
        }
    }
    let mut data = Array2::zeros((rows.len(), encoder.horizon * encoder.dim));
    let mut contexts = Array2::zeros((rows.len(), layout.len()));
    for (i, (a, c)) in rows.iter().enumerate() {
        data.row_mut(i).assign(&ArrayView1::from(a));
        contexts.row_mut(i).assign(&ArrayView1::from(c));
    }
    log::info!("policy training on {} chunks", rows.len());
    DiffusionModel::fit(data.view(), contexts.view(), layout, config.schedule.clone(), &config.train)
}

fn decode_chunk(encoder: &PolicyEncoder, flat: &[f64]) -> Result<ActionChunk> {
    let b = encoder.action_bound;
    let actions = flat
        .chunks(encoder.dim)
        .map(|c| Point::new(c).map(|p| p.map(|_, v| v.clamp(-b, b))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActionChunk { actions })
}

pub fn act(model: &DiffusionModel, obs: &PolicyObservation, seed: u64) -> Result<ActionChunk> {
    let encoder = PolicyEncoder::from_layout(&model.context_layout)?;
    encoder.check(obs)?;
    let ctx = obs.to_vector();
    let contexts = Array2::from_shape_vec((1, ctx.len()), ctx).map_err(|e| domain(e.to_string()))?;
    let flat = model.sample_batch(contexts.view(), &[seed])?.remove(0);
    decode_chunk(&encoder, &flat)
}

/// An executed episode. States include the start; `actions[i]` moved
/// `states[i]` to `states[i + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<Point>,
    pub actions: Vec<Point>,
    pub status: Status,
}

impl Rollout {
    pub fn success(&self) -> bool {
        self.status == Status::Success
    }

    /// As a trajectory; fails for single-state rollouts.
    pub fn to_trajectory(&self, dt: f64) -> Result<Trajectory> {
        Trajectory::new(self.states.clone(), dt)?.with_actions(self.actions.clone())
    }
}

/// Receding-horizon execution: sample a chunk, run all of it, re-observe.
/// Chunk `j` of an episode is sampled with `mix_seed(seed, j)`.
pub fn rollout(model: &DiffusionModel, spec: &SceneSpec, path: &Path, max_steps: usize, seed: u64) -> Result<Rollout> {
    Ok(rollout_batch(model, spec, std::slice::from_ref(path), max_steps, &[seed])?.remove(0))
}

/// Runs independent episodes in lockstep, sampling all their chunks in one batch.
pub fn rollout_batch(model: &DiffusionModel, spec: &SceneSpec, paths: &[Path], max_steps: usize, seeds: &[u64]) -> Result<Vec<Rollout>> {
    let encoder = PolicyEncoder::from_layout(&model.context_layout)?;
    if paths.len() != seeds.len() {
        return Err(domain("one seed per path is required"));
    }
    if spec.dim() != encoder.dim {
        return Err(Error::DimensionMismatch {
            expected: encoder.dim,
            found: spec.dim(),
        });
    }
    let mut run_spec = spec.clone();
    run_spec.env.max_steps = max_steps;
    let goal = spec.scene.goal();
    let mut episodes: Vec<(EnvState, Rollout)> = paths
        .iter()
        .map(|_| {
            let s = EnvState::reset(&spec.scene);
            let status = if max_steps == 0 { Status::Timeout } else { Status::Running };
            (
                EnvState { status, ..s },
                Rollout {
                    states: vec![s.position],
                    actions: Vec::new(),
                    status,
                },
            )
        })
        .collect();
    let mut replan = 0u64;
    loop {
        let active: Vec<usize> = (0..episodes.len())
            .filter(|&i| !episodes[i].0.is_done())
            .collect();
        if active.is_empty() {
            break;
        }
        let mut contexts = Array2::zeros((active.len(), model.context_layout.len()));
        let mut chunk_seeds = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            let states = &episodes[i].1.states;
            let obs = PolicyObservation::from_states(states, states.len() - 1, encoder.n_obs, goal, paths[i].clone())?;
            encoder.check(&obs)?;
            contexts.row_mut(row).assign(&ArrayView1::from(&obs.to_vector()));
            chunk_seeds.push(mix_seed(seeds[i], replan));
        }
        let samples = model.sample_batch(contexts.view(), &chunk_seeds)?;
        for (row, &i) in active.iter().enumerate() {
            let chunk = decode_chunk(&encoder, &samples[row])?;
            let (state, record) = &mut episodes[i];
            for a in chunk.actions {
                *state = step(state, &a, &run_spec)?;
                record.states.push(state.position);
                record.actions.push(a);
                if state.is_done() {
                    break;
                }
            }
            record.status = state.status;
        }
        replan += 1;
    }
    Ok(episodes.into_iter().map(|(_, r)| r).collect())
}
