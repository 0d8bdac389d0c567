//! Stage 1: generates k-waypoint paths conditioned on start, goal, pooled
//! IPF features and a commanded legibility level.
//!
//! Context layout: `start (dim) | goal (dim) | ipf (pooled cells) | ell x 4`.

use ndarray::Array2;
use serde_json::json;

use crate::diffusion::{ContextLayout, ContextSegment, DiffusionModel, NoiseSchedule, TrainConfig};
use crate::error::{domain, Error, Result};
use crate::geometry::{Path, Point};
use crate::ipf::{default_resolution, rasterize, GoalScene, IpfGrid};
use crate::qd::Dataset;

/// How many times `ell` is repeated in the context.
pub const ELL_REPEAT: usize = 4;
/// A first waypoint closer than this to the start is snapped onto it.
pub const START_SNAP: f64 = 0.1;
/// A final waypoint farther than this from the goal is reported.
pub const GOAL_MISS: f64 = 0.2;

/// 8x8 in 2D, 4x4x4 in 3D.
pub fn default_pool(dim: usize) -> Vec<usize> {
    if dim == 3 {
        vec![4, 4, 4]
    } else {
        vec![8, 8]
    }
}

/// Average-pools the grid to `pool` cells per axis, flattens x-fastest and
/// divides by the grid's largest potential.
pub fn encode_ipf_features(grid: &IpfGrid, pool: &[usize]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(domain("cannot encode an empty grid"));
    }
    if pool.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: pool.len(),
        });
    }
    if pool.iter().zip(&grid.resolution).any(|(&p, &n)| p == 0 || p > n) {
        return Err(domain("pooled resolution must be between 1 and the grid resolution"));
    }
    let cells: usize = pool.iter().product();
    let mut sums = vec![0.0; cells];
    let mut counts = vec![0usize; cells];
    let dim = grid.dim();
    let mut idx = vec![0usize; dim];
    for &value in &grid.values {
        let mut target = 0;
        let mut stride = 1;
        for a in 0..dim {
            target += idx[a] * pool[a] / grid.resolution[a] * stride;
            stride *= pool[a];
        }
        sums[target] += value;
        counts[target] += 1;
        for a in 0..dim {
            idx[a] += 1;
            if idx[a] < grid.resolution[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let max = grid.max_value();
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if max > 0.0 { s / c as f64 / max } else { 0.0 })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Context {
    pub start: Point,
    pub goal: Point,
    pub ipf_features: Vec<f64>,
    pub ell: f64,
}

impl Stage1Context {
    /// `ell` is clamped to `[-1, 1]`.
    pub fn new(start: Point, goal: Point, ipf_features: Vec<f64>, ell: f64) -> Self {
        Stage1Context {
            start,
            goal,
            ipf_features,
            ell: ell.clamp(-1.0, 1.0),
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.start.dim() + self.ipf_features.len() + ELL_REPEAT);
        v.extend_from_slice(self.start.as_slice());
        v.extend_from_slice(self.goal.as_slice());
        v.extend_from_slice(&self.ipf_features);
        v.extend(std::iter::repeat_n(self.ell, ELL_REPEAT));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub train: TrainConfig,
    pub schedule: NoiseSchedule,
    /// Pooled IPF resolution; [`default_pool`] when `None`.
    pub pool: Option<Vec<usize>>,
    /// Rasterization resolution; [`default_resolution`] when `None`.
    pub ipf_resolution: Option<Vec<usize>>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            train: TrainConfig {
                steps: 8000,
                ..TrainConfig::default()
            },
            schedule: NoiseSchedule::default(),
            pool: None,
            ipf_resolution: None,
        }
    }
}

/// Encoder settings recorded in the checkpoint layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Encoder {
    pub dim: usize,
    pub k: usize,
    pub sigma: f64,
    pub ipf_resolution: Vec<usize>,
    pub pool: Vec<usize>,
}

impl Stage1Encoder {
    pub fn layout(&self) -> ContextLayout {
        let seg = |name: &str, len: usize| ContextSegment {
            name: name.into(),
            len,
        };
        let mut settings = serde_json::Map::new();
        settings.insert("stage".into(), json!("path"));
        settings.insert("dim".into(), json!(self.dim));
        settings.insert("k".into(), json!(self.k));
        settings.insert("sigma".into(), json!(self.sigma));
        settings.insert("ipf_resolution".into(), json!(self.ipf_resolution));
        settings.insert("pool".into(), json!(self.pool));
        ContextLayout {
            segments: vec![
                seg("start", self.dim),
                seg("goal", self.dim),
                seg("ipf", self.pool.iter().product()),
                seg("ell", ELL_REPEAT),
            ],
            settings,
        }
    }

    pub fn from_layout(layout: &ContextLayout) -> Result<Self> {
        let s = &layout.settings;
        if s.get("stage").and_then(|v| v.as_str()) != Some("path") {
            return Err(Error::Format("checkpoint is not a path diffuser".into()));
        }
        let get = |key: &str| {
            s.get(key)
                .cloned()
                .ok_or_else(|| Error::Format(format!("context layout lacks {key}")))
        };
        Ok(Stage1Encoder {
            dim: serde_json::from_value(get("dim")?)?,
            k: serde_json::from_value(get("k")?)?,
            sigma: serde_json::from_value(get("sigma")?)?,
            ipf_resolution: serde_json::from_value(get("ipf_resolution")?)?,
            pool: serde_json::from_value(get("pool")?)?,
        })
    }

    pub fn features(&self, scene: &GoalScene) -> Result<Vec<f64>> {
        let grid = rasterize(scene, &self.ipf_resolution, self.sigma)?;
        encode_ipf_features(&grid, &self.pool)
    }

    pub fn context(&self, scene: &GoalScene, ell: f64) -> Result<Stage1Context> {
        Ok(Stage1Context::new(scene.start, scene.goal(), self.features(scene)?, ell))
    }
}

/// Trains the path diffuser on every record's path, labelled by its `ell`.
pub fn train_stage1(dataset: &Dataset, config: &Stage1Config) -> Result<DiffusionModel> {
    let records = &dataset.records;
    let first = records.first().ok_or_else(|| domain("dataset has no records"))?;
    let dim = dataset.dim();
    let k = first.path.k();
    if records.iter().any(|r| r.path.dim() != dim || r.path.k() != k) {
        return Err(domain("records disagree on path shape"));
    }
    let encoder = Stage1Encoder {
        dim,
        k,
        sigma: dataset.spec.sigma,
        ipf_resolution: config.ipf_resolution.clone().unwrap_or_else(|| default_resolution(dim)),
        pool: config.pool.clone().unwrap_or_else(|| default_pool(dim)),
    };
    let layout = encoder.layout();
    let mut features = std::collections::BTreeMap::new();
    for r in records {
        if let std::collections::btree_map::Entry::Vacant(e) = features.entry(r.scene.intended) {
            e.insert(encoder.features(&r.scene)?);
        }
    }
    let mut data = Array2::zeros((records.len(), k * dim));
    let mut contexts = Array2::zeros((records.len(), layout.len()));
    for (i, r) in records.iter().enumerate() {
        let ctx = Stage1Context::new(r.scene.start, r.scene.goal(), features[&r.scene.intended].clone(), r.label.normalized);
        data.row_mut(i).assign(&ndarray::ArrayView1::from(&r.path.flatten()));
        contexts.row_mut(i).assign(&ndarray::ArrayView1::from(&ctx.to_vector()));
    }
    DiffusionModel::fit(data.view(), contexts.view(), layout, config.schedule.clone(), &config.train)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPath {
    pub path: Path,
    /// Distance of the raw first waypoint from the start.
    pub start_offset: f64,
    /// Whether the first waypoint was replaced by the start.
    pub start_snapped: bool,
    /// Final-waypoint distance to the goal, when above [`GOAL_MISS`].
    pub goal_miss: Option<f64>,
}

/// Generates one path per `(ell, seed)` request in a single batch.
pub fn generate_paths(model: &DiffusionModel, scene: &GoalScene, requests: &[(f64, u64)]) -> Result<Vec<GeneratedPath>> {
    let encoder = Stage1Encoder::from_layout(&model.context_layout)?;
    if scene.dim() != encoder.dim {
        return Err(Error::DimensionMismatch {
            expected: encoder.dim,
            found: scene.dim(),
        });
    }
    if let Some((ell, _)) = requests.iter().find(|(e, _)| !(-1.0..=1.0).contains(e)) {
        return Err(domain(format!("ell {ell} outside [-1, 1]")));
    }
    let features = encoder.features(scene)?;
    let width = model.context_layout.len();
    let mut contexts = Array2::zeros((requests.len(), width));
    for (i, (ell, _)) in requests.iter().enumerate() {
        let ctx = Stage1Context::new(scene.start, scene.goal(), features.clone(), *ell);
        contexts.row_mut(i).assign(&ndarray::ArrayView1::from(&ctx.to_vector()));
    }
    let seeds: Vec<u64> = requests.iter().map(|(_, s)| *s).collect();
    let rows = model.sample_batch(contexts.view(), &seeds)?;
    rows.into_iter()
        .map(|flat| {
            let mut path = Path::from_flat(&flat, encoder.dim)?;
            if path.k() != encoder.k {
                return Err(Error::Format("sampled path has the wrong length".into()));
            }
            let start_offset = path.waypoints()[0].distance(&scene.start);
            let start_snapped = start_offset <= START_SNAP;
            if start_snapped {
                path.set_first(scene.start);
            } else {
                log::warn!("generated path starts {start_offset:.3} from the start");
            }
            let miss = path.waypoints()[encoder.k - 1].distance(&scene.goal());
            let goal_miss = (miss > GOAL_MISS).then(|| {
                log::warn!("generated path ends {miss:.3} from the goal");
                miss
            });
            Ok(GeneratedPath {
                path,
                start_offset,
                start_snapped,
                goal_miss,
            })
        })
        .collect()
}

pub fn generate_path(model: &DiffusionModel, scene: &GoalScene, ell: f64, seed: u64) -> Result<GeneratedPath> {
    Ok(generate_paths(model, scene, &[(ell, seed)])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SceneSpec;

    #[test]
    fn pooling_identity_and_constant() {
        let spec = SceneSpec::default_2d();
        let grid = rasterize(&spec.scene, &[8, 8], spec.sigma).unwrap();
        let f = encode_ipf_features(&grid, &[8, 8]).unwrap();
        let max = grid.max_value();
        for (a, b) in f.iter().zip(&grid.values) {
            assert_eq!(*a, b / max);
        }
        let mut flat = grid.clone();
        flat.values.iter_mut().for_each(|v| *v = 2.5);
        assert!(encode_ipf_features(&flat, &[4, 2]).unwrap().iter().all(|v| *v == 1.0));
        assert!(encode_ipf_features(&grid, &[16, 8]).is_err());
    }

    #[test]
    fn pooled_cells_are_block_means() {
        let spec = SceneSpec::default_2d();
        let grid = rasterize(&spec.scene, &[64, 64], spec.sigma).unwrap();
        let f = encode_ipf_features(&grid, &[8, 8]).unwrap();
        let max = grid.max_value();
        for by in 0..8 {
            for bx in 0..8 {
                let mut sum = 0.0;
                for iy in by * 8..by * 8 + 8 {
                    for ix in bx * 8..bx * 8 + 8 {
                        sum += grid.values[ix + 64 * iy];
                    }
                }
                assert!((f[bx + 8 * by] - sum / 64.0 / max).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn context_layout_and_clamping() {
        let ctx = Stage1Context::new(Point::xy(0.5, 0.1), Point::xy(0.3, 0.9), vec![0.5; 64], 3.0);
        assert_eq!(ctx.ell, 1.0);
        let v = ctx.to_vector();
        assert_eq!(v.len(), 2 + 2 + 64 + ELL_REPEAT);
        assert_eq!(&v[v.len() - ELL_REPEAT..], &[1.0; ELL_REPEAT]);
        let enc = Stage1Encoder {
            dim: 2,
            k: 8,
            sigma: 0.08,
            ipf_resolution: vec![64, 64],
            pool: vec![8, 8],
        };
        assert_eq!(enc.layout().len(), v.len());
        assert_eq!(Stage1Encoder::from_layout(&enc.layout()).unwrap(), enc);
    }
}
