//! Two-goal block-reaching environments with velocity-integrator point-mass
//! dynamics: `x' = clamp(x + clip(a) * dt)`.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{Bounds, Point, DEFAULT_DT};
use crate::ipf::GoalScene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub dt: f64,
    /// Per-axis bound on |velocity command|.
    pub action_bound: f64,
    pub success_radius: f64,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: DEFAULT_DT,
            action_bound: 1.5,
            success_radius: 0.05,
            max_steps: 200,
        }
    }
}

impl EnvConfig {
    pub fn clip_action(&self, a: &Point) -> Point {
        a.map(|_, v| v.clamp(-self.action_bound, self.action_bound))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.action_bound > 0.0 && self.success_radius > 0.0) {
            return Err(domain("dt, action_bound and success_radius must be positive"));
        }
        Ok(())
    }
}

pub enum SceneVariant {
    Default2d,
    Default3d,
    Custom {
        start: Point,
        goals: Vec<Point>,
        intended: usize,
        bounds: Bounds,
    },
}

/// Builds a goal scene. The default layouts are mirror-symmetric about
/// `x = 0.5` with two adjacent goals, so either goal can be the intended one.
pub fn make_scene(variant: SceneVariant) -> Result<GoalScene> {
    match variant {
        SceneVariant::Default2d => GoalScene::new(
            Point::xy(0.5, 0.1),
            vec![Point::xy(0.3, 0.9), Point::xy(0.7, 0.9)],
            0,
            Bounds::unit(2),
        ),
        SceneVariant::Default3d => GoalScene::new(
            Point::xyz(0.5, 0.5, 0.1),
            vec![Point::xyz(0.3, 0.5, 0.9), Point::xyz(0.7, 0.5, 0.9)],
            0,
            Bounds::unit(3),
        ),
        SceneVariant::Custom {
            start,
            goals,
            intended,
            bounds,
        } => GoalScene::new(start, goals, intended, bounds),
    }
}

/// A goal scene together with its potential width and environment settings;
/// the contents of a scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct SceneSpec {
    pub scene: GoalScene,
    pub sigma: f64,
    pub env: EnvConfig,
}

impl SceneSpec {
    pub fn new(scene: GoalScene) -> Self {
        let sigma = scene.default_sigma();
        SceneSpec {
            scene,
            sigma,
            env: EnvConfig::default(),
        }
    }

    pub fn default_2d() -> Self {
        SceneSpec::new(make_scene(SceneVariant::Default2d).expect("default scene is valid"))
    }

    pub fn default_3d() -> Self {
        SceneSpec::new(make_scene(SceneVariant::Default3d).expect("default scene is valid"))
    }

    pub fn dim(&self) -> usize {
        self.scene.dim()
    }

    pub fn with_intended(&self, intended: usize) -> Result<Self> {
        Ok(SceneSpec {
            scene: self.scene.with_intended(intended)?,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        SceneSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FileBounds {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    dim: usize,
    bounds: FileBounds,
    start: Vec<f64>,
    goals: Vec<Vec<f64>>,
    intended: usize,
    sigma: f64,
    dt: f64,
    action_bound: f64,
    success_radius: f64,
    max_steps: usize,
}

impl From<SceneSpec> for SceneFile {
    fn from(s: SceneSpec) -> Self {
        SceneFile {
            dim: s.dim(),
            bounds: FileBounds {
                min: s.scene.bounds.min.into(),
                max: s.scene.bounds.max.into(),
            },
            start: s.scene.start.into(),
            goals: s.scene.goals.iter().map(|&g| g.into()).collect(),
            intended: s.scene.intended,
            sigma: s.sigma,
            dt: s.env.dt,
            action_bound: s.env.action_bound,
            success_radius: s.env.success_radius,
            max_steps: s.env.max_steps,
        }
    }
}

impl TryFrom<SceneFile> for SceneSpec {
    type Error = Error;

    fn try_from(f: SceneFile) -> Result<Self> {
        let scene = GoalScene::new(
            Point::new(&f.start)?,
            f.goals
                .iter()
                .map(|g| Point::new(g))
                .collect::<Result<Vec<_>>>()?,
            f.intended,
            Bounds::new(Point::new(&f.bounds.min)?, Point::new(&f.bounds.max)?)?,
        )?;
        if scene.dim() != f.dim {
            return Err(Error::DimensionMismatch {
                expected: f.dim,
                found: scene.dim(),
            });
        }
        if !(f.sigma > 0.0) {
            return Err(domain("sigma must be positive"));
        }
        let env = EnvConfig {
            dt: f.dt,
            action_bound: f.action_bound,
            success_radius: f.success_radius,
            max_steps: f.max_steps,
        };
        env.validate()?;
        Ok(SceneSpec {
            scene,
            sigma: f.sigma,
            env,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub position: Point,
    pub step_count: usize,
    pub status: Status,
}

impl EnvState {
    pub fn reset(scene: &GoalScene) -> Self {
        EnvState {
            position: scene.start,
            step_count: 0,
            status: Status::Running,
        }
    }

    pub fn is_done(&self) -> bool {
        self.status != Status::Running
    }
}

/// Point-mass transition without termination logic.
pub fn integrate(position: &Point, action: &Point, config: &EnvConfig, bounds: &Bounds) -> Point {
    let a = config.clip_action(action);
    bounds.clamp(&(*position + a * config.dt))
}

pub fn step(state: &EnvState, action: &Point, spec: &SceneSpec) -> Result<EnvState> {
    if state.is_done() {
        return Err(Error::Usage("cannot step a finished episode".into()));
    }
    action.check_dim(spec.dim())?;
    let position = integrate(&state.position, action, &spec.env, &spec.scene.bounds);
    let step_count = state.step_count + 1;
    let status = if position.distance(&spec.scene.goal()) <= spec.env.success_radius {
        Status::Success
    } else if step_count >= spec.env.max_steps {
        Status::Timeout
    } else {
        Status::Running
    };
    Ok(EnvState {
        position,
        step_count,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenes_are_symmetric() {
        for spec in [SceneSpec::default_2d(), SceneSpec::default_3d()] {
            let s = &spec.scene;
            let d0 = s.start.distance(&s.goals[0]);
            let d1 = s.start.distance(&s.goals[1]);
            assert!((d0 - d1).abs() < 1e-15);
            assert!((spec.sigma - 0.08).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_custom_goals_rejected() {
        let r = make_scene(SceneVariant::Custom {
            start: Point::xy(0.5, 0.1),
            goals: vec![Point::xy(0.3, 0.9), Point::xy(0.3, 0.9)],
            intended: 0,
            bounds: Bounds::unit(2),
        });
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn zero_action_only_counts() {
        let spec = SceneSpec::default_2d();
        let s0 = EnvState::reset(&spec.scene);
        let s1 = step(&s0, &Point::xy(0.0, 0.0), &spec).unwrap();
        assert_eq!(s1.position, s0.position);
        assert_eq!(s1.step_count, 1);
        assert_eq!(step(&s0, &Point::xy(0.3, -2.0), &spec).unwrap(), step(&s0, &Point::xy(0.3, -2.0), &spec).unwrap());
    }

    #[test]
    fn boundary_clamps() {
        let spec = SceneSpec::default_2d();
        let s0 = EnvState::reset(&spec.scene);
        // y = 0.1, max downward move is 1.5 * 0.05 = 0.075 -> stays inside, then clamps
        let s1 = step(&s0, &Point::xy(0.0, -1.5), &spec).unwrap();
        let s2 = step(&s1, &Point::xy(0.0, -1.5), &spec).unwrap();
        assert_eq!(s2.position.coord(1), 0.0);
        // clipped to the action bound
        let s3 = step(&s0, &Point::xy(100.0, 0.0), &spec).unwrap();
        assert!((s3.position.coord(0) - (0.5 + 0.075)).abs() < 1e-15);
    }

    #[test]
    fn done_states_cannot_step() {
        let spec = SceneSpec::default_2d();
        let mut s = EnvState::reset(&spec.scene);
        s.status = Status::Timeout;
        assert!(matches!(step(&s, &Point::xy(0.0, 0.0), &spec), Err(Error::Usage(_))));
    }

    #[test]
    fn timeout_at_max_steps() {
        let mut spec = SceneSpec::default_2d();
        spec.env.max_steps = 3;
        let mut s = EnvState::reset(&spec.scene);
        for _ in 0..3 {
            s = step(&s, &Point::xy(0.0, 0.0), &spec).unwrap();
        }
        assert_eq!(s.status, Status::Timeout);
    }

    #[test]
    fn scene_file_round_trip() {
        let spec = SceneSpec::default_3d().with_intended(1).unwrap();
        let text = spec.to_json().unwrap();
        for key in [
            "dim", "bounds", "start", "goals", "intended", "sigma", "dt", "action_bound",
            "success_radius", "max_steps",
        ] {
            assert!(text.contains(&format!("\"{key}\"")));
        }
        assert_eq!(SceneSpec::from_json(&text).unwrap(), spec);
        assert!(SceneSpec::from_json(&text.replace("\"dim\": 3", "\"dim\": 2")).is_err());
    }
}
