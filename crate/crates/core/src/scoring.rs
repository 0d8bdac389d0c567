//! Legibility scores.
//!
//! * [`score_lp_train`]: potential-based label, exponentially discounted;
//!   larger is more legible. Used to rank dataset trajectories.
//! * [`score_lp_eval`]: potential-based metric with `1/t` weighting; lower is
//!   more legible.
//! * [`score_ld`]: squared distance to the distractor with `1/t` weighting;
//!   higher is more legible.
//!
//! State indices `t` are 1-based throughout.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::Point;
use crate::ipf::{potentials_unchecked, GoalScene};

/// Default discount rate for the training label (per step).
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightProfile {
    /// `f(t) = exp(-alpha t)`
    Exponential { alpha: f64 },
    /// `f(t) = 1/t`
    InverseTime,
}

impl WeightProfile {
    pub fn weight(&self, t: usize) -> f64 {
        match *self {
            WeightProfile::Exponential { alpha } => (-alpha * t as f64).exp(),
            WeightProfile::InverseTime => 1.0 / t as f64,
        }
    }
}

/// Weighted sum of `values` with 1-based weights.
pub fn weighted_sum(values: &[f64], profile: WeightProfile) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| profile.weight(i + 1) * v)
        .sum()
}

fn check_states(states: &[Point], scene: &GoalScene, sigma: f64) -> Result<()> {
    if states.is_empty() {
        return Err(domain("cannot score an empty trajectory"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain("sigma must be positive"));
    }
    for s in states {
        s.check_dim(scene.dim())?;
    }
    Ok(())
}

/// `-sum_t exp(-alpha t) phi(x_t | g*)`.
pub fn score_lp_train(states: &[Point], scene: &GoalScene, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(domain("alpha must be nonnegative"));
    }
    check_states(states, scene, sigma)?;
    let phi = potentials_unchecked(states, scene, sigma);
    Ok(-weighted_sum(&phi, WeightProfile::Exponential { alpha }))
}

/// `sum_t phi(x_t | g*) / t`.
pub fn score_lp_eval(states: &[Point], scene: &GoalScene, sigma: f64) -> Result<f64> {
    check_states(states, scene, sigma)?;
    let phi = potentials_unchecked(states, scene, sigma);
    Ok(weighted_sum(&phi, WeightProfile::InverseTime))
}

/// `sum_t ||g- - x_t||^2 / t`.
pub fn score_ld(states: &[Point], distractor: &Point) -> Result<f64> {
    if states.is_empty() {
        return Err(domain("cannot score an empty trajectory"));
    }
    for s in states {
        s.check_dim(distractor.dim())?;
    }
    let d: Vec<f64> = states.iter().map(|x| x.distance_squared(distractor)).collect();
    Ok(weighted_sum(&d, WeightProfile::InverseTime))
}

/// Raw score plus its rank-normalized label within a cohort.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegibilityLabel {
    pub raw: f64,
    pub normalized: f64,
    pub rank: usize,
    pub cohort_size: usize,
}

/// Ranks scores ascending (ties keep input order) and maps rank `r` of `N`
/// to `2 r / (N - 1) - 1`, so the lowest score gets -1 and the highest +1.
pub fn rank_normalize(raw: &[f64]) -> Result<Vec<LegibilityLabel>> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::CohortTooSmall(n));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(domain("raw scores must be finite"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut labels = vec![
        LegibilityLabel {
            raw: 0.0,
            normalized: 0.0,
            rank: 0,
            cohort_size: n,
        };
        n
    ];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = LegibilityLabel {
            raw: raw[i],
            normalized: 2.0 * rank as f64 / (n - 1) as f64 - 1.0,
            rank,
            cohort_size: n,
        };
    }
    Ok(labels)
}
