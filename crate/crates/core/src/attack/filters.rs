//! Scenario selection: the feasibility filter and the viewing-angle window
//! selector.

use serde::{Deserialize, Serialize};

use crate::downstream::Trajectory;
use crate::error::{Error, Result};
use crate::metrics;
use crate::scene::{viewing_angle_variation, ScenarioSequence};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffParams {
    /// Maximum lateral offset (ego frame) for the target to matter, meters.
    pub lateral_band: f64,
    /// Minimum clean footprint clearance to the ego path, meters.
    pub safety_margin: f64,
    pub ego_width: f64,
    /// Horizon of the target's clean rollout, seconds.
    pub horizon: f64,
}

impl Default for AffParams {
    fn default() -> Self {
        Self { lateral_band: 6.0, safety_margin: 1.0, ego_width: 1.9, horizon: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffViolation {
    OutOfFrustum,
    NotAhead,
    OutsideBand,
    Intruding,
}

impl std::fmt::Display for AffViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AffViolation::OutOfFrustum => "AFF: target leaves the camera frustum",
            AffViolation::NotAhead => "AFF: target not ahead of the ego",
            AffViolation::OutsideBand => "AFF: target outside the lateral relevance band",
            AffViolation::Intruding => "AFF: target already intrudes on the ego path",
        })
    }
}

/// First violated feasibility condition, if any.
pub fn aff_check(seq: &ScenarioSequence, ego_future_path: &Trajectory, params: &AffParams) -> Option<AffViolation> {
    for frame in &seq.frames {
        if frame.ego.to_local(frame.target.position())[0] <= 0.0 {
            return Some(AffViolation::NotAhead);
        }
    }
    for frame in &seq.frames {
        let center = [frame.target.x, frame.target.y, seq.target_spec.height / 2.0];
        match seq.camera.project(&frame.ego, center) {
            Some(px) if seq.camera.in_image(px) => {}
            _ => return Some(AffViolation::OutOfFrustum),
        }
    }
    for frame in &seq.frames {
        if frame.ego.to_local(frame.target.position())[1].abs() > params.lateral_band {
            return Some(AffViolation::OutsideBand);
        }
    }
    let last = seq.last();
    let dt = seq.dt();
    let mut points: Vec<[f64; 2]> = seq.frames.iter().map(|f| f.target.position()).collect();
    let rollout = Trajectory::constant_velocity(last.target.position(), last.target_velocity(), params.horizon, dt);
    points.extend(rollout.positions().skip(1));
    let target_path = Trajectory {
        points: points
            .into_iter()
            .enumerate()
            .map(|(i, p)| crate::downstream::Waypoint { t: i as f64 * dt, position: p })
            .collect(),
    };
    let half = 0.5 * (seq.target_spec.width + params.ego_width);
    match metrics::mtd(&target_path, ego_future_path) {
        Ok(d) if d - half >= params.safety_margin => None,
        _ => Some(AffViolation::Intruding),
    }
}

pub fn aff_filter(seq: &ScenarioSequence, ego_future_path: &Trajectory, params: &AffParams) -> bool {
    aff_check(seq, ego_future_path, params).is_none()
}

/// The ego path used by the feasibility filter: straight ahead from the
/// first frame, long enough to cover the sequence and the horizon.
pub fn ego_future_path(seq: &ScenarioSequence, horizon: f64) -> Trajectory {
    let first = &seq.frames[0];
    let span = seq.last().t - first.t + horizon;
    Trajectory::constant_velocity(first.ego.position(), first.ego_velocity(), span, seq.dt())
}

/// Start index of the `k`-frame window with the largest viewing-angle
/// variation, or `None` when even that falls below `theta_min`. Ties keep
/// the earliest window.
pub fn vaf_filter(seq: &ScenarioSequence, k: usize, theta_min: f64) -> Result<Option<(usize, f64)>> {
    if k < 2 || seq.len() < k {
        return Err(Error::InvalidInput(format!("need k >= 2 and at least {k} frames, got {}", seq.len())));
    }
    if !(theta_min > 0.0) {
        return Err(Error::InvalidInput("theta_min must be positive".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for start in 0..=seq.len() - k {
        let v = viewing_angle_variation(&seq.window(start, k)?)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((start, v));
        }
    }
    Ok(best.filter(|&(_, v)| v >= theta_min))
}
