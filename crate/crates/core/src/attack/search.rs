//! Planning-guided target search over a direction/step grid and
//! group-level aggregation.

use serde::{Deserialize, Serialize};

use crate::downstream::{
    ego_reference_path, fake_prediction, plan, planning_error, predict_trajectory, track_sequence, PipelineParams,
    Plan,
};
use crate::error::{Error, Result};
use crate::scene::{clean_detection, ScenarioSequence};
use crate::surrogate::DetectionBox;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTarget {
    pub u: [f64; 2],
    /// Per-frame step, meters.
    pub s: f64,
}

impl AttackTarget {
    pub fn new(u: [f64; 2], s: f64) -> Result<Self> {
        if ((u[0].hypot(u[1])) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("direction {u:?} is not a unit vector")));
        }
        if !(s > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {s}")));
        }
        Ok(Self { u, s })
    }

    pub fn negated(&self) -> Self {
        Self { u: [-self.u[0], -self.u[1]], s: self.s }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    /// Number of evenly spaced BEV directions starting at +x.
    pub directions: usize,
    pub steps: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self { directions: 16, steps: vec![0.1, 0.2, 0.3, 0.4, 0.5] }
    }
}

impl SearchGrid {
    pub fn direction_set(&self) -> Vec<[f64; 2]> {
        direction_set(self.directions)
    }
}

pub fn direction_set(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// Clean detections of every frame in the sequence.
pub fn clean_detections(seq: &ScenarioSequence) -> Vec<DetectionBox> {
    seq.frames.iter().map(|f| clean_detection(f, &seq.target_spec)).collect()
}

/// Clean final-frame plan, the baseline of the planning error.
pub fn clean_plan(seq: &ScenarioSequence, clean: &[DetectionBox], params: &PipelineParams) -> Result<Plan> {
    let dets: Vec<Option<DetectionBox>> = clean.iter().copied().map(Some).collect();
    let track = track_sequence(&dets, seq.dt(), &params.tracker)?
        .ok_or_else(|| Error::InvalidInput("empty sequence".into()))?;
    let horizon = params.planner.horizon;
    let pred = predict_trajectory(&track, horizon, seq.dt())?;
    let ego = seq.last();
    plan(ego, &ego_reference_path(ego, horizon, seq.dt()), &pred, seq.target_spec.width, &params.planner, seq.maneuver)
}

/// Planning error of the fake prediction for one candidate.
pub fn candidate_error(
    seq: &ScenarioSequence,
    clean: &[DetectionBox],
    baseline: &Plan,
    u: [f64; 2],
    s: f64,
    params: &PipelineParams,
) -> Result<f64> {
    let horizon = params.planner.horizon;
    let dt = seq.dt();
    let fake = fake_prediction(clean, u, s, horizon, dt, &params.tracker)?;
    let ego = seq.last();
    let attacked = plan(ego, &ego_reference_path(ego, horizon, dt), &fake, seq.target_spec.width, &params.planner, seq.maneuver)?;
    Ok(planning_error(baseline, &attacked, params.w_mtd))
}

/// Exhaustive argmax of the planning error over `directions x steps`.
/// Ties prefer the smaller step, then the earlier direction.
pub fn search_target(
    seq: &ScenarioSequence,
    directions: &[[f64; 2]],
    steps: &[f64],
    params: &PipelineParams,
) -> Result<(AttackTarget, f64)> {
    if directions.is_empty() || steps.is_empty() {
        return Err(Error::InvalidInput("empty search grid".into()));
    }
    if steps.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput("search steps must be positive".into()));
    }
    let clean = clean_detections(seq);
    let baseline = clean_plan(seq, &clean, params)?;
    let mut order: Vec<f64> = steps.to_vec();
    order.sort_by(f64::total_cmp);
    let mut best: Option<(AttackTarget, f64)> = None;
    for &s in &order {
        for &u in directions {
            let e = candidate_error(seq, &clean, &baseline, u, s, params)?;
            if best.is_none_or(|(_, b)| e > b) {
                best = Some((AttackTarget::new(u, s)?, e));
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Normalized mean direction and mean step.
pub fn group_target(targets: &[AttackTarget]) -> Result<AttackTarget> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("group target of an empty list".into()));
    }
    let n = targets.len() as f64;
    let mx = targets.iter().map(|t| t.u[0]).sum::<f64>() / n;
    let my = targets.iter().map(|t| t.u[1]).sum::<f64>() / n;
    let norm = mx.hypot(my);
    if norm < 1e-6 {
        return Err(Error::DegenerateGroup { norm });
    }
    let s = targets.iter().map(|t| t.s).sum::<f64>() / n;
    Ok(AttackTarget { u: [mx / norm, my / norm], s })
}
