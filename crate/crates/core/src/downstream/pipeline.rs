//! End-to-end propagation of clean and attacked detections through
//! tracking, prediction and planning.

use serde::{Deserialize, Serialize};

use crate::downstream::planner::{ego_reference_path, plan, planning_error, predict_trajectory, Plan, PlannerParams};
use crate::downstream::tracker::{track_update, TrackState, TrackerParams};
use crate::downstream::Trajectory;
use crate::error::{Error, Result};
use crate::metrics;
use crate::scene::ScenarioSequence;
use crate::surrogate::DetectionBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineVariant {
    A,
    B,
}

impl std::fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PipelineVariant::A => "A",
            PipelineVariant::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub tracker: TrackerParams,
    pub planner: PlannerParams,
    /// Detections below this confidence are dropped and the track coasts.
    pub detection_threshold: f64,
    /// Weight of the clearance-loss term in the planning error.
    pub w_mtd: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self::variant(PipelineVariant::A)
    }
}

impl PipelineParams {
    pub fn variant(v: PipelineVariant) -> Self {
        let planner = match v {
            PipelineVariant::A => PlannerParams::default(),
            PipelineVariant::B => PlannerParams { safety_margin: 0.8, horizon: 2.5, ..PlannerParams::default() },
        };
        Self { tracker: TrackerParams::default(), planner, detection_threshold: 0.3, w_mtd: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub clean_track: TrackState,
    /// `None` when every attacked detection was dropped.
    pub attacked_track: Option<TrackState>,
    pub clean_prediction: Trajectory,
    pub attacked_prediction: Trajectory,
    /// One plan per frame, clean and attacked.
    pub clean_plans: Vec<Plan>,
    pub attacked_plans: Vec<Plan>,
    pub ape: f64,
    pub mtd: f64,
    pub mbd: f64,
    pub hard_brake: bool,
    pub overtake_abandoned: bool,
    pub planning_error: f64,
    pub missed_detections: usize,
}

fn step(
    state: Option<TrackState>,
    det: Option<&DetectionBox>,
    dt: f64,
    params: &TrackerParams,
) -> Result<Option<TrackState>> {
    Ok(match (state, det) {
        (s, Some(d)) => Some(track_update(s, d, dt, params)?),
        (Some(mut s), None) => {
            s.coast(dt, params);
            Some(s)
        }
        (None, None) => None,
    })
}

/// Tracks both detection streams frame by frame and replans at every frame.
/// A frame without an attacked track falls back to the clean prediction,
/// since the victim keeps its previous belief about the target.
pub fn run_pipeline(
    seq: &ScenarioSequence,
    clean: &[DetectionBox],
    attacked: &[DetectionBox],
    params: &PipelineParams,
) -> Result<PipelineOutcome> {
    let k = seq.len();
    if clean.len() != k || attacked.len() != k || k == 0 {
        return Err(Error::InvalidInput(format!(
            "expected {k} clean and attacked detections, got {} and {}",
            clean.len(),
            attacked.len()
        )));
    }
    let dt = seq.dt();
    let horizon = params.planner.horizon;
    let width = seq.target_spec.width;
    let mut clean_state = None;
    let mut att_state = None;
    let mut clean_plans = Vec::with_capacity(k);
    let mut attacked_plans = Vec::with_capacity(k);
    let mut missed = 0;
    let mut clean_pred = None;
    let mut att_pred = None;
    for (i, frame) in seq.frames.iter().enumerate() {
        clean_state = step(clean_state, Some(&clean[i]), dt, &params.tracker)?;
        let keep = attacked[i].confidence >= params.detection_threshold;
        if !keep {
            missed += 1;
        }
        att_state = step(att_state, keep.then_some(&attacked[i]), dt, &params.tracker)?;

        let ego_path = ego_reference_path(frame, horizon, dt);
        let cs = clean_state.as_ref().expect("clean detections always update the track");
        let cp = predict_trajectory(cs, horizon, dt)?;
        let ap = match &att_state {
            Some(s) => predict_trajectory(s, horizon, dt)?,
            None => cp.clone(),
        };
        clean_plans.push(plan(frame, &ego_path, &cp, width, &params.planner, seq.maneuver)?);
        attacked_plans.push(plan(frame, &ego_path, &ap, width, &params.planner, seq.maneuver)?);
        clean_pred = Some(cp);
        att_pred = Some(ap);
    }
    let clean_prediction = clean_pred.expect("non-empty sequence");
    let attacked_prediction = att_pred.expect("non-empty sequence");
    let clean_final = clean_plans.last().expect("non-empty");
    let att_final = attacked_plans.last().expect("non-empty");
    let mbd = metrics::mbd(&attacked_plans);
    Ok(PipelineOutcome {
        clean_track: clean_state.expect("non-empty"),
        ape: metrics::ape(&clean_prediction, &attacked_prediction)?,
        mtd: att_final.mtd,
        mbd,
        hard_brake: mbd >= params.planner.hard_brake_threshold,
        overtake_abandoned: attacked_plans.iter().any(|p| p.overtake_abandoned),
        planning_error: planning_error(clean_final, att_final, params.w_mtd),
        missed_detections: missed,
        attacked_track: att_state,
        clean_prediction,
        attacked_prediction,
        clean_plans,
        attacked_plans,
    })
}
