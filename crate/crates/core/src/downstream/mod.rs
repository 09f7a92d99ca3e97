//! The victim's temporal stack: tracker, constant-velocity predictor and
//! clearance-based planner.

mod pipeline;
mod planner;
mod tracker;

pub use pipeline::{run_pipeline, PipelineOutcome, PipelineParams, PipelineVariant};
pub use planner::{
    ego_reference_path, fake_prediction, plan, planning_error, predict_trajectory, Plan, PlannerParams, Trajectory,
    Waypoint,
};
pub use tracker::{track_sequence, track_update, StateCov, StateVec, TrackState, TrackerParams};
