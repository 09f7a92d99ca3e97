//! Scenario filters, planning-guided target search, losses and texture
//! optimization.

pub mod filters;
pub mod losses;
pub mod objective;
pub mod optimize;
pub mod search;

pub use filters::{aff_check, aff_filter, ego_future_path, vaf_filter, AffParams, AffViolation};
pub use losses::{
    displacement, loss_fid, loss_move, loss_nps, loss_prog, loss_tv, FidScales, FidelityVector, LossComponents,
    LossWeights, Palette,
};
pub use objective::{attack_frames, scenario_objective, total_loss, AttackScenario, FrameBoxes, Surrogate};
pub use optimize::{optimize, optimize_from, AttackConfig, OptimizeResult, OptimizerState, TextureInit, TraceRow};
pub use search::{direction_set, group_target, search_target, AttackTarget, SearchGrid};
