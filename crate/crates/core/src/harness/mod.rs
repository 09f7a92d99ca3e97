//! Scenario generation, experiment orchestration and reporting.

pub mod config;
pub mod experiment;
pub mod report;
pub mod templates;

pub use experiment::{
    evaluate, fold_partition, prepare, prepare_unfiltered, run_ablation, run_cross_validation, run_factor_sweep,
    run_specific, run_specific_all, run_training_size_sweep, run_transfer, scenario_target, sweep_scenarios, Ablation,
    AblationRow, EvalConfig, Evaluation, ExperimentConfig, ExperimentRecord, Factor, FoldSummary, Rejection,
    RunOutput, Setting, SizeRow, SweepBase, TransferSpec,
};
pub use report::{read_records, report, summarize, write_records, Summary};
pub use templates::{generate_scenarios, scenario_bank, ScenarioTemplate};
pub use config::{attack_suite, load_dir, overtake_suite, save_dir, RunConfig, ScenarioSource};
