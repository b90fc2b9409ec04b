//! Simulation harness: strategies, simulated surveys and their reports.

pub mod evaluate;
pub mod metrics;
pub mod order_effects;
pub mod report;
pub mod side_info;
pub mod simulate;
pub mod strategy;
pub mod synth;

pub use evaluate::{
    error_reduction_distribution, kfold_per_question, loocv_per_question, sample_complexity_curve,
    sample_complexity_from_curves, ErrorReduction, QuestionErrorRow, QuestionErrorTable,
};
pub use metrics::{compute_metrics, MetricSums, Metrics};
pub use order_effects::{
    generate_order_data, pairwise_order_effects, position_effect_estimate, AdministeredSurvey, OrderLog, PairEffect,
    PairParity, PairwiseEffects, PositionEffect, PositionEffects,
};
pub use report::{ReportMetadata, SimulationReport, UserPath};
pub use side_info::{apply_side_info, SideInfoPlan};
pub use simulate::{simulate_strategies, simulate_survey, Comparison, SimulationConfig};
pub use strategy::{ModelKind, SideInfo, Strategy, StrategyKind};
pub use synth::{generate_grouped_synthetic, generate_synthetic, SynthModel, SyntheticData};
