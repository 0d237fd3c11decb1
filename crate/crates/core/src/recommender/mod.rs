//! Runtime recommendation: tabular Q-learning over discretised feature
//! states, staged composition, recommendation-space mining and rule
//! extraction.

mod compose;
mod mining;
mod qlearn;
mod rules;

pub use compose::{staged_compose, Candidate, Guard, Stage, StageGraph};
pub use mining::{mine_regions, Outcome, ParamBox, PerformanceRecord, RecommendationRegion};
pub use qlearn::{
    Action, ActionKind, Feature, FeatureState, PolicyMode, QConfig, QPolicy, Transition, TupleView,
};
pub use rules::{extract_policy_rules, Rule};
