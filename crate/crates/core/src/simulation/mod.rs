//! Monte Carlo evaluation of the estimators under a prevalence-dependent
//! generator.

pub mod config;
pub mod generator;
pub mod rng;
pub mod runner;

pub use config::{
    BetaTarget, GridAxes, PrevalenceScheme, ScenarioConfig, SimMethod, SimulationConfig,
};
pub use generator::{
    gen_prevalences, gen_replicate, gen_replicate_with, gen_study_sizes, GenOptions, Replicate,
    Truth,
};
pub use runner::{
    evaluate, run_replicate, run_scenario, summarize, MethodMetrics, Outcome, ReplicateResult,
    ScenarioMetrics,
};
