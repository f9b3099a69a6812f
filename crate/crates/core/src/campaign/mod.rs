//! Campaign orchestration: plan streaming, parallel execution, fault
//! deduplication, checkpoints, reports and reproducers.

mod config;
mod engine;
mod report;
mod reproducer;

use thiserror::Error;

use crate::generator::GeneratorError;
use crate::harness::HarnessError;
use crate::mutation::MutationError;
use crate::scenario::ScenarioError;

pub use config::{CampaignConfig, CampaignFile, GeneratorSection, RefStackSection, ScenarioSection, TargetSection, TargetSpec};
pub use engine::{open_target, run_campaign, run_case, signature_set, CaseOutcome};
pub use report::{
    dedupe, CampaignReport, Dedup, DedupEntry, FaultRecord, ScenarioStats, TemplateStats, TestCaseId, Totals, UniqueFault,
};
pub use reproducer::{parse_template_label, ReplayOutcome, Reproducer};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("reproducer: {0}")]
    Reproducer(String),
    #[error("rebuilt frame differs from the recorded one\nrebuilt:\n{expected}\nrecorded:\n{recorded}")]
    FrameMismatch { expected: String, recorded: String },
    #[error("output: {0}")]
    Output(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}
