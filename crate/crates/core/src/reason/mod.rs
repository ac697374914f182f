//! The propose-assess-iterate loop: an experience pool of fitted
//! libraries, proposers that suggest the next library, early stopping on
//! repeated proposals, and final selection.

mod pool;
mod proposer;
mod run;

pub use pool::{
    format_experience_prompt, select_best, should_stop, AdvisorSelector, DefaultSelector, ExperiencePool,
    ExperienceRecord, FitSeries, Selector,
};
pub use proposer::{AdvisorProposer, MutationProposer, Proposal, Proposer, ReplayProposer, ScriptedProposer};
pub use run::{run_discovery, Assessment, Assessor, Discovery, DiscoveryConfig, DiscoveryStep, PixelAssessor};
