//! Systematic packet-validation testing for TCP/IP stacks.
//!
//! The crate enumerates every bounded mutation of a valid packet, drives a
//! target stack into each TCP/UDP protocol state, injects the mutants and
//! reports memory-safety faults caught by a buffer-poisoning oracle.
//!
//! - [`packet`]: byte-exact encoding, field access and checksums.
//! - [`mutation`]: replace / insert / truncate instructions and their application.
//! - [`generator`]: ordered, duplicate-free enumeration of mutation plans.
//! - [`scenario`]: state prefixes and injection contexts.
//! - [`harness`]: the `Target` abstraction, guarded buffers and the agent protocol.
//! - [`refstack`]: a small reference stack with toggleable seeded bugs.
//! - [`campaign`]: parallel execution, fault dedup, reproducers and reports.

pub mod campaign;
pub mod generator;
pub mod harness;
pub mod mutation;
pub mod packet;
pub mod refstack;
pub mod scenario;

pub use packet::{
    decode, encode, FieldDescriptor, FieldKind, OptionDescriptor, OptionInstance, Packet,
    PacketError, PacketTemplate, Proto,
};
pub use campaign::{run_campaign, CampaignConfig, CampaignError, CampaignReport, Reproducer};
pub use generator::{count_plans, generate, GeneratorConfig, StridePolicy};
pub use harness::{DeliveryResult, FaultKind, FaultReport, FaultSignature, Target};
pub use mutation::{apply, MutationInstruction, MutationPlan};
pub use refstack::{BugId, RefStack, RefStackConfig, TcpState};
pub use scenario::{Scenario, ScenarioError};
