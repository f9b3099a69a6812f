//! Benchmark fixtures shared by the criterion targets.

use stackprobe_core::harness::Target;
use stackprobe_core::mutation::MutationPlan;
use stackprobe_core::refstack::{BugId, RefStack, RefStackConfig};
use stackprobe_core::scenario::{bind_mutant, builtin_scenario, run_prefix, InjectionContext};
use stackprobe_core::{PacketTemplate, Proto};

/// A reference stack driven to `scenario`, plus the injection context.
pub fn primed_stack(scenario: &str, bugs: &[BugId]) -> (RefStack, InjectionContext) {
    let mut stack = RefStack::new(RefStackConfig::with_bugs(bugs.iter().copied()));
    stack.reset().expect("reset");
    let s = builtin_scenario(scenario).expect("builtin scenario");
    let ctx = run_prefix(&s, &mut stack, Proto::Ipv4).expect("prefix");
    (stack, ctx)
}

/// The frame for `plan` bound to `ctx` on the IPv4/TCP template.
pub fn mutant(ctx: &InjectionContext, plan: &str) -> Vec<u8> {
    let plan = MutationPlan::from_text(plan).expect("plan");
    bind_mutant(ctx, &PacketTemplate::ipv4_tcp(), &plan).expect("bind").into_bytes()
}
