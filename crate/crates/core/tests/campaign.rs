#![allow(clippy::field_reassign_with_default)]

use std::collections::BTreeSet;

use stackprobe_core::campaign::{run_campaign, CampaignConfig, CampaignError, Reproducer, TargetSpec};
use stackprobe_core::generator::{count_plans, generate};
use stackprobe_core::packet::Proto;
use stackprobe_core::refstack::{BugId, RefStack, RefStackConfig};

fn config(bugs: &[BugId], n: usize, protocols: &[Proto]) -> CampaignConfig {
    let mut c = CampaignConfig::default();
    c.protocols = protocols.iter().copied().collect();
    c.generator.protocols = c.protocols.clone();
    c.generator.max_entities = n;
    c.target = TargetSpec::RefStack(RefStackConfig::with_bugs(bugs.iter().copied()));
    c
}

#[test]
fn clean_stack_has_no_faults_at_n1() {
    let report = run_campaign(&config(&[], 1, &[Proto::Ipv4, Proto::Ipv6, Proto::Tcp, Proto::Udp])).unwrap();
    assert_eq!(report.totals.faults, 0);
    assert!(report.unique_faults.is_empty());
    assert!(report.totals.test_cases > 0);
}

#[test]
fn totals_match_emitted_plans_times_scenarios() {
    let c = config(&[BugId::B2], 1, &[Proto::Ipv4, Proto::Ipv6, Proto::Tcp, Proto::Udp]);
    let report = run_campaign(&c).unwrap();
    let mut expected = 0u64;
    for t in c.templates() {
        let scenarios = c.scenarios_for(t.transport().unwrap()).len() as u64;
        let mut stream = generate(&t, &c.generator).unwrap();
        let emitted = stream.by_ref().count() as u64;
        let stats = stream.stats();
        assert_eq!(count_plans(&t, &c.generator).unwrap(), u128::from(stats.considered));
        assert_eq!(emitted, stats.considered - stats.suppressed);
        expected += emitted * scenarios;
    }
    assert_eq!(report.totals.test_cases, expected);
    assert_eq!(report.totals.per_n.values().sum::<u64>(), expected);
    let per_scenario: u64 = report.per_scenario.values().map(|s| s.cases).sum();
    assert_eq!(per_scenario, expected);
}

#[test]
fn reproducers_replay_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&[BugId::B2], 1, &[Proto::Ipv4, Proto::Tcp]);
    c.output_dir = Some(dir.path().to_path_buf());
    c.pcap = true;
    let report = run_campaign(&c).unwrap();
    assert_eq!(report.signatures(), vec!["div_by_zero@tcp_mss_option".to_string()]);
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("faults.pcap").exists());

    let path = report.unique_faults[0].reproducer.clone().unwrap();
    let repro = Reproducer::load(&path).unwrap();
    let mut stack = RefStack::new(repro.refstack_config());
    let outcome = repro.replay(&mut stack).unwrap();
    assert!(outcome.reproduced());
    assert_eq!(outcome.observed.unwrap().to_string(), "div_by_zero@tcp_mss_option");

    // Same reproducer against a clean stack no longer faults.
    let mut clean = RefStack::new(RefStackConfig::default());
    assert!(!repro.replay(&mut clean).unwrap().reproduced());

    let text = std::fs::read_to_string(&path).unwrap();
    let mut tampered = repro.clone();
    let last = tampered.frame.len() - 1;
    tampered.frame[last] ^= 0xff;
    let reparsed = Reproducer::parse(&tampered.to_text()).unwrap();
    assert!(matches!(reparsed.replay(&mut stack), Err(CampaignError::FrameMismatch { .. })));
    assert_eq!(Reproducer::parse(&text).unwrap(), repro);
}

#[test]
fn identity_reproducer_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&[BugId::B2], 1, &[Proto::Ipv4, Proto::Tcp]);
    c.output_dir = Some(dir.path().to_path_buf());
    let report = run_campaign(&c).unwrap();
    let mut repro = Reproducer::load(report.unique_faults[0].reproducer.as_ref().unwrap()).unwrap();
    repro.plan = stackprobe_core::mutation::MutationPlan::identity();
    repro.signature = None;
    let mut stack = RefStack::new(repro.refstack_config());
    stack_frame_for_identity(&mut repro, &mut stack);
    let outcome = repro.replay(&mut stack).unwrap();
    assert!(outcome.reproduced());
    assert!(outcome.observed.is_none());
}

fn stack_frame_for_identity(repro: &mut Reproducer, stack: &mut RefStack) {
    use stackprobe_core::harness::Target;
    use stackprobe_core::scenario::{bind_mutant, run_prefix};
    stack.reset().unwrap();
    let ctx = run_prefix(&repro.scenario, stack, repro.template.network()).unwrap();
    repro.frame = bind_mutant(&ctx, &repro.template, &repro.plan).unwrap().into_bytes();
}

#[test]
fn fault_budget_stops_and_resume_completes() {
    let protocols = [Proto::Ipv4, Proto::Tcp];
    let full = run_campaign(&config(&BugId::ALL, 1, &protocols)).unwrap();
    assert!(!full.totals.stopped_early);

    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&BugId::ALL, 1, &protocols);
    c.output_dir = Some(dir.path().to_path_buf());
    c.fault_budget = Some(1);
    c.checkpoint_every = 50;
    let partial = run_campaign(&c).unwrap();
    assert!(partial.totals.stopped_early);
    assert!(partial.totals.test_cases < full.totals.test_cases);

    c.fault_budget = None;
    c.resume = true;
    let resumed = run_campaign(&c).unwrap();
    assert!(!resumed.totals.stopped_early);
    assert_eq!(resumed.totals.test_cases, full.totals.test_cases);
    assert_eq!(resumed.totals.faults, full.totals.faults);
    assert_eq!(resumed.signatures(), full.signatures());
}

#[test]
fn worker_count_does_not_change_results() {
    let mut c = config(&BugId::ALL, 1, &[Proto::Ipv4, Proto::Ipv6, Proto::Tcp]);
    let one = run_campaign(&c).unwrap();
    c.workers = 4;
    let four = run_campaign(&c).unwrap();
    assert_eq!(one.signatures(), four.signatures());
    assert_eq!(one.totals.test_cases, four.totals.test_cases);
    assert_eq!(one.totals.faults, four.totals.faults);
    let firsts = |r: &stackprobe_core::campaign::CampaignReport| -> BTreeSet<String> {
        r.unique_faults.iter().map(|f| format!("{} {}", f.signature, f.first_test_case_label)).collect()
    };
    assert_eq!(firsts(&one), firsts(&four));
}

#[test]
fn unreachable_agent_is_an_error() {
    let mut c = config(&[], 1, &[Proto::Ipv4, Proto::Tcp]);
    c.target = TargetSpec::Agent { address: "127.0.0.1:1".into() };
    assert!(run_campaign(&c).is_err());
}
