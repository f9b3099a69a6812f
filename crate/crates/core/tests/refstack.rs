use stackprobe_core::harness::{DeliveryResult, FaultKind, Target};
use stackprobe_core::mutation::MutationPlan;
use stackprobe_core::refstack::{B3Form, BugId, RefStack, RefStackConfig, TcpState};
use stackprobe_core::scenario::{bind_mutant, builtin_scenario, builtin_scenarios, run_prefix, verify_state};
use stackprobe_core::{PacketTemplate, Proto};

fn stack(bugs: &[BugId]) -> RefStack {
    RefStack::new(RefStackConfig::with_bugs(bugs.iter().copied()))
}

fn run(stack: &mut RefStack, scenario: &str, template: &PacketTemplate, plan: &str) -> DeliveryResult {
    let sc = builtin_scenario(scenario).unwrap();
    stack.reset().unwrap();
    let ctx = run_prefix(&sc, stack, template.network()).unwrap();
    let plan = MutationPlan::from_text(plan).unwrap();
    let frame = bind_mutant(&ctx, template, &plan).unwrap();
    stack.deliver(frame.bytes()).unwrap()
}

fn fault_of(r: &DeliveryResult) -> Option<(FaultKind, String)> {
    r.fault().map(|f| (f.kind, f.site))
}

#[test]
fn every_tcp_scenario_reaches_its_state() {
    for family in [Proto::Ipv4, Proto::Ipv6] {
        for sc in builtin_scenarios(Proto::Tcp) {
            let mut s = stack(&[]);
            let ctx = run_prefix(&sc, &mut s, family).unwrap();
            let got = verify_state(&mut s, &ctx).unwrap();
            assert_eq!(got, sc.injection_state, "{}", sc.id);
        }
    }
}

#[test]
fn identity_injection_is_accepted_everywhere() {
    for t in [PacketTemplate::ipv4_tcp(), PacketTemplate::ipv6_tcp()] {
        for sc in builtin_scenarios(Proto::Tcp) {
            let mut s = stack(&[]);
            let r = run(&mut s, &sc.id, &t, "");
            assert_eq!(r, DeliveryResult::Processed, "{} {}", t.label(), sc.id);
        }
    }
    for t in [PacketTemplate::ipv4_udp(), PacketTemplate::ipv6_udp()] {
        let mut s = stack(&[]);
        assert_eq!(run(&mut s, "udp-bound", &t, ""), DeliveryResult::Processed);
        assert_eq!(s.inspect("udp_datagrams").unwrap(), "1");
    }
}

#[test]
fn established_context_acks_target_isn() {
    let mut s = stack(&[]);
    let sc = builtin_scenario("tcp-established").unwrap();
    let ctx = run_prefix(&sc, &mut s, Proto::Ipv4).unwrap();
    assert_eq!(ctx.ack, Some(stackprobe_core::refstack::isn_for(7777) + 1));
    assert_eq!(ctx.seq, Some(1001));
    let listen = run_prefix(&builtin_scenario("tcp-listen").unwrap(), &mut stack(&[]), Proto::Ipv4).unwrap();
    assert_eq!((listen.seq, listen.ack), (None, None));
}

#[test]
fn syn_to_listener_gets_syn_ack() {
    let mut s = stack(&[]);
    let t = PacketTemplate::ipv4_tcp();
    assert_eq!(run(&mut s, "tcp-listen", &t, ""), DeliveryResult::Processed);
    assert_eq!(s.tcp_state(7777), TcpState::SynRcvd);
    let out = s.drain_outbound().unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0][14 + 20 + 13], 0x12);
}

#[test]
fn bad_ipv4_checksum_is_dropped() {
    let mut s = stack(&BugId::ALL);
    let r = run(&mut s, "tcp-listen", &PacketTemplate::ipv4_tcp(), "replace ipv4 checksum 0x0");
    assert!(matches!(r, DeliveryResult::Dropped(ref m) if m.contains("checksum")), "{r:?}");
}

#[test]
fn seeded_bugs_fire_only_when_enabled() {
    let v4 = PacketTemplate::ipv4_tcp();
    let v6 = PacketTemplate::ipv6_tcp();
    let cases: [(BugId, &PacketTemplate, &str, &str); 8] = [
        (BugId::B1, &v4, "tcp-listen", "replace tcp data_offset 0xf"),
        (BugId::B2, &v4, "tcp-listen", "insert tcp mss 0x0000"),
        (BugId::B3, &v4, "tcp-established", "insert tcp mss.len 0xff"),
        (BugId::B4, &v4, "tcp-listen", "truncate 10"),
        (BugId::B5, &v4, "tcp-listen", "replace ipv4 total_length 0x0"),
        (BugId::B6, &v6, "tcp-listen", "insert ipv6 hbh.len 0xff"),
        (BugId::B7, &v4, "tcp-listen", "insert tcp mss.len 0x00"),
        (BugId::B8, &v4, "tcp-established", "truncate 10"),
    ];
    for (bug, t, sc, plan) in cases {
        let info = bug.info();
        let on = run(&mut stack(&[bug]), sc, t, plan);
        assert_eq!(fault_of(&on), Some((info.expected_kind, info.site.to_string())), "{bug} on: {on:?}");
        let off = run(&mut stack(&[]), sc, t, plan);
        assert!(fault_of(&off).is_none(), "{bug} off: {off:?}");
    }
}

#[test]
fn flags_bug_needs_established_state() {
    let t = PacketTemplate::ipv4_tcp();
    for sc in ["tcp-listen", "tcp-syn-sent", "tcp-fin-wait-1", "tcp-close-wait"] {
        let r = run(&mut stack(&[BugId::B8]), sc, &t, "truncate 10");
        assert!(matches!(r, DeliveryResult::Dropped(_)), "{sc}: {r:?}");
    }
}

#[test]
fn two_option_form_needs_a_second_option() {
    let config = RefStackConfig { b3_form: B3Form::TwoOption, ..RefStackConfig::with_bugs([BugId::B3]) };
    let t = PacketTemplate::ipv4_tcp();
    let mut s = RefStack::new(config);
    let one = run(&mut s, "tcp-listen", &t, "insert tcp mss.len 0xff");
    assert!(fault_of(&one).is_none(), "{one:?}");
    let two = run(&mut s, "tcp-listen", &t, "insert tcp wscale 0x00\ninsert tcp mss.len 0xff");
    assert_eq!(fault_of(&two), Some((FaultKind::OobRead, "tcp_option_value".into())));
}

#[test]
fn hang_and_deadline() {
    let t = PacketTemplate::ipv4_tcp();
    let mut s = RefStack::new(RefStackConfig { deadline: std::time::Duration::ZERO, ..Default::default() });
    let frame = stackprobe_core::encode(&t).unwrap();
    assert!(matches!(s.deliver(frame.bytes()).unwrap(), DeliveryResult::Timeout { .. }));
}

#[test]
fn inspect_keys() {
    let mut s = stack(&[]);
    assert_eq!(s.inspect("tcp_state:port=7777").unwrap(), "CLOSED");
    assert!(s.inspect("nonsense").is_err());
    assert!(s.inspect("tcp_state:port=x").is_err());
    let sc = builtin_scenario("tcp-established").unwrap();
    run_prefix(&sc, &mut s, Proto::Ipv4).unwrap();
    assert_eq!(s.inspect("tcp_state:port=7777").unwrap(), "ESTABLISHED");
    s.reset().unwrap();
    assert_eq!(s.inspect("tcp_state:port=7777").unwrap(), "CLOSED");
}
