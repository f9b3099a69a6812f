#![allow(clippy::field_reassign_with_default)]

use std::net::TcpListener;
use std::os::unix::net::UnixStream;

use stackprobe_core::campaign::{run_campaign, CampaignConfig, TargetSpec};
use stackprobe_core::generator::{generate, GeneratorConfig};
use stackprobe_core::harness::agent::{serve, serve_listener, AgentClient};
use stackprobe_core::harness::{DeliveryResult, HarnessError, Syscall, Target};
use stackprobe_core::packet::{PacketTemplate, Proto};
use stackprobe_core::refstack::{BugId, RefStack, RefStackConfig};
use stackprobe_core::scenario::{bind_mutant, builtin_scenario, run_prefix};

fn outcomes<T: Target + ?Sized>(target: &mut T, scenario: &str, limit: usize) -> Vec<(DeliveryResult, Vec<Vec<u8>>)> {
    let scenario = builtin_scenario(scenario).unwrap();
    let template = PacketTemplate::ipv4_tcp();
    let config = GeneratorConfig { max_entities: 1, ..Default::default() };
    let mut out = Vec::new();
    for plan in generate(&template, &config).unwrap().take(limit) {
        let plan = plan.unwrap();
        target.reset().unwrap();
        let ctx = run_prefix(&scenario, target, Proto::Ipv4).unwrap();
        let frame = bind_mutant(&ctx, &template, &plan).unwrap();
        let result = target.deliver(frame.bytes()).unwrap();
        let replies = target.drain_outbound().unwrap();
        target.end_test().unwrap();
        out.push((result, replies));
    }
    out
}

#[test]
fn agent_is_transparent() {
    let config = RefStackConfig::with_bugs(BugId::ALL);
    for scenario in ["tcp-listen", "tcp-established", "tcp-close-wait"] {
        let mut local = RefStack::new(config.clone());
        let expected = outcomes(&mut local, scenario, 400);

        let (client, mut server) = UnixStream::pair().unwrap();
        let served = config.clone();
        let handle = std::thread::spawn(move || serve(&mut RefStack::new(served), &mut server));
        let mut remote = AgentClient::new(client);
        let got = outcomes(&mut remote, scenario, 400);
        drop(remote);
        handle.join().unwrap().unwrap();

        assert_eq!(got, expected, "{scenario}");
        assert!(expected.iter().any(|(r, _)| r.fault().is_some()));
    }
}

#[test]
fn remote_inspect_and_syscall_errors() {
    let (client, mut server) = UnixStream::pair().unwrap();
    let handle = std::thread::spawn(move || serve(&mut RefStack::new(RefStackConfig::default()), &mut server));
    let mut remote = AgentClient::new(client);
    remote.reset().unwrap();
    assert_eq!(remote.inspect("tcp_state:port=7777").unwrap(), "CLOSED");
    assert!(matches!(remote.inspect("no_such_key"), Err(HarnessError::UnknownKey(_))));
    assert!(remote.syscall(&Syscall::Listen).is_err());
    let fd = remote.syscall(&Syscall::Socket(Proto::Tcp)).unwrap();
    assert!(fd >= 0);
    drop(remote);
    handle.join().unwrap().unwrap();
}

#[test]
fn campaign_over_tcp_agent_matches_in_process() {
    let bugs = RefStackConfig::with_bugs([BugId::B2, BugId::B5]);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let address = listener.local_addr().unwrap().to_string();
    let served = bugs.clone();
    let handle = std::thread::spawn(move || serve_listener(listener, move || RefStack::new(served.clone()), Some(2)));

    let mut c = CampaignConfig::default();
    c.protocols = [Proto::Ipv4, Proto::Tcp].into_iter().collect();
    c.generator.protocols = c.protocols.clone();
    c.generator.max_entities = 1;
    c.workers = 2;
    c.target = TargetSpec::Agent { address };
    let remote = run_campaign(&c).unwrap();
    handle.join().unwrap().unwrap();

    c.target = TargetSpec::RefStack(bugs);
    let local = run_campaign(&c).unwrap();
    assert_eq!(remote.signatures(), local.signatures());
    assert_eq!(remote.totals.test_cases, local.totals.test_cases);
    assert_eq!(remote.totals.faults, local.totals.faults);
}
