use std::collections::VecDeque;

use crate::harness::{DeliveryResult, HarnessError, Syscall, Target};
use crate::mutation::{apply, MutationError, MutationPlan};
use crate::packet::fields::addr;
use crate::packet::segment::{tcp_frame, tcp_view, Direction, TcpSpec};
use crate::packet::{Packet, PacketTemplate, Proto};
use crate::refstack::{flags, TcpState};

use super::{FlagSet, Scenario, ScenarioError, Step};

/// Initial sequence number of the tester side.
pub const TESTER_ISN: u32 = 1000;

const FLAG_FIELDS: [(&str, u8); 6] = [
    ("flag_fin", flags::FIN),
    ("flag_syn", flags::SYN),
    ("flag_rst", flags::RST),
    ("flag_psh", flags::PSH),
    ("flag_ack", flags::ACK),
    ("flag_urg", flags::URG),
];

/// Live numbers at the point of injection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InjectionContext {
    pub scenario_id: String,
    pub family: Proto,
    pub transport: Proto,
    /// Port of the target's socket.
    pub local_port: u16,
    /// Port of the tester.
    pub remote_port: u16,
    /// Next tester sequence number, once packets have been exchanged.
    pub seq: Option<u32>,
    /// Next sequence number expected from the target.
    pub ack: Option<u32>,
    pub window: u16,
    pub flags: Option<FlagSet>,
    pub expected_state: Option<TcpState>,
}

fn mismatch(step: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::PrefixMismatch { step, message: message.into() }
}

fn prefix_segment(family: Proto, local: u16, remote: u16, seq: u32, ack: u32, fl: FlagSet) -> Vec<u8> {
    let spec = TcpSpec { src_port: remote, dst_port: local, seq, ack, flags: fl.0, window: 8192, mss: None };
    tcp_frame(family, Direction::ToTarget, &spec)
}

/// Drives a freshly reset `target` through the scenario's steps, using
/// `family` for every packet the tester sends.
pub fn run_prefix<T: Target + ?Sized>(
    scenario: &Scenario,
    target: &mut T,
    family: Proto,
) -> Result<InjectionContext, ScenarioError> {
    let mut local: Option<u16> = None;
    let mut remote = addr::TESTER_PORT;
    let mut snd_nxt = TESTER_ISN;
    let mut rcv_nxt: Option<u32> = None;
    let mut last_target_seq: Option<u32> = None;
    let mut exchanged = false;
    let mut pending: VecDeque<Vec<u8>> = VecDeque::new();
    let mut inject = None;

    for (i, step) in scenario.steps.iter().enumerate() {
        let n = i + 1;
        match step {
            Step::Call(call) => {
                match call {
                    Syscall::Bind(p) => local = Some(*p),
                    Syscall::Connect(p) => remote = *p,
                    _ => {}
                }
                match target.syscall(call) {
                    Ok(_) => {}
                    Err(HarnessError::Syscall { call, reason }) => {
                        return Err(mismatch(n, format!("{call}: {reason}")));
                    }
                    Err(e) => return Err(e.into()),
                }
                pending.extend(target.drain_outbound()?);
            }
            Step::Send { flags: fl, seq, ack } => {
                let port = local.unwrap_or(addr::TARGET_PORT);
                let seq = seq.unwrap_or(snd_nxt);
                let ack = ack.unwrap_or(rcv_nxt.unwrap_or(0));
                let frame = prefix_segment(family, port, remote, seq, ack, *fl);
                match target.deliver(&frame)? {
                    DeliveryResult::Processed => {}
                    other => return Err(mismatch(n, format!("target rejected prefix packet: {other:?}"))),
                }
                snd_nxt = seq
                    .wrapping_add(u32::from(fl.contains(flags::SYN)))
                    .wrapping_add(u32::from(fl.contains(flags::FIN)));
                exchanged = true;
                pending.extend(target.drain_outbound()?);
            }
            Step::Expect { flags: want } => {
                let frame = pending.pop_front().ok_or(ScenarioError::PrefixTimeout { step: n })?;
                let view = tcp_view(&frame).ok_or_else(|| mismatch(n, "target frame is not TCP"))?;
                let got = view.flags;
                let mask = flags::SYN | flags::ACK | flags::FIN | flags::RST;
                if got & mask != want.0 & mask {
                    return Err(mismatch(n, format!("expected {want}, target sent {}", FlagSet(got))));
                }
                if view.dst_port != remote {
                    return Err(mismatch(n, "target frame has wrong destination port"));
                }
                let src_port = view.src_port;
                match local {
                    Some(p) if p != src_port => return Err(mismatch(n, "target frame has wrong source port")),
                    _ => local = Some(src_port),
                }
                let seq = view.seq;
                if last_target_seq.is_some_and(|prev| seq < prev) {
                    return Err(mismatch(n, "target sequence number went backwards"));
                }
                last_target_seq = Some(seq);
                let payload = view.payload_len as u32;
                rcv_nxt = Some(
                    seq.wrapping_add(payload)
                        .wrapping_add(u32::from(got & flags::SYN != 0))
                        .wrapping_add(u32::from(got & flags::FIN != 0)),
                );
                exchanged = true;
            }
            Step::Inject { flags: fl } => inject = *fl,
        }
    }
    target.drain_outbound()?;
    Ok(InjectionContext {
        scenario_id: scenario.id.clone(),
        family,
        transport: scenario.protocol,
        local_port: local.unwrap_or(addr::TARGET_PORT),
        remote_port: remote,
        seq: exchanged.then_some(snd_nxt),
        ack: rcv_nxt,
        window: 8192,
        flags: inject,
        expected_state: scenario.injection_state,
    })
}

/// Asks the target for the state of the context's connection and checks it
/// against the scenario's injection state.
pub fn verify_state<T: Target + ?Sized>(target: &mut T, ctx: &InjectionContext) -> Result<Option<TcpState>, ScenarioError> {
    let Some(want) = ctx.expected_state else { return Ok(None) };
    let got = target.inspect(&format!("tcp_state:port={}", ctx.local_port))?;
    let state: TcpState = got.parse().map_err(|e: String| mismatch(0, e))?;
    if state != want {
        return Err(mismatch(0, format!("target is in {state}, scenario expects {want}")));
    }
    Ok(Some(state))
}

/// Binds the template to the context, then applies the plan. Fields the plan
/// replaces keep the plan's value.
pub fn bind_mutant(ctx: &InjectionContext, template: &PacketTemplate, plan: &MutationPlan) -> Result<Packet, MutationError> {
    let mut t = template.clone();
    let Some(transport) = t.transport() else { return apply(&t, plan) };
    let bind = |t: &mut PacketTemplate, name: &'static str, value: u32| -> Result<(), MutationError> {
        if !plan.replaces(transport, name) {
            t.set(transport, name, value)?;
        }
        Ok(())
    };
    bind(&mut t, "src_port", u32::from(ctx.remote_port))?;
    bind(&mut t, "dst_port", u32::from(ctx.local_port))?;
    if transport == Proto::Tcp {
        if let Some(seq) = ctx.seq {
            bind(&mut t, "seq", seq)?;
        }
        if let Some(ack) = ctx.ack {
            bind(&mut t, "ack", ack)?;
        }
        if let Some(fl) = ctx.flags {
            for (name, bit) in FLAG_FIELDS {
                bind(&mut t, name, u32::from(fl.contains(bit)))?;
            }
        }
    }
    apply(&t, plan)
}
