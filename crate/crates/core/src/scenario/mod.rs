//! State prefixes.
//!
//! A scenario is a small text file, one step per line:
//!
//! ```text
//! scenario tcp-established      # identifier
//! protocol tcp                  # tcp | udp
//! state ESTABLISHED             # state at injection, or `stateless`
//! call socket tcp               # syscalls: socket tcp|udp, bind P, listen,
//!                               #   accept, connect P, close
//! send SYN [seq=N] [ack=N]      # inbound packet with these flags
//! expect SYN-ACK                # outbound packet the target must emit
//! inject ACK                    # last step: deliver the mutant with these flags
//! ```
//!
//! `#` starts a comment. Flag sets join names with `-` (`SYN-ACK`,
//! `FIN-ACK`). Sequence and acknowledgment numbers default to the values the
//! exchange so far implies.

mod run;

use std::fmt;

use thiserror::Error;

use crate::harness::Syscall;
use crate::packet::Proto;
use crate::refstack::{flags, TcpState};

pub use run::{bind_mutant, run_prefix, verify_state, InjectionContext, TESTER_ISN};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("prefix mismatch at step {step}: {message}")]
    PrefixMismatch { step: usize, message: String },
    #[error("prefix timed out at step {step}")]
    PrefixTimeout { step: usize },
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Harness(#[from] crate::harness::HarnessError),
    #[error(transparent)]
    Mutation(#[from] crate::mutation::MutationError),
}

/// Set of TCP flags written as `SYN-ACK`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FlagSet(pub u8);

const FLAG_NAMES: [(&str, u8); 6] = [
    ("FIN", flags::FIN),
    ("SYN", flags::SYN),
    ("RST", flags::RST),
    ("PSH", flags::PSH),
    ("ACK", flags::ACK),
    ("URG", flags::URG),
];

impl FlagSet {
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut bits = 0;
        for part in s.split(['-', '+']) {
            let (_, b) = FLAG_NAMES
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(part))
                .ok_or_else(|| format!("unknown flag {part:?}"))?;
            bits |= b;
        }
        Ok(FlagSet(bits))
    }

    pub fn contains(self, bit: u8) -> bool {
        self.0 & bit != 0
    }
}

impl fmt::Display for FlagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // SYN and FIN read first, as in "SYN-ACK"
        let order = [flags::SYN, flags::FIN, flags::RST, flags::PSH, flags::URG, flags::ACK];
        let names: Vec<&str> = order
            .iter()
            .filter(|&&b| self.0 & b != 0)
            .map(|b| FLAG_NAMES.iter().find(|(_, v)| v == b).expect("known flag").0)
            .collect();
        f.write_str(&names.join("-"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Call(Syscall),
    Send { flags: FlagSet, seq: Option<u32>, ack: Option<u32> },
    Expect { flags: FlagSet },
    Inject { flags: Option<FlagSet> },
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Call(c) => write!(f, "call {c}"),
            Step::Send { flags, seq, ack } => {
                write!(f, "send {flags}")?;
                if let Some(s) = seq {
                    write!(f, " seq={s}")?;
                }
                if let Some(a) = ack {
                    write!(f, " ack={a}")?;
                }
                Ok(())
            }
            Step::Expect { flags } => write!(f, "expect {flags}"),
            Step::Inject { flags: Some(fl) } => write!(f, "inject {fl}"),
            Step::Inject { flags: None } => f.write_str("inject"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub protocol: Proto,
    /// `None` for stateless protocols.
    pub injection_state: Option<TcpState>,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let err = |line: usize, message: String| ScenarioError::Parse { line, message };
        let mut id = None;
        let mut protocol = None;
        let mut state: Option<Option<TcpState>> = None;
        let mut steps = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if matches!(steps.last(), Some(Step::Inject { .. })) {
                return Err(err(line, "inject must be the last step".into()));
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words.as_slice() {
                ["scenario", name] => id = Some(name.to_string()),
                ["protocol", p] => {
                    protocol = Some(match *p {
                        "tcp" => Proto::Tcp,
                        "udp" => Proto::Udp,
                        other => return Err(err(line, format!("unsupported protocol {other:?}"))),
                    })
                }
                ["state", "stateless"] => state = Some(None),
                ["state", s] => state = Some(Some(s.parse().map_err(|e| err(line, e))?)),
                ["call", rest @ ..] => steps.push(Step::Call(parse_call(rest).map_err(|e| err(line, e))?)),
                ["send", fl, rest @ ..] => {
                    let flags = FlagSet::parse(fl).map_err(|e| err(line, e))?;
                    let (mut seq, mut ack) = (None, None);
                    for kv in rest {
                        let (k, v) = kv.split_once('=').ok_or_else(|| err(line, format!("expected key=value, got {kv:?}")))?;
                        let v = parse_u32(v).map_err(|e| err(line, e))?;
                        match k {
                            "seq" => seq = Some(v),
                            "ack" => ack = Some(v),
                            _ => return Err(err(line, format!("unknown send key {k:?}"))),
                        }
                    }
                    steps.push(Step::Send { flags, seq, ack });
                }
                ["expect", fl] => steps.push(Step::Expect { flags: FlagSet::parse(fl).map_err(|e| err(line, e))? }),
                ["inject"] => steps.push(Step::Inject { flags: None }),
                ["inject", fl] => steps.push(Step::Inject { flags: Some(FlagSet::parse(fl).map_err(|e| err(line, e))?) }),
                _ => return Err(err(line, format!("unrecognized step {content:?}"))),
            }
        }
        let last = text.lines().count();
        let scenario = Scenario {
            id: id.ok_or_else(|| err(last, "missing `scenario` line".into()))?,
            protocol: protocol.ok_or_else(|| err(last, "missing `protocol` line".into()))?,
            injection_state: state.ok_or_else(|| err(last, "missing `state` line".into()))?,
            steps,
        };
        if !matches!(scenario.steps.last(), Some(Step::Inject { .. })) {
            return Err(err(last, "scenario must end with inject".into()));
        }
        if scenario.protocol == Proto::Udp && scenario.injection_state.is_some() {
            return Err(err(last, "udp scenarios are stateless".into()));
        }
        Ok(scenario)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("scenario {}\nprotocol {}\n", self.id, self.protocol);
        match self.injection_state {
            Some(s) => out.push_str(&format!("state {s}\n")),
            None => out.push_str("state stateless\n"),
        }
        for step in &self.steps {
            out.push_str(&format!("{step}\n"));
        }
        out
    }

    pub fn inject_flags(&self) -> Option<FlagSet> {
        match self.steps.last() {
            Some(Step::Inject { flags }) => *flags,
            _ => None,
        }
    }
}

fn parse_u32(s: &str) -> Result<u32, String> {
    let r = match s.strip_prefix("0x") {
        Some(h) => u32::from_str_radix(h, 16),
        None => s.parse(),
    };
    r.map_err(|_| format!("bad number {s:?}"))
}

fn parse_call(words: &[&str]) -> Result<Syscall, String> {
    let port = |p: &str| p.parse::<u16>().map_err(|_| format!("bad port {p:?}"));
    Ok(match words {
        ["socket", "tcp"] => Syscall::Socket(Proto::Tcp),
        ["socket", "udp"] => Syscall::Socket(Proto::Udp),
        ["bind", p] => Syscall::Bind(port(p)?),
        ["listen"] => Syscall::Listen,
        ["accept"] => Syscall::Accept,
        ["connect", p] => Syscall::Connect(port(p)?),
        ["close"] => Syscall::Close,
        other => return Err(format!("unknown call {:?}", other.join(" "))),
    })
}

const BUILTIN_SOURCES: [&str; 8] = [
    include_str!("../../scenarios/tcp_listen.scn"),
    include_str!("../../scenarios/tcp_syn_sent.scn"),
    include_str!("../../scenarios/tcp_established.scn"),
    include_str!("../../scenarios/tcp_fin_wait_1.scn"),
    include_str!("../../scenarios/tcp_fin_wait_2.scn"),
    include_str!("../../scenarios/tcp_close_wait.scn"),
    include_str!("../../scenarios/tcp_last_ack.scn"),
    include_str!("../../scenarios/udp_bound.scn"),
];

/// The bundled scenarios for `protocol`: seven TCP states, one UDP.
pub fn builtin_scenarios(protocol: Proto) -> Vec<Scenario> {
    all_builtin_scenarios().into_iter().filter(|s| s.protocol == protocol).collect()
}

pub fn all_builtin_scenarios() -> Vec<Scenario> {
    BUILTIN_SOURCES
        .iter()
        .map(|src| Scenario::parse(src).expect("builtin scenario parses"))
        .collect()
}

pub fn builtin_scenario(id: &str) -> Result<Scenario, ScenarioError> {
    all_builtin_scenarios()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| ScenarioError::Unknown(id.to_string()))
}
