//! A small deterministic IPv4/IPv6/TCP/UDP stack that reads every received
//! byte through a [`GuardedBuffer`], with individually switchable seeded
//! validation bugs.

mod bugs;
mod input;
mod socket;

use std::time::Duration;

use crate::harness::{DeliveryResult, GuardedBuffer, HarnessError, Syscall, Target, Watchdog, DEFAULT_STEP_BUDGET};
use crate::packet::Proto;

pub use bugs::{seeded_bug_catalog, B3Form, BugId, BugPattern, BugSet, SeededBug};
pub use socket::{flags, isn_for, TcpState, EPHEMERAL_PORT};

use socket::{tcp_segment, Sock};

pub const RX_CAPACITY: usize = 1514;
pub const OPTION_SCRATCH: usize = 40;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefStackConfig {
    pub bugs: BugSet,
    pub b3_form: B3Form,
    pub deadline: Duration,
    pub step_budget: u64,
}

impl Default for RefStackConfig {
    fn default() -> Self {
        RefStackConfig {
            bugs: BugSet::none(),
            b3_form: B3Form::default(),
            deadline: Duration::from_secs(2),
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl RefStackConfig {
    pub fn with_bugs(bugs: impl IntoIterator<Item = BugId>) -> Self {
        RefStackConfig { bugs: bugs.into_iter().collect(), ..Default::default() }
    }
}

pub struct RefStack {
    config: RefStackConfig,
    rx: GuardedBuffer,
    scratch: GuardedBuffer,
    watchdog: Watchdog,
    sockets: Vec<Option<Sock>>,
    app: Option<usize>,
    outbound: Vec<Vec<u8>>,
}

impl RefStack {
    pub fn new(config: RefStackConfig) -> Self {
        let watchdog = Watchdog::new(config.deadline, config.step_budget);
        RefStack {
            config,
            rx: GuardedBuffer::new("rx", RX_CAPACITY),
            scratch: GuardedBuffer::new("tcp_options", OPTION_SCRATCH),
            watchdog,
            sockets: Vec::new(),
            app: None,
            outbound: Vec::new(),
        }
    }

    pub fn config(&self) -> &RefStackConfig {
        &self.config
    }

    fn bug(&self, id: BugId) -> bool {
        self.config.bugs.contains(id)
    }

    /// State of the connection bound to local `port`. An established or
    /// closing connection wins over a listener on the same port.
    pub fn tcp_state(&self, port: u16) -> TcpState {
        let on_port = || self.sockets.iter().flatten().filter(|s| s.proto == Proto::Tcp && s.local_port == Some(port));
        on_port()
            .rfind(|s| s.state != TcpState::Listen)
            .or_else(|| on_port().next_back())
            .map_or(TcpState::Closed, |s| s.state)
    }

    fn app_sock(&mut self, call: &Syscall) -> Result<&mut Sock, HarnessError> {
        self.app
            .and_then(|i| self.sockets.get_mut(i).and_then(Option::as_mut))
            .ok_or_else(|| HarnessError::Syscall { call: call.to_string(), reason: "no socket".into() })
    }

    fn port_in_use(&self, proto: Proto, port: u16) -> bool {
        self.sockets.iter().flatten().any(|s| s.proto == proto && s.local_port == Some(port))
    }

    fn emit(&mut self, frame: Vec<u8>) {
        self.outbound.push(frame);
    }
}

fn fail(call: &Syscall, reason: &str) -> HarnessError {
    HarnessError::Syscall { call: call.to_string(), reason: reason.to_string() }
}

impl Target for RefStack {
    fn reset(&mut self) -> Result<(), HarnessError> {
        self.sockets.clear();
        self.app = None;
        self.outbound.clear();
        self.rx.clear();
        self.scratch.clear();
        Ok(())
    }

    fn syscall(&mut self, call: &Syscall) -> Result<i64, HarnessError> {
        match call {
            Syscall::Socket(p @ (Proto::Tcp | Proto::Udp)) => {
                self.sockets.push(Some(Sock::new(*p)));
                self.app = Some(self.sockets.len() - 1);
                Ok(self.sockets.len() as i64 - 1)
            }
            Syscall::Socket(_) => Err(fail(call, "unsupported protocol")),
            Syscall::Bind(port) => {
                let proto = self.app_sock(call)?.proto;
                if self.port_in_use(proto, *port) {
                    return Err(fail(call, "address in use"));
                }
                self.app_sock(call)?.local_port = Some(*port);
                Ok(0)
            }
            Syscall::Listen => {
                let s = self.app_sock(call)?;
                if s.proto != Proto::Tcp || s.local_port.is_none() || s.state != TcpState::Closed {
                    return Err(fail(call, "invalid socket for listen"));
                }
                s.state = TcpState::Listen;
                Ok(0)
            }
            Syscall::Accept => {
                let port = self.app_sock(call)?.local_port;
                let child = self.sockets.iter().position(|s| {
                    s.as_ref().is_some_and(|s| {
                        s.proto == Proto::Tcp && s.local_port == port && s.remote_port.is_some() && s.state == TcpState::Established
                    })
                });
                match child {
                    Some(i) => {
                        self.app = Some(i);
                        Ok(i as i64)
                    }
                    None => Err(fail(call, "would block")),
                }
            }
            Syscall::Connect(remote) => {
                let s = self.app_sock(call)?;
                if s.proto != Proto::Tcp || s.state != TcpState::Closed {
                    return Err(fail(call, "invalid socket for connect"));
                }
                let local = *s.local_port.get_or_insert(EPHEMERAL_PORT);
                let isn = isn_for(local);
                s.remote_port = Some(*remote);
                s.state = TcpState::SynSent;
                s.snd_nxt = isn.wrapping_add(1);
                let family = s.family;
                self.emit(tcp_segment(family, local, *remote, isn, 0, flags::SYN));
                Ok(0)
            }
            Syscall::Close => {
                let idx = self.app.ok_or_else(|| fail(call, "no socket"))?;
                let s = self.app_sock(call)?;
                let (local, remote, family) = (s.local_port.unwrap_or(0), s.remote_port.unwrap_or(0), s.family);
                let (seq, ack) = (s.snd_nxt, s.rcv_nxt);
                let next = match (s.proto, s.state) {
                    (Proto::Tcp, TcpState::Established) => Some(TcpState::FinWait1),
                    (Proto::Tcp, TcpState::CloseWait) => Some(TcpState::LastAck),
                    _ => None,
                };
                match next {
                    Some(state) => {
                        s.state = state;
                        s.snd_nxt = seq.wrapping_add(1);
                        self.emit(tcp_segment(family, local, remote, seq, ack, flags::FIN | flags::ACK));
                    }
                    None => {
                        self.sockets[idx] = None;
                        self.app = None;
                    }
                }
                Ok(0)
            }
        }
    }

    fn deliver(&mut self, frame: &[u8]) -> Result<DeliveryResult, HarnessError> {
        Ok(self.process_frame(frame))
    }

    fn drain_outbound(&mut self) -> Result<Vec<Vec<u8>>, HarnessError> {
        Ok(std::mem::take(&mut self.outbound))
    }

    fn inspect(&mut self, key: &str) -> Result<String, HarnessError> {
        let unknown = || HarnessError::UnknownKey(key.to_string());
        match key.split_once(':') {
            Some(("tcp_state", arg)) => {
                let port = arg.strip_prefix("port=").and_then(|p| p.parse().ok()).ok_or_else(unknown)?;
                Ok(self.tcp_state(port).to_string())
            }
            None if key == "sockets" => Ok(self.sockets.iter().flatten().count().to_string()),
            None if key == "bugs" => Ok(self.config.bugs.iter().map(|b| b.code()).collect::<Vec<_>>().join(",")),
            None if key == "udp_datagrams" => {
                Ok(self.sockets.iter().flatten().map(|s| s.datagrams).sum::<usize>().to_string())
            }
            _ => Err(unknown()),
        }
    }
}

