use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::packet::segment::{tcp_frame, Direction, TcpSpec};
use crate::packet::Proto;

/// TCP connection states. TIME-WAIT and CLOSING are not modelled; a
/// connection that would enter them is closed instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TcpState {
    Closed,
    Listen,
    SynSent,
    SynRcvd,
    Established,
    FinWait1,
    FinWait2,
    CloseWait,
    LastAck,
}

impl TcpState {
    pub const ALL: [TcpState; 9] = [
        TcpState::Closed,
        TcpState::Listen,
        TcpState::SynSent,
        TcpState::SynRcvd,
        TcpState::Established,
        TcpState::FinWait1,
        TcpState::FinWait2,
        TcpState::CloseWait,
        TcpState::LastAck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TcpState::Closed => "CLOSED",
            TcpState::Listen => "LISTEN",
            TcpState::SynSent => "SYN-SENT",
            TcpState::SynRcvd => "SYN-RCVD",
            TcpState::Established => "ESTABLISHED",
            TcpState::FinWait1 => "FIN-WAIT-1",
            TcpState::FinWait2 => "FIN-WAIT-2",
            TcpState::CloseWait => "CLOSE-WAIT",
            TcpState::LastAck => "LAST-ACK",
        }
    }

    /// States in which sequence numbers are synchronized.
    pub fn synchronized(self) -> bool {
        !matches!(self, TcpState::Closed | TcpState::Listen | TcpState::SynSent)
    }
}

impl fmt::Display for TcpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TcpState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TcpState::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown TCP state {s:?}"))
    }
}

pub mod flags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Sock {
    pub proto: Proto,
    pub local_port: Option<u16>,
    pub remote_port: Option<u16>,
    pub state: TcpState,
    /// Network family of the peer, learned from its last segment.
    pub family: Proto,
    pub snd_nxt: u32,
    pub rcv_nxt: u32,
    pub peer_mss: u16,
    pub datagrams: usize,
}

impl Sock {
    pub fn new(proto: Proto) -> Self {
        Sock {
            proto,
            local_port: None,
            remote_port: None,
            state: TcpState::Closed,
            family: Proto::Ipv4,
            snd_nxt: 0,
            rcv_nxt: 0,
            peer_mss: 536,
            datagrams: 0,
        }
    }
}

/// Deterministic initial sequence number for a local port.
pub fn isn_for(port: u16) -> u32 {
    0x1000_0000 | (u32::from(port) << 8)
}

pub const EPHEMERAL_PORT: u16 = 49152;

/// A target-to-tester TCP segment. SYNs carry an MSS option.
pub(crate) fn tcp_segment(family: Proto, local: u16, remote: u16, seq: u32, ack: u32, fl: u8) -> Vec<u8> {
    let spec = TcpSpec {
        src_port: local,
        dst_port: remote,
        seq,
        ack: if fl & flags::ACK != 0 { ack } else { 0 },
        flags: fl,
        window: 8192,
        mss: (fl & flags::SYN != 0).then_some(1460),
    };
    tcp_frame(family, Direction::FromTarget, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::decode;

    #[test]
    fn state_names() {
        for s in TcpState::ALL {
            assert_eq!(s.as_str().parse::<TcpState>().unwrap(), s);
        }
        assert!("TIME-WAIT".parse::<TcpState>().is_err());
    }

    #[test]
    fn syn_ack_segment_is_well_formed() {
        let bytes = tcp_segment(Proto::Ipv4, 7777, 40000, 5, 1001, flags::SYN | flags::ACK);
        let t = decode(&bytes).unwrap();
        assert_eq!(t.explicit(Proto::Tcp, "flag_syn"), Some(1));
        assert_eq!(t.explicit(Proto::Tcp, "ack"), Some(1001));
        assert_eq!(t.explicit(Proto::Ipv4, "src"), Some(0x0a00_0001));
        assert_eq!(bytes.len(), 58);
        let v6 = tcp_segment(Proto::Ipv6, 7777, 40000, 5, 0, flags::RST);
        assert_eq!(v6.len(), 74);
    }
}
