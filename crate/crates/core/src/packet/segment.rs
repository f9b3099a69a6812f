//! Direct construction and inspection of plain TCP frames, used on the hot
//! path of state prefixes and stack replies. Output is byte-identical to
//! encoding the equivalent template.

use super::checksum::{ipv4_header_checksum, transport_checksum, PseudoHeader};
use super::fields::addr;
use super::Proto;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToTarget,
    FromTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TcpSpec {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub window: u16,
    pub mss: Option<u16>,
}

/// Builds an Ethernet/IP/TCP frame with no payload.
pub fn tcp_frame(family: Proto, dir: Direction, spec: &TcpSpec) -> Vec<u8> {
    let ((smac, dmac), (s4, d4), (s6, d6)) = match dir {
        Direction::ToTarget => (
            (addr::TESTER_MAC, addr::TARGET_MAC),
            (addr::TESTER_V4, addr::TARGET_V4),
            (addr::TESTER_V6, addr::TARGET_V6),
        ),
        Direction::FromTarget => (
            (addr::TARGET_MAC, addr::TESTER_MAC),
            (addr::TARGET_V4, addr::TESTER_V4),
            (addr::TARGET_V6, addr::TESTER_V6),
        ),
    };
    let tcp_len = if spec.mss.is_some() { 24 } else { 20 };
    let mut tcp = Vec::with_capacity(tcp_len);
    tcp.extend_from_slice(&spec.src_port.to_be_bytes());
    tcp.extend_from_slice(&spec.dst_port.to_be_bytes());
    tcp.extend_from_slice(&spec.seq.to_be_bytes());
    tcp.extend_from_slice(&spec.ack.to_be_bytes());
    tcp.push(((tcp_len / 4) as u8) << 4);
    tcp.push(spec.flags & 0x3f);
    tcp.extend_from_slice(&spec.window.to_be_bytes());
    tcp.extend_from_slice(&[0, 0, 0, 0]);
    if let Some(mss) = spec.mss {
        tcp.extend_from_slice(&[2, 4]);
        tcp.extend_from_slice(&mss.to_be_bytes());
    }

    let mut out = Vec::with_capacity(14 + 40 + tcp_len);
    out.extend_from_slice(&dmac);
    out.extend_from_slice(&smac);
    let pseudo = match family {
        Proto::Ipv6 => {
            out.extend_from_slice(&[0x86, 0xdd, 0x60, 0, 0, 0]);
            out.extend_from_slice(&(tcp_len as u16).to_be_bytes());
            out.extend_from_slice(&[6, 64]);
            out.extend_from_slice(&s6);
            out.extend_from_slice(&d6);
            PseudoHeader::V6 { src: s6, dst: d6, next_header: 6 }
        }
        _ => {
            out.extend_from_slice(&[0x08, 0x00, 0x45, 0]);
            out.extend_from_slice(&((20 + tcp_len) as u16).to_be_bytes());
            out.extend_from_slice(&[0, 1, 0x40, 0, 64, 6, 0, 0]);
            out.extend_from_slice(&s4);
            out.extend_from_slice(&d4);
            let sum = ipv4_header_checksum(&out[14..34]).expect("20-byte header");
            out[24..26].copy_from_slice(&sum.to_be_bytes());
            PseudoHeader::V4 { src: s4, dst: d4, protocol: 6 }
        }
    };
    let sum = transport_checksum(&pseudo, &tcp);
    tcp[16..18].copy_from_slice(&sum.to_be_bytes());
    out.extend_from_slice(&tcp);
    out
}

/// The TCP header fields of a well-formed frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TcpView {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub payload_len: usize,
}

/// Locates the TCP header of an Ethernet frame without extension headers.
/// Returns `None` for anything else.
pub fn tcp_view(frame: &[u8]) -> Option<TcpView> {
    let ethertype = u16::from_be_bytes([*frame.get(12)?, *frame.get(13)?]);
    let (off, end) = match ethertype {
        0x0800 => {
            let ihl = usize::from(frame.get(14)? & 0x0f) * 4;
            if *frame.get(23)? != 6 {
                return None;
            }
            (14 + ihl, 14 + usize::from(u16::from_be_bytes([frame[16], frame[17]])))
        }
        0x86dd => {
            if *frame.get(20)? != 6 {
                return None;
            }
            (54, 54 + usize::from(u16::from_be_bytes([frame[18], frame[19]])))
        }
        _ => return None,
    };
    let h = frame.get(off..off + 20)?;
    if end > frame.len() {
        return None;
    }
    let doff = usize::from(h[12] >> 4) * 4;
    Some(TcpView {
        src_port: u16::from_be_bytes([h[0], h[1]]),
        dst_port: u16::from_be_bytes([h[2], h[3]]),
        seq: u32::from_be_bytes([h[4], h[5], h[6], h[7]]),
        ack: u32::from_be_bytes([h[8], h[9], h[10], h[11]]),
        flags: h[13] & 0x3f,
        payload_len: end.checked_sub(off + doff)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{encode, fields, OptionInstance, PacketTemplate};

    /// The same frame built through the template encoder.
    fn via_template(family: Proto, dir: Direction, s: &TcpSpec) -> Vec<u8> {
        let mut t = PacketTemplate::of(family, Some(Proto::Tcp)).unwrap();
        if dir == Direction::FromTarget {
            let mac = |m: [u8; 6]| (u32::from(u16::from_be_bytes([m[0], m[1]])), u32::from_be_bytes([m[2], m[3], m[4], m[5]]));
            let (dh, dl) = mac(addr::TESTER_MAC);
            let (sh, sl) = mac(addr::TARGET_MAC);
            for (n, v) in [("dst_hi", dh), ("dst_lo", dl), ("src_hi", sh), ("src_lo", sl)] {
                t.set(Proto::Ethernet, n, v).unwrap();
            }
            if family == Proto::Ipv4 {
                t.set(Proto::Ipv4, "src", u32::from_be_bytes(addr::TARGET_V4)).unwrap();
                t.set(Proto::Ipv4, "dst", u32::from_be_bytes(addr::TESTER_V4)).unwrap();
            } else {
                t.set(Proto::Ipv6, "src_3", 1).unwrap();
                t.set(Proto::Ipv6, "dst_3", 2).unwrap();
            }
        }
        let names = ["flag_fin", "flag_syn", "flag_rst", "flag_psh", "flag_ack", "flag_urg"];
        for (i, n) in names.iter().enumerate() {
            t.set(Proto::Tcp, n, u32::from(s.flags >> i & 1)).unwrap();
        }
        for (n, v) in [
            ("src_port", u32::from(s.src_port)),
            ("dst_port", u32::from(s.dst_port)),
            ("seq", s.seq),
            ("ack", s.ack),
            ("window", u32::from(s.window)),
        ] {
            t.set(Proto::Tcp, n, v).unwrap();
        }
        if let Some(mss) = s.mss {
            let d = fields::option(Proto::Tcp, "mss").unwrap();
            t.push_option(OptionInstance::with_value(d, &mss.to_be_bytes()).unwrap()).unwrap();
        }
        encode(&t).unwrap().into_bytes()
    }

    #[test]
    fn matches_template_encoding() {
        for family in [Proto::Ipv4, Proto::Ipv6] {
            for dir in [Direction::ToTarget, Direction::FromTarget] {
                for (flags, mss) in [(0x02, Some(1460)), (0x12, Some(536)), (0x10, None), (0x11, None), (0x04, None)] {
                    let s = TcpSpec { src_port: 7777, dst_port: 40000, seq: 0xdead_beef, ack: 77, flags, window: 8192, mss };
                    assert_eq!(tcp_frame(family, dir, &s), via_template(family, dir, &s), "{family} {dir:?} {flags:#x}");
                }
            }
        }
    }

    #[test]
    fn view_reads_back() {
        let s = TcpSpec { src_port: 1, dst_port: 2, seq: 3, ack: 4, flags: 0x12, window: 8192, mss: Some(1460) };
        for family in [Proto::Ipv4, Proto::Ipv6] {
            let v = tcp_view(&tcp_frame(family, Direction::FromTarget, &s)).unwrap();
            assert_eq!((v.src_port, v.dst_port, v.seq, v.ack, v.flags, v.payload_len), (1, 2, 3, 4, 0x12, 0));
        }
        assert!(tcp_view(&[0; 20]).is_none());
        let udp = encode(&PacketTemplate::ipv4_udp()).unwrap();
        assert!(tcp_view(udp.bytes()).is_none());
    }
}
