use crate::harness::{checked_div, checked_sub, DeliveryResult, Expired, FaultReport};
use crate::packet::checksum::{verify_ipv4_header, verify_transport, PseudoHeader};
use crate::packet::fields::addr;
use crate::packet::Proto;

use super::socket::{flags, isn_for, tcp_segment, Sock, TcpState};
use super::{B3Form, BugId, RefStack};

enum Trap {
    Fault(FaultReport),
    Timeout(&'static str),
}

impl From<FaultReport> for Trap {
    fn from(f: FaultReport) -> Self {
        Trap::Fault(f)
    }
}

impl From<Expired> for Trap {
    fn from(e: Expired) -> Self {
        Trap::Timeout(e.site)
    }
}

enum Verdict {
    Processed,
    Dropped(&'static str),
}

type Flow = Result<Verdict, Trap>;

use Verdict::{Dropped, Processed};

struct Segment {
    off: usize,
    len: usize,
    pseudo: PseudoHeader,
    family: Proto,
}

/// Fields of a TCP header that passed validation.
struct TcpHeader {
    src: u16,
    dst: u16,
    seq: u32,
    ack: u32,
    flags: u8,
    payload_len: usize,
}

#[derive(Default)]
struct TcpOptions {
    mss: Option<u16>,
}

impl RefStack {
    pub(super) fn process_frame(&mut self, frame: &[u8]) -> DeliveryResult {
        self.watchdog.restart();
        if self.rx.load(frame).is_err() {
            return DeliveryResult::Dropped("frame too large".into());
        }
        match self.eth_input() {
            Ok(Processed) => DeliveryResult::Processed,
            Ok(Dropped(reason)) => DeliveryResult::Dropped(reason.into()),
            Err(Trap::Fault(f)) => DeliveryResult::Fault(f),
            Err(Trap::Timeout(site)) => DeliveryResult::Timeout { site: site.into() },
        }
    }

    fn eth_input(&mut self) -> Flow {
        self.watchdog.enter("eth_input")?;
        if self.rx.live_len() < 14 {
            return Ok(Dropped("short ethernet frame"));
        }
        let hdr = self.rx.read(0, 14, "eth_input")?;
        if hdr[..6] != addr::TARGET_MAC && hdr[..6] != [0xff; 6] {
            return Ok(Dropped("not our mac"));
        }
        match u16::from_be_bytes([hdr[12], hdr[13]]) {
            0x0800 => self.ipv4_input(14),
            0x86dd => self.ipv6_input(14),
            _ => Ok(Dropped("unknown ethertype")),
        }
    }

    fn ipv4_input(&mut self, off: usize) -> Flow {
        self.watchdog.enter("ipv4_input")?;
        let avail = self.rx.live_len() - off;
        if avail < 20 {
            return Ok(Dropped("short ipv4 header"));
        }
        let fixed: [u8; 20] = self.rx.read(off, 20, "ipv4_input")?.try_into().expect("20 bytes");
        if fixed[0] >> 4 != 4 {
            return Ok(Dropped("ip version"));
        }
        let hlen = usize::from(fixed[0] & 0x0f) * 4;
        if hlen < 20 || hlen > avail {
            return Ok(Dropped("ipv4 header length"));
        }
        if !verify_ipv4_header(self.rx.read(off, hlen, "ipv4_input")?) {
            return Ok(Dropped("ipv4 checksum"));
        }
        let total = usize::from(u16::from_be_bytes([fixed[2], fixed[3]]));
        if total > avail {
            return Ok(Dropped("ipv4 total length"));
        }
        if !self.bug(BugId::B5) && total < hlen {
            return Ok(Dropped("ipv4 total length below header"));
        }
        let payload_len = checked_sub(total, hlen, "ipv4_input")?;
        let frag = u16::from_be_bytes([fixed[6], fixed[7]]);
        if frag & 0x3fff != 0 {
            return Ok(Dropped("fragment"));
        }
        if fixed[16..20] != addr::TARGET_V4 {
            return Ok(Dropped("not our address"));
        }
        if hlen > 20 {
            if let Dropped(r) = self.ipv4_options(off + 20, off + hlen)? {
                return Ok(Dropped(r));
            }
        }
        let pseudo = PseudoHeader::V4 {
            src: fixed[12..16].try_into().expect("4 bytes"),
            dst: fixed[16..20].try_into().expect("4 bytes"),
            protocol: fixed[9],
        };
        let seg = Segment { off: off + hlen, len: payload_len, pseudo, family: Proto::Ipv4 };
        match fixed[9] {
            6 => self.tcp_input(seg),
            17 => self.udp_input(seg),
            _ => Ok(Dropped("unsupported protocol")),
        }
    }

    fn ipv4_options(&mut self, mut pos: usize, end: usize) -> Flow {
        while pos < end {
            self.watchdog.enter("ipv4_options")?;
            match self.rx.read_u8(pos, "ipv4_options")? {
                0 => break,
                1 => pos += 1,
                _ => {
                    if pos + 2 > end {
                        return Ok(Dropped("ipv4 option truncated"));
                    }
                    let len = usize::from(self.rx.read_u8(pos + 1, "ipv4_options")?);
                    if len < 2 || pos + len > end {
                        return Ok(Dropped("ipv4 option length"));
                    }
                    pos += len;
                }
            }
        }
        Ok(Processed)
    }

    fn ipv6_input(&mut self, off: usize) -> Flow {
        self.watchdog.enter("ipv6_input")?;
        let avail = self.rx.live_len() - off;
        if avail < 40 {
            return Ok(Dropped("short ipv6 header"));
        }
        let fixed: [u8; 40] = self.rx.read(off, 40, "ipv6_input")?.try_into().expect("40 bytes");
        if fixed[0] >> 4 != 6 {
            return Ok(Dropped("ip version"));
        }
        let payload_len = usize::from(u16::from_be_bytes([fixed[4], fixed[5]]));
        if payload_len > avail - 40 {
            return Ok(Dropped("ipv6 payload length"));
        }
        if fixed[24..40] != addr::TARGET_V6 {
            return Ok(Dropped("not our address"));
        }
        let end = off + 40 + payload_len;
        let mut pos = off + 40;
        let mut next = fixed[6];
        while matches!(next, 0 | 43 | 60) {
            self.watchdog.enter("ipv6_ext_headers")?;
            if pos + 2 > end {
                return Ok(Dropped("ipv6 extension header truncated"));
            }
            let head = self.rx.read(pos, 2, "ipv6_ext_headers")?;
            let (nh, ext_len) = (head[0], (usize::from(head[1]) + 1) * 8);
            if !self.bug(BugId::B6) && pos + ext_len > end {
                return Ok(Dropped("ipv6 extension header length"));
            }
            self.rx.read(pos, ext_len, "ipv6_ext_headers")?;
            next = nh;
            pos += ext_len;
        }
        let pseudo = PseudoHeader::V6 {
            src: fixed[8..24].try_into().expect("16 bytes"),
            dst: fixed[24..40].try_into().expect("16 bytes"),
            next_header: next,
        };
        let seg = Segment { off: pos, len: end.saturating_sub(pos), pseudo, family: Proto::Ipv6 };
        match next {
            6 => self.tcp_input(seg),
            17 => self.udp_input(seg),
            59 => Ok(Dropped("no next header")),
            _ => Ok(Dropped("unsupported protocol")),
        }
    }

    fn udp_input(&mut self, seg: Segment) -> Flow {
        self.watchdog.enter("udp_input")?;
        if seg.len < 8 {
            return Ok(Dropped("short udp header"));
        }
        let hdr: [u8; 8] = self.rx.read(seg.off, 8, "udp_input")?.try_into().expect("8 bytes");
        let length = usize::from(u16::from_be_bytes([hdr[4], hdr[5]]));
        if length < 8 || length > seg.len {
            return Ok(Dropped("udp length"));
        }
        let checksum = u16::from_be_bytes([hdr[6], hdr[7]]);
        let zero_allowed = matches!(seg.pseudo, PseudoHeader::V4 { .. });
        if checksum == 0 && !zero_allowed {
            return Ok(Dropped("udp checksum"));
        }
        if checksum != 0 && !verify_transport(&seg.pseudo, self.rx.read(seg.off, length, "udp_input")?) {
            return Ok(Dropped("udp checksum"));
        }
        let dst = u16::from_be_bytes([hdr[2], hdr[3]]);
        match self.sockets.iter_mut().flatten().find(|s| s.proto == Proto::Udp && s.local_port == Some(dst)) {
            Some(s) => {
                s.datagrams += 1;
                Ok(Processed)
            }
            None => Ok(Dropped("udp port unreachable")),
        }
    }

    fn find_tcp(&self, local: u16, remote: u16) -> Option<usize> {
        let tcp = |s: &Sock| s.proto == Proto::Tcp && s.local_port == Some(local);
        self.sockets
            .iter()
            .position(|s| s.as_ref().is_some_and(|s| tcp(s) && s.remote_port == Some(remote) && s.state != TcpState::Listen))
            .or_else(|| {
                self.sockets.iter().position(|s| s.as_ref().is_some_and(|s| tcp(s) && s.state == TcpState::Listen))
            })
    }

    fn tcp_input(&mut self, seg: Segment) -> Flow {
        self.watchdog.enter("tcp_input")?;
        if seg.len < 4 {
            return Ok(Dropped("short tcp segment"));
        }
        let ports = self.rx.read(seg.off, 4, "tcp_input")?;
        let (src, dst) = (u16::from_be_bytes([ports[0], ports[1]]), u16::from_be_bytes([ports[2], ports[3]]));
        let sock = self.find_tcp(dst, src);

        if let Some(i) = sock {
            if self.sockets[i].as_ref().is_some_and(|s| s.state == TcpState::Established)
                && (self.bug(BugId::B8) || seg.len >= 20)
            {
                self.watchdog.enter("tcp_fast_path")?;
                let fl = self.rx.read_u8(seg.off + 13, "tcp_fast_path")?;
                // header prediction hint only; the full path below still runs
                let _predicted = fl & 0x3f == flags::ACK;
            }
        }

        if !self.bug(BugId::B4) && seg.len < 20 {
            return Ok(Dropped("short tcp header"));
        }
        let h: [u8; 20] = self.rx.read(seg.off, 20, "tcp_input")?.try_into().expect("20 bytes");
        if !verify_transport(&seg.pseudo, self.rx.read(seg.off, seg.len, "tcp_input")?) {
            return Ok(Dropped("tcp checksum"));
        }
        let doff = usize::from(h[12] >> 4) * 4;
        if doff < 20 {
            return Ok(Dropped("tcp data offset"));
        }
        if !self.bug(BugId::B1) && doff > seg.len {
            return Ok(Dropped("tcp data offset beyond segment"));
        }
        let opts = match self.tcp_parse_options(seg.off + 20, doff - 20)? {
            Ok(o) => o,
            Err(reason) => return Ok(Dropped(reason)),
        };
        let header = TcpHeader {
            src,
            dst,
            seq: u32::from_be_bytes([h[4], h[5], h[6], h[7]]),
            ack: u32::from_be_bytes([h[8], h[9], h[10], h[11]]),
            flags: h[13],
            payload_len: seg.len.saturating_sub(doff),
        };
        match sock {
            Some(i) => self.tcp_state_machine(i, &header, &opts, seg.family),
            None => {
                if header.flags & flags::RST == 0 {
                    self.reset_reply(&header, seg.family);
                }
                Ok(Dropped("no socket"))
            }
        }
    }

    /// Copies the options region into the scratch buffer and walks it.
    fn tcp_parse_options(&mut self, start: usize, len: usize) -> Result<Result<TcpOptions, &'static str>, Trap> {
        self.watchdog.enter("tcp_parse_options")?;
        let region = self.rx.read(start, len, "tcp_parse_options")?.to_vec();
        self.scratch.load(&region).expect("options fit in scratch");
        let mut opts = TcpOptions::default();
        let mut pos = 0usize;
        let mut tlvs = 0usize;
        while pos < len {
            self.watchdog.enter("tcp_parse_options")?;
            let kind = self.scratch.read_u8(pos, "tcp_parse_options")?;
            match kind {
                0 => break,
                1 => {
                    pos += 1;
                    continue;
                }
                _ => {}
            }
            if pos + 2 > len {
                return Ok(Err("tcp option truncated"));
            }
            let olen = usize::from(self.scratch.read_u8(pos + 1, "tcp_parse_options")?);
            tlvs += 1;
            if !self.bug(BugId::B7) && olen < 2 {
                return Ok(Err("tcp option length"));
            }
            let trusted = self.bug(BugId::B3) && (self.config.b3_form == B3Form::SingleOption || tlvs >= 2);
            if !trusted && pos + olen > len {
                return Ok(Err("tcp option overruns header"));
            }
            let value = self.scratch.read(pos + 2, olen.saturating_sub(2), "tcp_option_value")?;
            if kind == 2 && value.len() == 2 {
                opts.mss = Some(u16::from_be_bytes([value[0], value[1]]));
            }
            pos += olen;
        }
        Ok(Ok(opts))
    }

    /// Applies a peer MSS option to a connection being opened.
    fn tcp_mss_option(&mut self, idx: usize, opts: &TcpOptions) -> Result<(), Trap> {
        self.watchdog.enter("tcp_mss_option")?;
        let Some(mss) = opts.mss else { return Ok(()) };
        if !self.bug(BugId::B2) && mss == 0 {
            return Ok(());
        }
        let window_segments = checked_div(65535, u32::from(mss), "tcp_mss_option")?;
        let s = self.sockets[idx].as_mut().expect("live socket");
        s.peer_mss = mss;
        log::trace!("peer mss {mss}, {window_segments} segments per window");
        Ok(())
    }

    fn reset_reply(&mut self, h: &TcpHeader, family: Proto) {
        let frame = if h.flags & flags::ACK != 0 {
            tcp_segment(family, h.dst, h.src, h.ack, 0, flags::RST)
        } else {
            let len = h.payload_len as u32 + u32::from(h.flags & flags::SYN != 0) + u32::from(h.flags & flags::FIN != 0);
            tcp_segment(family, h.dst, h.src, 0, h.seq.wrapping_add(len), flags::RST | flags::ACK)
        };
        self.emit(frame);
    }

    fn ack_reply(&mut self, idx: usize) {
        let s = self.sockets[idx].as_ref().expect("live socket");
        let frame = tcp_segment(
            s.family,
            s.local_port.unwrap_or(0),
            s.remote_port.unwrap_or(0),
            s.snd_nxt,
            s.rcv_nxt,
            flags::ACK,
        );
        self.emit(frame);
    }

    fn tcp_state_machine(&mut self, idx: usize, h: &TcpHeader, opts: &TcpOptions, family: Proto) -> Flow {
        self.watchdog.enter("tcp_state_machine")?;
        let state = self.sockets[idx].as_ref().expect("live socket").state;
        let rst = h.flags & flags::RST != 0;
        let syn = h.flags & flags::SYN != 0;
        let ack = h.flags & flags::ACK != 0;
        let fin = h.flags & flags::FIN != 0;

        match state {
            TcpState::Listen => {
                if rst {
                    return Ok(Dropped("rst to listener"));
                }
                if ack {
                    self.reset_reply(h, family);
                    return Ok(Dropped("ack to listener"));
                }
                if !syn {
                    return Ok(Dropped("no syn"));
                }
                let mut child = Sock::new(Proto::Tcp);
                child.local_port = Some(h.dst);
                child.remote_port = Some(h.src);
                child.family = family;
                child.state = TcpState::SynRcvd;
                child.rcv_nxt = h.seq.wrapping_add(1);
                let isn = isn_for(h.dst);
                child.snd_nxt = isn.wrapping_add(1);
                self.sockets.push(Some(child));
                let c = self.sockets.len() - 1;
                self.tcp_mss_option(c, opts)?;
                self.emit(tcp_segment(family, h.dst, h.src, isn, h.seq.wrapping_add(1), flags::SYN | flags::ACK));
                Ok(Processed)
            }
            TcpState::SynSent => {
                let snd_nxt = self.sockets[idx].as_ref().expect("live socket").snd_nxt;
                if ack && h.ack != snd_nxt {
                    if !rst {
                        self.reset_reply(h, family);
                    }
                    return Ok(Dropped("unacceptable ack"));
                }
                if rst {
                    if ack {
                        self.sockets[idx] = None;
                        return Ok(Processed);
                    }
                    return Ok(Dropped("rst without ack"));
                }
                if !syn {
                    return Ok(Dropped("no syn"));
                }
                self.tcp_mss_option(idx, opts)?;
                let s = self.sockets[idx].as_mut().expect("live socket");
                s.family = family;
                s.rcv_nxt = h.seq.wrapping_add(1);
                if ack {
                    s.state = TcpState::Established;
                    self.ack_reply(idx);
                } else {
                    s.state = TcpState::SynRcvd;
                    let (local, remote, seq, rcv) = (h.dst, h.src, s.snd_nxt.wrapping_sub(1), s.rcv_nxt);
                    self.emit(tcp_segment(family, local, remote, seq, rcv, flags::SYN | flags::ACK));
                }
                Ok(Processed)
            }
            TcpState::Closed => Ok(Dropped("closed")),
            _ => self.tcp_synchronized(idx, h, state, family, (rst, syn, ack, fin)),
        }
    }

    fn tcp_synchronized(
        &mut self,
        idx: usize,
        h: &TcpHeader,
        state: TcpState,
        family: Proto,
        (rst, syn, ack, fin): (bool, bool, bool, bool),
    ) -> Flow {
        let (rcv_nxt, snd_nxt) = {
            let s = self.sockets[idx].as_mut().expect("live socket");
            s.family = family;
            (s.rcv_nxt, s.snd_nxt)
        };
        if h.seq != rcv_nxt {
            if !rst {
                self.ack_reply(idx);
            }
            return Ok(Dropped("sequence out of window"));
        }
        if rst {
            self.sockets[idx] = None;
            return Ok(Processed);
        }
        if syn {
            self.ack_reply(idx);
            return Ok(Dropped("syn in synchronized state"));
        }
        if !ack {
            return Ok(Dropped("no ack"));
        }
        if h.ack != snd_nxt {
            self.ack_reply(idx);
            return Ok(Dropped("unacceptable ack"));
        }
        let s = self.sockets[idx].as_mut().expect("live socket");
        s.state = match state {
            TcpState::SynRcvd => TcpState::Established,
            TcpState::FinWait1 => TcpState::FinWait2,
            TcpState::LastAck => {
                self.sockets[idx] = None;
                return Ok(Processed);
            }
            other => other,
        };
        let mut respond = false;
        if h.payload_len > 0 && matches!(s.state, TcpState::Established | TcpState::FinWait1 | TcpState::FinWait2) {
            s.rcv_nxt = s.rcv_nxt.wrapping_add(h.payload_len as u32);
            respond = true;
        }
        if fin {
            s.rcv_nxt = s.rcv_nxt.wrapping_add(1);
            respond = true;
            match s.state {
                TcpState::Established => s.state = TcpState::CloseWait,
                TcpState::FinWait1 | TcpState::FinWait2 => {
                    self.ack_reply(idx);
                    self.sockets[idx] = None;
                    return Ok(Processed);
                }
                _ => {}
            }
        }
        if respond {
            self.ack_reply(idx);
        }
        Ok(Processed)
    }
}
