use std::ops::Range;

use super::checksum::{ipv4_header_checksum, transport_checksum, PseudoHeader};
use super::fields::{self, FieldDescriptor, FieldKind, IPV6_EXPERIMENTAL_OPTION};
use super::{
    read_bits, write_bits, LayerSpan, Layout, OptionInstance, OptionSpan, Packet, PacketError,
    PacketTemplate, Proto,
};

const TCP_NOP: u8 = 1;
const TCP_EOL: u8 = 0;
/// IP protocol number used when no transport layer follows (RFC 3692).
const NO_TRANSPORT_V4: u32 = 253;
const NO_NEXT_HEADER_V6: u32 = 59;

struct EncodedOptions {
    bytes: Vec<u8>,
    spans: Vec<(&'static str, Range<usize>)>,
    padding: Range<usize>,
}

fn tlv_bytes(opt: &OptionInstance, out: &mut Vec<u8>) {
    out.push(opt.desc.type_code);
    if opt.desc.length_field {
        let len = opt.length_override.unwrap_or(2 + opt.value.len() as u8);
        out.push(len);
        out.extend_from_slice(&opt.value);
    }
}

fn encode_options(
    layer: Proto,
    opts: &[OptionInstance],
    next_after: u8,
) -> Result<EncodedOptions, PacketError> {
    let mut bytes = Vec::new();
    let mut spans = Vec::with_capacity(opts.len());
    for (i, opt) in opts.iter().enumerate() {
        let start = bytes.len();
        if layer == Proto::Ipv6 {
            let next = opts.get(i + 1).map(|o| o.desc.type_code).unwrap_or(next_after);
            bytes.push(next);
            bytes.push(opt.length_override.unwrap_or(0));
            bytes.push(IPV6_EXPERIMENTAL_OPTION);
            bytes.push(opt.value.len() as u8);
            bytes.extend_from_slice(&opt.value);
        } else {
            tlv_bytes(opt, &mut bytes);
        }
        spans.push((opt.desc.name, start..bytes.len()));
    }
    let unpadded = bytes.len();
    match layer {
        Proto::Tcp => {
            let pad = (4 - unpadded % 4) % 4;
            if pad > 0 {
                bytes.extend(std::iter::repeat(TCP_NOP).take(pad - 1));
                bytes.push(TCP_EOL);
            }
        }
        Proto::Ipv4 => bytes.resize(unpadded + (4 - unpadded % 4) % 4, 0),
        _ => {}
    }
    let max = fields::max_option_bytes(layer);
    if bytes.len() > max {
        return Err(PacketError::OptionSpaceExhausted { layer, needed: bytes.len(), max });
    }
    let padding = unpadded..bytes.len();
    Ok(EncodedOptions { bytes, spans, padding })
}

fn put(bytes: &mut [u8], start: usize, d: &FieldDescriptor, v: u32) {
    write_bits(&mut bytes[start..], d.bit_offset as usize, d.bit_width, v);
}

fn resolve(t: &PacketTemplate, d: &FieldDescriptor, computed: Option<u32>) -> u32 {
    t.explicit(d.layer, d.name).or(computed).unwrap_or(d.default)
}

fn checked_len(layer: Proto, field: &'static str, value: usize, max: usize) -> Result<u32, PacketError> {
    if value > max {
        Err(PacketError::UnrepresentableLength { layer, field, value })
    } else {
        Ok(value as u32)
    }
}

/// Builds the pseudo-header for the transport layer of an encoded frame,
/// reading addresses from the (possibly mutated) network header bytes.
pub fn pseudo_header(packet: &Packet) -> Option<PseudoHeader> {
    let layout = packet.layout();
    let transport = layout.layers.get(2)?;
    let protocol = transport.proto.ip_number()?;
    let net = layout.layers.get(1)?;
    let b = packet.bytes();
    match net.proto {
        Proto::Ipv4 if b.len() >= net.start + 20 => {
            let h = &b[net.start..];
            Some(PseudoHeader::V4 {
                src: h[12..16].try_into().ok()?,
                dst: h[16..20].try_into().ok()?,
                protocol,
            })
        }
        Proto::Ipv6 if b.len() >= net.start + 40 => {
            let h = &b[net.start..];
            Some(PseudoHeader::V6 {
                src: h[8..24].try_into().ok()?,
                dst: h[24..40].try_into().ok()?,
                next_header: protocol,
            })
        }
        _ => None,
    }
}

/// Encodes a template into a frame. Derived fields (lengths, offsets,
/// protocol numbers) are computed from the actual layout unless set
/// explicitly; checksums are computed last, again unless set explicitly.
pub fn encode(t: &PacketTemplate) -> Result<Packet, PacketError> {
    let net = t.network();
    let transport = t.transport();
    let next_after_net = match (net, transport) {
        (_, Some(tp)) => tp.ip_number().unwrap_or(0),
        (Proto::Ipv6, None) => NO_NEXT_HEADER_V6 as u8,
        _ => NO_TRANSPORT_V4 as u8,
    };
    let net_opts = encode_options(net, t.options(net), next_after_net)?;
    let tp_opts = match transport {
        Some(tp) => Some(encode_options(tp, t.options(tp), 0)?),
        None => None,
    };

    let eth_len = fields::fixed_header_len(Proto::Ethernet);
    let net_len = fields::fixed_header_len(net) + net_opts.bytes.len();
    let tp_len = transport
        .map(|tp| fields::fixed_header_len(tp) + tp_opts.as_ref().map_or(0, |o| o.bytes.len()))
        .unwrap_or(0);
    let payload_len = t.payload().len();
    let total = eth_len + net_len + tp_len + payload_len;

    let mut bytes = vec![0u8; total];
    let net_start = eth_len;
    let tp_start = net_start + net_len;
    let payload_start = tp_start + tp_len;

    let mut layers = Vec::with_capacity(3);
    layers.push(LayerSpan { proto: Proto::Ethernet, start: 0, header_len: eth_len, options: vec![], padding: eth_len..eth_len });

    for d in fields::fields(Proto::Ethernet) {
        let computed = (d.name == "ethertype").then_some(if net == Proto::Ipv4 { 0x0800 } else { 0x86dd });
        put(&mut bytes, 0, d, resolve(t, d, computed));
    }

    for d in fields::fields(net) {
        let computed = match (net, d.name) {
            (Proto::Ipv4, "ihl") => Some((net_len / 4) as u32),
            (Proto::Ipv4, "total_length") => {
                Some(checked_len(net, d.name, net_len + tp_len + payload_len, 0xffff)?)
            }
            (Proto::Ipv4, "protocol") => Some(next_after_net as u32),
            (Proto::Ipv6, "payload_length") => {
                Some(checked_len(net, d.name, net_len - 40 + tp_len + payload_len, 0xffff)?)
            }
            (Proto::Ipv6, "next_header") => Some(
                t.options(net).first().map(|o| o.desc.type_code).unwrap_or(next_after_net) as u32,
            ),
            _ => None,
        };
        put(&mut bytes, net_start, d, resolve(t, d, computed));
    }
    let fixed = fields::fixed_header_len(net);
    bytes[net_start + fixed..net_start + net_len].copy_from_slice(&net_opts.bytes);
    layers.push(LayerSpan {
        proto: net,
        start: net_start,
        header_len: net_len,
        options: shift_spans(&net_opts.spans, net_start + fixed),
        padding: shift(&net_opts.padding, net_start + fixed),
    });

    if let (Some(tp), Some(opts)) = (transport, tp_opts.as_ref()) {
        for d in fields::fields(tp) {
            let computed = match (tp, d.name) {
                (Proto::Tcp, "data_offset") => Some((tp_len / 4) as u32),
                (Proto::Udp, "length") => Some(checked_len(tp, d.name, tp_len + payload_len, 0xffff)?),
                _ => None,
            };
            put(&mut bytes, tp_start, d, resolve(t, d, computed));
        }
        let fixed = fields::fixed_header_len(tp);
        bytes[tp_start + fixed..tp_start + tp_len].copy_from_slice(&opts.bytes);
        layers.push(LayerSpan {
            proto: tp,
            start: tp_start,
            header_len: tp_len,
            options: shift_spans(&opts.spans, tp_start + fixed),
            padding: shift(&opts.padding, tp_start + fixed),
        });
    }
    bytes[payload_start..].copy_from_slice(t.payload());

    let layout = Layout { layers, payload: payload_start..total };
    let mut packet = Packet::from_parts(bytes, layout);

    if let Some(tp) = transport {
        let d = checksum_field(tp);
        match t.explicit(tp, d.name) {
            Some(v) => packet.set_field_in_place(d, v)?,
            None => {
                let pseudo = pseudo_header(&packet).expect("transport frames have a network layer");
                packet.set_field_in_place(d, 0)?;
                let sum = transport_checksum(&pseudo, &packet.bytes()[tp_start..]);
                packet.set_field_in_place(d, sum as u32)?;
            }
        }
    }
    if net == Proto::Ipv4 && t.explicit(net, "checksum").is_none() {
        let d = checksum_field(net);
        let sum = ipv4_header_checksum(&packet.bytes()[net_start..net_start + net_len])
            .expect("IPv4 header is a multiple of 4 and at least 20 bytes");
        packet.set_field_in_place(d, sum as u32)?;
    }
    Ok(packet)
}

pub(crate) fn checksum_field(layer: Proto) -> &'static FieldDescriptor {
    fields::fields(layer)
        .iter()
        .find(|d| d.kind == FieldKind::Checksum)
        .expect("layer has a checksum field")
}

fn shift(r: &Range<usize>, by: usize) -> Range<usize> {
    r.start + by..r.end + by
}

fn shift_spans(spans: &[(&'static str, Range<usize>)], by: usize) -> Vec<OptionSpan> {
    spans.iter().map(|(name, r)| OptionSpan { name, range: shift(r, by) }).collect()
}

fn malformed(msg: impl Into<String>) -> PacketError {
    PacketError::Malformed(msg.into())
}

fn set_all(t: &mut PacketTemplate, layer: Proto, header: &[u8]) -> Result<(), PacketError> {
    for d in fields::fields(layer) {
        t.set(layer, d.name, read_bits(header, d.bit_offset as usize, d.bit_width))?;
    }
    Ok(())
}

fn decode_tlv_options(layer: Proto, region: &[u8]) -> Result<Vec<OptionInstance>, PacketError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < region.len() {
        let kind = region[i];
        if kind == 0 {
            if region[i + 1..].iter().any(|&b| b != 0) {
                return Err(malformed(format!("{layer}: data after end-of-options")));
            }
            if layer == Proto::Tcp {
                strip_tcp_padding(&mut out, i, region.len());
            }
            return Ok(out);
        }
        let desc = fields::options(layer)
            .iter()
            .find(|d| d.type_code == kind)
            .ok_or_else(|| malformed(format!("{layer}: unknown option type {kind}")))?;
        if !desc.length_field {
            out.push(OptionInstance::new(desc));
            i += 1;
            continue;
        }
        let len = *region.get(i + 1).ok_or_else(|| malformed("option length missing"))? as usize;
        if len != 2 + desc.value_width as usize || i + len > region.len() {
            return Err(malformed(format!("{layer}.{}: bad option length {len}", desc.name)));
        }
        out.push(OptionInstance::with_value(desc, &region[i + 2..i + len])?);
        i += len;
    }
    Ok(out)
}

/// Removes encoder padding (NOPs followed by a final EOL). `eol_pos` is the
/// EOL's offset in a region of `total` bytes.
fn strip_tcp_padding(opts: &mut Vec<OptionInstance>, eol_pos: usize, total: usize) {
    let eol = fields::option(Proto::Tcp, "eol").expect("eol descriptor");
    if eol_pos + 1 != total {
        opts.push(OptionInstance::new(eol));
        return;
    }
    let trailing_nops = opts.iter().rev().take_while(|o| o.desc.type_code == TCP_NOP).count();
    for r in (0..=trailing_nops.min(2)).rev() {
        let unpadded = eol_pos - r;
        if (4 - unpadded % 4) % 4 == r + 1 {
            opts.truncate(opts.len() - r);
            return;
        }
    }
    opts.push(OptionInstance::new(eol));
}

fn decode_ipv4_options(region: &[u8]) -> Result<Vec<OptionInstance>, PacketError> {
    decode_tlv_options(Proto::Ipv4, region)
}

/// Decodes a frame into a template in which every field is explicit.
/// Padding added by [`encode`] is removed, so `encode(decode(b)) == b` for
/// frames this crate produced.
pub fn decode(bytes: &[u8]) -> Result<PacketTemplate, PacketError> {
    if bytes.len() < 14 {
        return Err(malformed("short ethernet header"));
    }
    let net = match u16::from_be_bytes([bytes[12], bytes[13]]) {
        0x0800 => Proto::Ipv4,
        0x86dd => Proto::Ipv6,
        other => return Err(malformed(format!("unsupported ethertype {other:#06x}"))),
    };
    let rest = &bytes[14..];
    let mut opts_net = Vec::new();
    let (net_len, next) = match net {
        Proto::Ipv4 => {
            if rest.len() < 20 {
                return Err(malformed("short IPv4 header"));
            }
            let ihl = (rest[0] & 0x0f) as usize * 4;
            if ihl < 20 || ihl > rest.len() {
                return Err(malformed(format!("bad IHL {ihl}")));
            }
            opts_net = decode_ipv4_options(&rest[20..ihl])?;
            (ihl, rest[9])
        }
        _ => {
            if rest.len() < 40 {
                return Err(malformed("short IPv6 header"));
            }
            let mut next = rest[6];
            let mut off = 40;
            while next == 0 || next == 60 {
                let ext = rest.get(off..off + 8).ok_or_else(|| malformed("short extension header"))?;
                if ext[1] != 0 || ext[2] != IPV6_EXPERIMENTAL_OPTION || ext[3] != 4 {
                    return Err(malformed("unsupported extension header contents"));
                }
                let desc = fields::options(Proto::Ipv6)
                    .iter()
                    .find(|d| d.type_code == next)
                    .expect("0 and 60 are modeled");
                opts_net.push(OptionInstance::with_value(desc, &ext[4..8])?);
                next = ext[0];
                off += 8;
            }
            (off, next)
        }
    };
    let transport = match next {
        6 => Some(Proto::Tcp),
        17 => Some(Proto::Udp),
        _ => None,
    };
    let mut t = PacketTemplate::of(net, transport)?;
    set_all(&mut t, Proto::Ethernet, bytes)?;
    set_all(&mut t, net, rest)?;
    for o in opts_net {
        t.push_option(o)?;
    }
    let seg = &rest[net_len..];
    let payload_start = match transport {
        Some(Proto::Tcp) => {
            if seg.len() < 20 {
                return Err(malformed("short TCP header"));
            }
            let doff = (seg[12] >> 4) as usize * 4;
            if doff < 20 || doff > seg.len() {
                return Err(malformed(format!("bad data offset {doff}")));
            }
            set_all(&mut t, Proto::Tcp, seg)?;
            for o in decode_tlv_options(Proto::Tcp, &seg[20..doff])? {
                t.push_option(o)?;
            }
            doff
        }
        Some(_) => {
            if seg.len() < 8 {
                return Err(malformed("short UDP header"));
            }
            set_all(&mut t, Proto::Udp, seg)?;
            8
        }
        None => 0,
    };
    t.set_payload(seg[payload_start..].to_vec());
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::super::checksum::{verify_ipv4_header, verify_transport};
    use super::*;

    #[test]
    fn minimal_ipv4_tcp() {
        let p = encode(&PacketTemplate::ipv4_tcp()).unwrap();
        assert_eq!(p.len(), 54);
        assert_eq!(p.field(Proto::Ipv4, "ihl").unwrap(), 5);
        assert_eq!(p.field(Proto::Tcp, "data_offset").unwrap(), 5);
        assert_eq!(p.field(Proto::Ipv4, "total_length").unwrap(), 40);
        assert_eq!(p.field(Proto::Ipv4, "protocol").unwrap(), 6);
        assert!(verify_ipv4_header(&p.bytes()[14..34]));
        assert!(verify_transport(&pseudo_header(&p).unwrap(), &p.bytes()[34..]));
    }

    #[test]
    fn udp_length_covers_payload() {
        let mut t = PacketTemplate::ipv4_udp();
        t.set_payload(vec![0xab; 8]);
        let p = encode(&t).unwrap();
        assert_eq!(p.field(Proto::Udp, "length").unwrap(), 16);
        assert_eq!(p.len(), 14 + 20 + 16);
    }

    #[test]
    fn reference_ipv4_header_checksum() {
        // 45 00 00 73 00 00 40 00 40 11 ?? ?? c0 a8 00 01 c0 a8 00 c7
        let mut t = PacketTemplate::of(Proto::Ipv4, Some(Proto::Udp)).unwrap();
        t.set(Proto::Ipv4, "total_length", 0x73).unwrap();
        t.set(Proto::Ipv4, "identification", 0).unwrap();
        t.set(Proto::Ipv4, "df", 1).unwrap();
        t.set(Proto::Ipv4, "ttl", 0x40).unwrap();
        t.set(Proto::Ipv4, "protocol", 0x11).unwrap();
        t.set(Proto::Ipv4, "src", 0xc0a8_0001).unwrap();
        t.set(Proto::Ipv4, "dst", 0xc0a8_00c7).unwrap();
        let p = encode(&t).unwrap();
        assert_eq!(
            &p.bytes()[14..34],
            &[
                0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0xb8, 0x61, 0xc0, 0xa8,
                0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7
            ]
        );
    }

    #[test]
    fn explicit_length_is_verbatim() {
        let t = PacketTemplate::ipv4_tcp().with(Proto::Tcp, "data_offset", 15).unwrap();
        let p = encode(&t).unwrap();
        assert_eq!(p.len(), 54);
        assert_eq!(p.bytes()[34 + 12] >> 4, 0xf);
        assert!(verify_transport(&pseudo_header(&p).unwrap(), &p.bytes()[34..]));
    }

    #[test]
    fn tcp_options_padded_nop_then_eol() {
        let mut t = PacketTemplate::ipv4_tcp();
        t.push_option(OptionInstance::new(fields::option(Proto::Tcp, "wscale").unwrap())).unwrap();
        let p = encode(&t).unwrap();
        assert_eq!(p.field(Proto::Tcp, "data_offset").unwrap(), 6);
        assert_eq!(&p.bytes()[54..58], &[3, 3, 7, 0]);

        let mut t = PacketTemplate::ipv4_tcp();
        t.push_option(OptionInstance::new(fields::option(Proto::Tcp, "timestamps").unwrap())).unwrap();
        let p = encode(&t).unwrap();
        assert_eq!(p.field(Proto::Tcp, "data_offset").unwrap(), 8);
        assert_eq!(&p.bytes()[64..66], &[1, 0]);
        assert_eq!(p.layout().layer(Proto::Tcp).unwrap().padding, 64..66);
    }

    #[test]
    fn option_space_exhausted() {
        let ts = fields::option(Proto::Tcp, "timestamps").unwrap();
        let mut t = PacketTemplate::ipv4_tcp();
        for _ in 0..4 {
            t.push_option(OptionInstance::new(ts)).unwrap();
        }
        assert!(encode(&t).is_ok(), "exactly 40 option bytes fit");
        t.push_option(OptionInstance::new(ts)).unwrap();
        assert!(matches!(encode(&t), Err(PacketError::OptionSpaceExhausted { .. })));
    }

    #[test]
    fn ipv6_extension_chain() {
        let mut t = PacketTemplate::ipv6_udp();
        t.push_option(OptionInstance::new(fields::option(Proto::Ipv6, "hbh").unwrap())).unwrap();
        t.push_option(OptionInstance::new(fields::option(Proto::Ipv6, "dest").unwrap())).unwrap();
        let p = encode(&t).unwrap();
        assert_eq!(p.len(), 14 + 40 + 16 + 8);
        assert_eq!(p.field(Proto::Ipv6, "next_header").unwrap(), 0);
        assert_eq!(p.field(Proto::Ipv6, "payload_length").unwrap(), 24);
        assert_eq!(p.bytes()[54], 60);
        assert_eq!(p.bytes()[62], 17);
        assert!(verify_transport(&pseudo_header(&p).unwrap(), &p.bytes()[70..]));
        let back = decode(p.bytes()).unwrap();
        assert_eq!(encode(&back).unwrap().bytes(), p.bytes());
    }

    #[test]
    fn decode_roundtrip_with_options() {
        let mut t = PacketTemplate::ipv4_tcp();
        t.push_option(OptionInstance::new(fields::option(Proto::Tcp, "mss").unwrap())).unwrap();
        t.push_option(OptionInstance::new(fields::option(Proto::Tcp, "wscale").unwrap())).unwrap();
        t.push_option(OptionInstance::new(fields::option(Proto::Ipv4, "router_alert").unwrap())).unwrap();
        t.set_payload(b"hello".to_vec());
        let p = encode(&t).unwrap();
        let d = decode(p.bytes()).unwrap();
        assert_eq!(d.options(Proto::Tcp), t.options(Proto::Tcp));
        assert_eq!(d.options(Proto::Ipv4), t.options(Proto::Ipv4));
        assert_eq!(d.payload(), b"hello");
        assert_eq!(encode(&d).unwrap().bytes(), p.bytes());
    }

    #[test]
    fn set_field_touches_one_span() {
        let p = encode(&PacketTemplate::ipv4_tcp()).unwrap();
        let ttl = fields::field(Proto::Ipv4, "ttl").unwrap();
        let q = p.set_field(ttl, 0).unwrap();
        let diff: Vec<usize> = (0..p.len()).filter(|&i| p.bytes()[i] != q.bytes()[i]).collect();
        assert_eq!(diff, vec![14 + 8]);
        assert_eq!(q.get_field(ttl).unwrap(), 0);

        let doff = fields::field(Proto::Tcp, "data_offset").unwrap();
        let q = p.set_field(doff, 15).unwrap();
        assert_eq!(q.bytes()[34 + 12] & 0xf0, 0xf0);
        assert!(matches!(p.set_field(doff, 16), Err(PacketError::ValueOverflow { .. })));
        let udp_len = fields::field(Proto::Udp, "length").unwrap();
        assert!(matches!(p.get_field(udp_len), Err(PacketError::FieldAbsent { .. })));
    }
}
