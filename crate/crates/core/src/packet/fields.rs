//! Static field and option tables for the supported protocols.
//!
//! Bit offsets are relative to the first bit of the layer's header and all
//! multi-bit fields are big-endian on the wire.

use super::Proto;

/// How the encoder and the generator treat a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Plain,
    LengthLike,
    OffsetLike,
    Checksum,
    Reserved,
}

/// A fixed-position header field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldDescriptor {
    pub name: &'static str,
    pub layer: Proto,
    pub bit_offset: u16,
    pub bit_width: u8,
    pub default: u32,
    pub kind: FieldKind,
}

impl FieldDescriptor {
    pub const fn max_value(&self) -> u32 {
        if self.bit_width >= 32 {
            u32::MAX
        } else {
            (1u32 << self.bit_width) - 1
        }
    }

    pub const fn fits(&self, value: u32) -> bool {
        value <= self.max_value()
    }

    /// Number of bytes (from the layer start) needed to hold this field.
    pub const fn byte_end(&self) -> usize {
        (self.bit_offset as usize + self.bit_width as usize).div_ceil(8)
    }
}

/// An insertable header option (TCP/IPv4 TLV option or IPv6 extension header).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OptionDescriptor {
    pub name: &'static str,
    pub layer: Proto,
    pub type_code: u8,
    pub length_field: bool,
    pub value_width: u8,
    pub default_value: &'static [u8],
}

impl OptionDescriptor {
    /// Encoded size of one instance, before any layer padding.
    pub fn encoded_len(&self) -> usize {
        match self.layer {
            // next header, hdr ext len, option type, option length, value
            Proto::Ipv6 => 4 + self.value_width as usize,
            _ if self.length_field => 2 + self.value_width as usize,
            _ => 1,
        }
    }
}

const fn f(
    name: &'static str,
    layer: Proto,
    bit_offset: u16,
    bit_width: u8,
    default: u32,
    kind: FieldKind,
) -> FieldDescriptor {
    FieldDescriptor { name, layer, bit_offset, bit_width, default, kind }
}

use FieldKind::*;

/// Target (system under test) and tester link/network addresses used as
/// template defaults. Templates describe inbound traffic: tester -> target.
pub mod addr {
    pub const TARGET_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
    pub const TESTER_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];
    pub const TARGET_V4: [u8; 4] = [10, 0, 0, 1];
    pub const TESTER_V4: [u8; 4] = [10, 0, 0, 2];
    pub const TARGET_V6: [u8; 16] = [0xfd, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
    pub const TESTER_V6: [u8; 16] = [0xfd, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2];
    pub const TARGET_PORT: u16 = 7777;
    pub const TESTER_PORT: u16 = 40000;
}

static ETHERNET: [FieldDescriptor; 5] = [
    f("dst_hi", Proto::Ethernet, 0, 16, 0x0200, Plain),
    f("dst_lo", Proto::Ethernet, 16, 32, 0x0000_0001, Plain),
    f("src_hi", Proto::Ethernet, 48, 16, 0x0200, Plain),
    f("src_lo", Proto::Ethernet, 64, 32, 0x0000_0002, Plain),
    f("ethertype", Proto::Ethernet, 96, 16, 0x0800, Plain),
];

static IPV4: [FieldDescriptor; 15] = [
    f("version", Proto::Ipv4, 0, 4, 4, Plain),
    f("ihl", Proto::Ipv4, 4, 4, 5, LengthLike),
    f("dscp", Proto::Ipv4, 8, 6, 0, Plain),
    f("ecn", Proto::Ipv4, 14, 2, 0, Plain),
    f("total_length", Proto::Ipv4, 16, 16, 20, LengthLike),
    f("identification", Proto::Ipv4, 32, 16, 1, Plain),
    f("flag_reserved", Proto::Ipv4, 48, 1, 0, Reserved),
    f("df", Proto::Ipv4, 49, 1, 1, Plain),
    f("mf", Proto::Ipv4, 50, 1, 0, Plain),
    f("fragment_offset", Proto::Ipv4, 51, 13, 0, OffsetLike),
    f("ttl", Proto::Ipv4, 64, 8, 64, Plain),
    f("protocol", Proto::Ipv4, 72, 8, 253, Plain),
    f("checksum", Proto::Ipv4, 80, 16, 0, Checksum),
    f("src", Proto::Ipv4, 96, 32, 0x0a00_0002, Plain),
    f("dst", Proto::Ipv4, 128, 32, 0x0a00_0001, Plain),
];

static IPV6: [FieldDescriptor; 14] = [
    f("version", Proto::Ipv6, 0, 4, 6, Plain),
    f("traffic_class", Proto::Ipv6, 4, 8, 0, Plain),
    f("flow_label", Proto::Ipv6, 12, 20, 0, Plain),
    f("payload_length", Proto::Ipv6, 32, 16, 0, LengthLike),
    f("next_header", Proto::Ipv6, 48, 8, 59, Plain),
    f("hop_limit", Proto::Ipv6, 56, 8, 64, Plain),
    f("src_0", Proto::Ipv6, 64, 32, 0xfd00_0000, Plain),
    f("src_1", Proto::Ipv6, 96, 32, 0, Plain),
    f("src_2", Proto::Ipv6, 128, 32, 0, Plain),
    f("src_3", Proto::Ipv6, 160, 32, 2, Plain),
    f("dst_0", Proto::Ipv6, 192, 32, 0xfd00_0000, Plain),
    f("dst_1", Proto::Ipv6, 224, 32, 0, Plain),
    f("dst_2", Proto::Ipv6, 256, 32, 0, Plain),
    f("dst_3", Proto::Ipv6, 288, 32, 1, Plain),
];

static TCP: [FieldDescriptor; 18] = [
    f("src_port", Proto::Tcp, 0, 16, addr::TESTER_PORT as u32, Plain),
    f("dst_port", Proto::Tcp, 16, 16, addr::TARGET_PORT as u32, Plain),
    f("seq", Proto::Tcp, 32, 32, 1000, Plain),
    f("ack", Proto::Tcp, 64, 32, 0, Plain),
    f("data_offset", Proto::Tcp, 96, 4, 5, LengthLike),
    f("reserved", Proto::Tcp, 100, 3, 0, Reserved),
    f("flag_ns", Proto::Tcp, 103, 1, 0, Plain),
    f("flag_cwr", Proto::Tcp, 104, 1, 0, Plain),
    f("flag_ece", Proto::Tcp, 105, 1, 0, Plain),
    f("flag_urg", Proto::Tcp, 106, 1, 0, Plain),
    f("flag_ack", Proto::Tcp, 107, 1, 1, Plain),
    f("flag_psh", Proto::Tcp, 108, 1, 0, Plain),
    f("flag_rst", Proto::Tcp, 109, 1, 0, Plain),
    f("flag_syn", Proto::Tcp, 110, 1, 0, Plain),
    f("flag_fin", Proto::Tcp, 111, 1, 0, Plain),
    f("window", Proto::Tcp, 112, 16, 8192, Plain),
    f("checksum", Proto::Tcp, 128, 16, 0, Checksum),
    f("urgent_ptr", Proto::Tcp, 144, 16, 0, OffsetLike),
];

static UDP: [FieldDescriptor; 4] = [
    f("src_port", Proto::Udp, 0, 16, addr::TESTER_PORT as u32, Plain),
    f("dst_port", Proto::Udp, 16, 16, addr::TARGET_PORT as u32, Plain),
    f("length", Proto::Udp, 32, 16, 8, LengthLike),
    f("checksum", Proto::Udp, 48, 16, 0, Checksum),
];

const fn o(
    name: &'static str,
    layer: Proto,
    type_code: u8,
    length_field: bool,
    value_width: u8,
    default_value: &'static [u8],
) -> OptionDescriptor {
    OptionDescriptor { name, layer, type_code, length_field, value_width, default_value }
}

static TCP_OPTIONS: [OptionDescriptor; 6] = [
    o("eol", Proto::Tcp, 0, false, 0, &[]),
    o("nop", Proto::Tcp, 1, false, 0, &[]),
    o("mss", Proto::Tcp, 2, true, 2, &[0x05, 0xb4]),
    o("wscale", Proto::Tcp, 3, true, 1, &[0x07]),
    o("sack_perm", Proto::Tcp, 4, true, 0, &[]),
    o("timestamps", Proto::Tcp, 8, true, 8, &[0, 0, 0, 1, 0, 0, 0, 0]),
];

static IPV4_OPTIONS: [OptionDescriptor; 3] = [
    o("eol", Proto::Ipv4, 0, false, 0, &[]),
    o("nop", Proto::Ipv4, 1, false, 0, &[]),
    o("router_alert", Proto::Ipv4, 0x94, true, 2, &[0, 0]),
];

/// IPv6 extension headers. `type_code` is the next-header value announcing
/// the header; the value is carried in a single experimental TLV option.
static IPV6_OPTIONS: [OptionDescriptor; 2] = [
    o("hbh", Proto::Ipv6, 0, true, 4, &[0, 0, 0, 0]),
    o("dest", Proto::Ipv6, 60, true, 4, &[0, 0, 0, 0]),
];

/// TLV option type used inside IPv6 extension headers (RFC 3692 experimental,
/// "skip if unrecognized").
pub const IPV6_EXPERIMENTAL_OPTION: u8 = 0x1e;

/// All fixed-header fields of a layer, in wire order.
pub fn fields(proto: Proto) -> &'static [FieldDescriptor] {
    match proto {
        Proto::Ethernet => &ETHERNET,
        Proto::Ipv4 => &IPV4,
        Proto::Ipv6 => &IPV6,
        Proto::Tcp => &TCP,
        Proto::Udp => &UDP,
        Proto::Flat => &[],
    }
}

pub fn field(proto: Proto, name: &str) -> Option<&'static FieldDescriptor> {
    fields(proto).iter().find(|d| d.name == name)
}

pub fn options(proto: Proto) -> &'static [OptionDescriptor] {
    match proto {
        Proto::Ipv4 => &IPV4_OPTIONS,
        Proto::Ipv6 => &IPV6_OPTIONS,
        Proto::Tcp => &TCP_OPTIONS,
        _ => &[],
    }
}

pub fn option(proto: Proto, name: &str) -> Option<&'static OptionDescriptor> {
    options(proto).iter().find(|d| d.name == name)
}

/// Size of the fixed (option-free) header.
pub const fn fixed_header_len(proto: Proto) -> usize {
    match proto {
        Proto::Ethernet => 14,
        Proto::Ipv4 => 20,
        Proto::Ipv6 => 40,
        Proto::Tcp => 20,
        Proto::Udp => 8,
        Proto::Flat => 0,
    }
}

/// Largest header the layer can describe, options included.
pub const fn max_header_len(proto: Proto) -> usize {
    match proto {
        Proto::Ipv4 | Proto::Tcp => 60,
        Proto::Ipv6 => 40 + max_option_bytes(Proto::Ipv6),
        p => fixed_header_len(p),
    }
}

/// Maximum option bytes (after padding) a layer can carry.
pub const fn max_option_bytes(proto: Proto) -> usize {
    match proto {
        Proto::Ipv4 | Proto::Tcp => 40,
        Proto::Ipv6 => 2048,
        _ => 0,
    }
}
