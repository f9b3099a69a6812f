//! Byte-exact packet model: templates, encoding/decoding, field access and
//! checksums for Ethernet, IPv4, IPv6, TCP and UDP.

pub mod checksum;
mod codec;
pub mod fields;
pub mod hexdump;
pub mod pcap;
pub mod segment;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode, encode, pseudo_header};
pub use fields::{FieldDescriptor, FieldKind, OptionDescriptor};

/// Protocol (layer) identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Ethernet,
    Ipv4,
    Ipv6,
    Tcp,
    Udp,
    /// A flat header of independent fields. Never part of a frame; used by
    /// synthetic generator inputs.
    Flat,
}

impl Proto {
    pub const fn name(self) -> &'static str {
        match self {
            Proto::Ethernet => "eth",
            Proto::Ipv4 => "ipv4",
            Proto::Ipv6 => "ipv6",
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
            Proto::Flat => "flat",
        }
    }

    pub const fn is_network(self) -> bool {
        matches!(self, Proto::Ipv4 | Proto::Ipv6)
    }

    pub const fn is_transport(self) -> bool {
        matches!(self, Proto::Tcp | Proto::Udp)
    }

    /// IP protocol / next-header number of a transport layer.
    pub const fn ip_number(self) -> Option<u8> {
        match self {
            Proto::Tcp => Some(6),
            Proto::Udp => Some(17),
            _ => None,
        }
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Proto {
    type Err = PacketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "eth" | "ethernet" => Proto::Ethernet,
            "ipv4" | "ip4" => Proto::Ipv4,
            "ipv6" | "ip6" => Proto::Ipv6,
            "tcp" => Proto::Tcp,
            "udp" => Proto::Udp,
            "flat" => Proto::Flat,
            _ => return Err(PacketError::UnknownLayer(s.to_string())),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("invalid layer stack: {0}")]
    LayerMismatch(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("{layer}.{field} cannot represent length {value}")]
    UnrepresentableLength { layer: Proto, field: &'static str, value: usize },
    #[error("{layer} options need {needed} bytes but only {max} fit")]
    OptionSpaceExhausted { layer: Proto, needed: usize, max: usize },
    #[error("no field `{1}` in {0}")]
    UnknownField(Proto, String),
    #[error("no option `{1}` in {0}")]
    UnknownOption(Proto, String),
    #[error("{layer}.{field} is not present in the packet")]
    FieldAbsent { layer: Proto, field: &'static str },
    #[error("value {value:#x} does not fit {layer}.{field}")]
    ValueOverflow { layer: Proto, field: &'static str, value: u64 },
    #[error("option {layer}.{option} takes {expected} value bytes, got {got}")]
    OptionValueWidth { layer: Proto, option: &'static str, expected: usize, got: usize },
    #[error("malformed packet: {0}")]
    Malformed(String),
}

/// Identifies one field of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldKey {
    pub layer: Proto,
    pub name: &'static str,
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.name)
    }
}

/// One option as placed in a template.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OptionInstance {
    pub desc: &'static OptionDescriptor,
    pub value: Vec<u8>,
    /// Replaces the computed length byte (TLV length or IPv6 hdr ext len).
    pub length_override: Option<u8>,
}

impl OptionInstance {
    pub fn new(desc: &'static OptionDescriptor) -> Self {
        OptionInstance { desc, value: desc.default_value.to_vec(), length_override: None }
    }

    pub fn with_value(desc: &'static OptionDescriptor, value: &[u8]) -> Result<Self, PacketError> {
        if value.len() != desc.value_width as usize {
            return Err(PacketError::OptionValueWidth {
                layer: desc.layer,
                option: desc.name,
                expected: desc.value_width as usize,
                got: value.len(),
            });
        }
        Ok(OptionInstance { desc, value: value.to_vec(), length_override: None })
    }

    pub fn with_length(desc: &'static OptionDescriptor, length: u8) -> Self {
        OptionInstance { length_override: Some(length), ..Self::new(desc) }
    }

    pub fn encoded_len(&self) -> usize {
        self.desc.encoded_len()
    }
}

/// A layered description of a valid baseline packet. Fields without an
/// explicit value take their descriptor default or, for derived fields
/// (lengths, offsets, protocol numbers, checksums), the encoder's computed
/// value. Explicit values are always honored verbatim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketTemplate {
    layers: Vec<Proto>,
    field_values: BTreeMap<FieldKey, u32>,
    options: BTreeMap<Proto, Vec<OptionInstance>>,
    payload: Vec<u8>,
}

impl PacketTemplate {
    /// Validates the layer order: Ethernet, then exactly one of IPv4/IPv6,
    /// then at most one of TCP/UDP.
    pub fn new(layers: Vec<Proto>) -> Result<Self, PacketError> {
        match layers.as_slice() {
            [Proto::Ethernet, n] if n.is_network() => {}
            [Proto::Ethernet, n, t] if n.is_network() && t.is_transport() => {}
            other => {
                let names: Vec<_> = other.iter().map(|p| p.name()).collect();
                return Err(PacketError::LayerMismatch(names.join("/")));
            }
        }
        Ok(PacketTemplate {
            layers,
            field_values: BTreeMap::new(),
            options: BTreeMap::new(),
            payload: Vec::new(),
        })
    }

    pub fn of(network: Proto, transport: Option<Proto>) -> Result<Self, PacketError> {
        let mut layers = vec![Proto::Ethernet, network];
        layers.extend(transport);
        Self::new(layers)
    }

    pub fn ipv4_tcp() -> Self {
        Self::of(Proto::Ipv4, Some(Proto::Tcp)).expect("valid stack")
    }

    pub fn ipv4_udp() -> Self {
        Self::of(Proto::Ipv4, Some(Proto::Udp)).expect("valid stack")
    }

    pub fn ipv6_tcp() -> Self {
        Self::of(Proto::Ipv6, Some(Proto::Tcp)).expect("valid stack")
    }

    pub fn ipv6_udp() -> Self {
        Self::of(Proto::Ipv6, Some(Proto::Udp)).expect("valid stack")
    }

    pub fn layers(&self) -> &[Proto] {
        &self.layers
    }

    pub fn has_layer(&self, proto: Proto) -> bool {
        self.layers.contains(&proto)
    }

    pub fn network(&self) -> Proto {
        self.layers[1]
    }

    pub fn transport(&self) -> Option<Proto> {
        self.layers.get(2).copied()
    }

    /// Short label such as `ipv4/tcp`.
    pub fn label(&self) -> String {
        self.layers[1..].iter().map(|p| p.name()).collect::<Vec<_>>().join("/")
    }

    fn descriptor(&self, layer: Proto, name: &str) -> Result<&'static FieldDescriptor, PacketError> {
        if !self.has_layer(layer) {
            return Err(PacketError::UnknownField(layer, name.to_string()));
        }
        fields::field(layer, name).ok_or_else(|| PacketError::UnknownField(layer, name.to_string()))
    }

    /// Sets an explicit field value.
    pub fn set(&mut self, layer: Proto, name: &str, value: u32) -> Result<&mut Self, PacketError> {
        let desc = self.descriptor(layer, name)?;
        if !desc.fits(value) {
            return Err(PacketError::ValueOverflow { layer, field: desc.name, value: value as u64 });
        }
        self.field_values.insert(FieldKey { layer, name: desc.name }, value);
        Ok(self)
    }

    pub fn with(mut self, layer: Proto, name: &str, value: u32) -> Result<Self, PacketError> {
        self.set(layer, name, value)?;
        Ok(self)
    }

    /// Removes an explicit value, restoring the default/derived one.
    pub fn unset(&mut self, layer: Proto, name: &str) {
        self.field_values.retain(|k, _| !(k.layer == layer && k.name == name));
    }

    pub fn explicit(&self, layer: Proto, name: &str) -> Option<u32> {
        self.field_values
            .iter()
            .find(|(k, _)| k.layer == layer && k.name == name)
            .map(|(_, v)| *v)
    }

    pub fn explicit_values(&self) -> impl Iterator<Item = (FieldKey, u32)> + '_ {
        self.field_values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn options(&self, layer: Proto) -> &[OptionInstance] {
        self.options.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Appends an option to the end of the layer's option list.
    pub fn push_option(&mut self, option: OptionInstance) -> Result<&mut Self, PacketError> {
        let layer = option.desc.layer;
        if !self.has_layer(layer) {
            return Err(PacketError::UnknownOption(layer, option.desc.name.to_string()));
        }
        self.options.entry(layer).or_default().push(option);
        Ok(self)
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn set_payload(&mut self, payload: Vec<u8>) -> &mut Self {
        self.payload = payload;
        self
    }
}

/// Byte span of one option within the frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptionSpan {
    pub name: &'static str,
    pub range: Range<usize>,
}

/// Resolved position of one layer within the frame. Ranges are absolute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpan {
    pub proto: Proto,
    pub start: usize,
    pub header_len: usize,
    pub options: Vec<OptionSpan>,
    pub padding: Range<usize>,
}

impl LayerSpan {
    pub fn header(&self) -> Range<usize> {
        self.start..self.start + self.header_len
    }

    pub fn fixed_len(&self) -> usize {
        fields::fixed_header_len(self.proto)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    pub layers: Vec<LayerSpan>,
    pub payload: Range<usize>,
}

impl Layout {
    pub fn layer(&self, proto: Proto) -> Option<&LayerSpan> {
        self.layers.iter().find(|l| l.proto == proto)
    }

    /// The layer whose header contains `offset`, or the last layer when
    /// `offset` falls in the payload.
    pub fn layer_at(&self, offset: usize) -> Option<&LayerSpan> {
        self.layers
            .iter()
            .find(|l| l.header().contains(&offset))
            .or_else(|| if self.payload.contains(&offset) { self.layers.last() } else { None })
    }
}

/// Raw frame bytes plus the layout they were encoded with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    bytes: Vec<u8>,
    layout: Layout,
}

impl Packet {
    pub(crate) fn from_parts(bytes: Vec<u8>, layout: Layout) -> Self {
        Packet { bytes, layout }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn field_start(&self, desc: &FieldDescriptor) -> Result<usize, PacketError> {
        let absent = || PacketError::FieldAbsent { layer: desc.layer, field: desc.name };
        let span = self.layout.layer(desc.layer).ok_or_else(absent)?;
        if span.start + desc.byte_end() > self.bytes.len() {
            return Err(absent());
        }
        Ok(span.start)
    }

    pub fn get_field(&self, desc: &FieldDescriptor) -> Result<u32, PacketError> {
        let start = self.field_start(desc)?;
        Ok(read_bits(&self.bytes[start..], desc.bit_offset as usize, desc.bit_width))
    }

    /// Returns a copy with exactly the field's bit span replaced. Nothing
    /// else (lengths, checksums) is touched.
    pub fn set_field(&self, desc: &FieldDescriptor, value: u32) -> Result<Packet, PacketError> {
        let mut out = self.clone();
        out.set_field_in_place(desc, value)?;
        Ok(out)
    }

    pub(crate) fn set_field_in_place(&mut self, desc: &FieldDescriptor, value: u32) -> Result<(), PacketError> {
        if !desc.fits(value) {
            return Err(PacketError::ValueOverflow { layer: desc.layer, field: desc.name, value: value as u64 });
        }
        let start = self.field_start(desc)?;
        write_bits(&mut self.bytes[start..], desc.bit_offset as usize, desc.bit_width, value);
        Ok(())
    }

    /// Field lookup by name.
    pub fn field(&self, layer: Proto, name: &str) -> Result<u32, PacketError> {
        let desc = fields::field(layer, name).ok_or_else(|| PacketError::UnknownField(layer, name.to_string()))?;
        self.get_field(desc)
    }

    /// Drops trailing bytes, clipping layout spans to the new length.
    pub(crate) fn truncate_tail(&mut self, count: usize) {
        let new_len = self.bytes.len() - count;
        self.bytes.truncate(new_len);
        let clip = |r: &Range<usize>| r.start.min(new_len)..r.end.min(new_len);
        for layer in &mut self.layout.layers {
            let end = (layer.start + layer.header_len).min(new_len);
            layer.header_len = end.saturating_sub(layer.start);
            layer.padding = clip(&layer.padding);
            for o in &mut layer.options {
                o.range = clip(&o.range);
            }
            layer.options.retain(|o| !o.range.is_empty());
        }
        self.layout.payload = clip(&self.layout.payload);
    }

    pub fn hexdump(&self) -> String {
        hexdump::hexdump(&self.bytes)
    }
}

/// Reads `width` bits starting `bit_offset` bits into `bytes` (big-endian).
pub(crate) fn read_bits(bytes: &[u8], bit_offset: usize, width: u8) -> u32 {
    let mut value: u64 = 0;
    for i in 0..width as usize {
        let bit = bit_offset + i;
        let b = (bytes[bit / 8] >> (7 - bit % 8)) & 1;
        value = (value << 1) | b as u64;
    }
    value as u32
}

pub(crate) fn write_bits(bytes: &mut [u8], bit_offset: usize, width: u8, value: u32) {
    if bit_offset % 8 == 0 && width % 8 == 0 {
        let start = bit_offset / 8;
        let n = width as usize / 8;
        let be = value.to_be_bytes();
        bytes[start..start + n].copy_from_slice(&be[4 - n..]);
        return;
    }
    for i in 0..width as usize {
        let bit = bit_offset + i;
        let mask = 1u8 << (7 - bit % 8);
        if (value >> (width as usize - 1 - i)) & 1 == 1 {
            bytes[bit / 8] |= mask;
        } else {
            bytes[bit / 8] &= !mask;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_roundtrip() {
        let mut buf = [0u8; 4];
        write_bits(&mut buf, 4, 4, 0xf);
        assert_eq!(buf[0], 0x0f);
        write_bits(&mut buf, 9, 13, 0x1abc);
        assert_eq!(read_bits(&buf, 9, 13), 0x1abc);
        assert_eq!(read_bits(&buf, 4, 4), 0xf);
    }

    #[test]
    fn layer_order() {
        assert!(PacketTemplate::new(vec![Proto::Ethernet, Proto::Ipv4, Proto::Tcp]).is_ok());
        assert!(PacketTemplate::new(vec![Proto::Ethernet, Proto::Ipv6]).is_ok());
        for bad in [
            vec![Proto::Ipv4, Proto::Tcp],
            vec![Proto::Ethernet, Proto::Tcp],
            vec![Proto::Ethernet, Proto::Ipv4, Proto::Ipv6],
            vec![Proto::Ethernet, Proto::Ipv4, Proto::Tcp, Proto::Udp],
        ] {
            assert!(matches!(PacketTemplate::new(bad), Err(PacketError::LayerMismatch(_))));
        }
    }

    #[test]
    fn set_rejects_overflow_and_unknown() {
        let mut t = PacketTemplate::ipv4_tcp();
        assert!(matches!(t.set(Proto::Tcp, "data_offset", 16), Err(PacketError::ValueOverflow { .. })));
        assert!(matches!(t.set(Proto::Udp, "length", 1), Err(PacketError::UnknownField(..))));
        assert!(matches!(t.set(Proto::Tcp, "nope", 1), Err(PacketError::UnknownField(..))));
    }

    #[test]
    fn option_width_checked() {
        let mss = fields::option(Proto::Tcp, "mss").unwrap();
        assert!(OptionInstance::with_value(mss, &[0, 0]).is_ok());
        assert!(OptionInstance::with_value(mss, &[0]).is_err());
    }
}
