//! Mutation instructions (replace a field, insert an option, truncate the
//! frame) and their application to a packet template.
//!
//! Plans are applied at the template level, so every checksum and derived
//! length that the plan does not explicitly replace is recomputed by the
//! encoder. A trailing truncation is applied to the encoded frame, after
//! which the layers outside the truncated one are re-fixed so the short
//! frame stays self-consistent.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::packet::checksum::{ipv4_header_checksum, transport_checksum};
use crate::packet::{
    encode, fields, pseudo_header, FieldKey, FieldKind, OptionInstance, Packet, PacketError,
    PacketTemplate, Proto,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MutationError {
    #[error("invalid plan: {0}")]
    PlanInvalid(String),
    #[error("cannot truncate {count} bytes from a {len}-byte frame")]
    TruncateTooLarge { count: usize, len: usize },
    #[error("{layer} options need {needed} bytes but only {max} fit")]
    OptionSpaceExhausted { layer: Proto, needed: usize, max: usize },
    #[error("outer layer corrupt: {0}")]
    OuterLayerCorrupt(String),
    #[error(transparent)]
    Packet(PacketError),
    #[error("cannot parse instruction `{0}`")]
    Syntax(String),
}

impl From<PacketError> for MutationError {
    fn from(e: PacketError) -> Self {
        match e {
            PacketError::OptionSpaceExhausted { layer, needed, max } => {
                MutationError::OptionSpaceExhausted { layer, needed, max }
            }
            other => MutationError::Packet(other),
        }
    }
}

/// Which byte(s) of an inserted option the instruction value sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OptionPart {
    /// The option's value bytes; the length byte is computed.
    Value,
    /// The option's length byte; the value keeps its default.
    Length,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MutationInstruction {
    Replace { layer: Proto, field: String, value: u32 },
    Insert { layer: Proto, option: String, part: OptionPart, value: Vec<u8> },
    /// Removes `count` trailing bytes of the encoded frame.
    Truncate { count: usize },
}

impl MutationInstruction {
    pub fn replace(layer: Proto, field: &str, value: u32) -> Self {
        MutationInstruction::Replace { layer, field: field.to_string(), value }
    }

    pub fn insert(layer: Proto, option: &str, value: &[u8]) -> Self {
        MutationInstruction::Insert {
            layer,
            option: option.to_string(),
            part: OptionPart::Value,
            value: value.to_vec(),
        }
    }

    pub fn insert_length(layer: Proto, option: &str, length: u8) -> Self {
        MutationInstruction::Insert {
            layer,
            option: option.to_string(),
            part: OptionPart::Length,
            value: vec![length],
        }
    }

    pub fn truncate(count: usize) -> Self {
        MutationInstruction::Truncate { count }
    }

    pub fn layer(&self) -> Option<Proto> {
        match self {
            MutationInstruction::Replace { layer, .. } | MutationInstruction::Insert { layer, .. } => {
                Some(*layer)
            }
            MutationInstruction::Truncate { .. } => None,
        }
    }

    /// Short operator tag: F (field), O (option), T (truncate).
    pub fn tag(&self) -> char {
        match self {
            MutationInstruction::Replace { .. } => 'F',
            MutationInstruction::Insert { .. } => 'O',
            MutationInstruction::Truncate { .. } => 'T',
        }
    }
}

fn hex_bytes(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl fmt::Display for MutationInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationInstruction::Replace { layer, field, value } => {
                write!(f, "replace {layer} {field} 0x{value:x}")
            }
            MutationInstruction::Insert { layer, option, part, value } => {
                let suffix = if *part == OptionPart::Length { ".len" } else { "" };
                write!(f, "insert {layer} {option}{suffix} 0x{}", hex_bytes(value))
            }
            MutationInstruction::Truncate { count } => write!(f, "truncate {count}"),
        }
    }
}

fn parse_hex_u32(s: &str) -> Option<u32> {
    u32::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

fn parse_hex_bytes(s: &str) -> Option<Vec<u8>> {
    let digits = s.strip_prefix("0x")?;
    if digits.len() % 2 != 0 {
        return None;
    }
    (0..digits.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&digits[i..i + 2], 16).ok())
        .collect()
}

impl FromStr for MutationInstruction {
    type Err = MutationError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let syntax = || MutationError::Syntax(line.to_string());
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["replace", layer, field, value] => Ok(MutationInstruction::Replace {
                layer: layer.parse()?,
                field: field.to_string(),
                value: parse_hex_u32(value).ok_or_else(syntax)?,
            }),
            ["insert", layer, option, value] => {
                let value = parse_hex_bytes(value).ok_or_else(syntax)?;
                let (option, part) = match option.strip_suffix(".len") {
                    Some(name) => (name, OptionPart::Length),
                    None => (*option, OptionPart::Value),
                };
                if part == OptionPart::Length && value.len() != 1 {
                    return Err(syntax());
                }
                Ok(MutationInstruction::Insert {
                    layer: layer.parse()?,
                    option: option.to_string(),
                    part,
                    value,
                })
            }
            ["truncate", count] => Ok(MutationInstruction::Truncate {
                count: count.parse().map_err(|_| syntax())?,
            }),
            _ => Err(syntax()),
        }
    }
}

/// An ordered selection of instructions applied to one template.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct MutationPlan {
    pub instructions: Vec<MutationInstruction>,
    pub scenario_id: Option<String>,
    pub plan_id: u64,
}

impl MutationPlan {
    pub fn new(instructions: Vec<MutationInstruction>) -> Self {
        MutationPlan { instructions, scenario_id: None, plan_id: 0 }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn truncation(&self) -> Option<usize> {
        self.instructions.iter().find_map(|i| match i {
            MutationInstruction::Truncate { count } => Some(*count),
            _ => None,
        })
    }

    /// Operator shape, e.g. `F+O`.
    pub fn shape(&self) -> String {
        let tags: Vec<String> = self.instructions.iter().map(|i| i.tag().to_string()).collect();
        tags.join("+")
    }

    /// Fields this plan sets explicitly.
    pub fn replaced_fields(&self) -> impl Iterator<Item = (Proto, &str)> {
        self.instructions.iter().filter_map(|i| match i {
            MutationInstruction::Replace { layer, field, .. } => Some((*layer, field.as_str())),
            _ => None,
        })
    }

    pub fn replaces(&self, layer: Proto, field: &str) -> bool {
        self.replaced_fields().any(|(l, f)| l == layer && f == field)
    }

    pub fn validate(&self) -> Result<(), MutationError> {
        let n = self.instructions.len();
        for (i, ins) in self.instructions.iter().enumerate() {
            match ins {
                MutationInstruction::Truncate { count } => {
                    if i + 1 != n {
                        return Err(MutationError::PlanInvalid("truncate must be the last instruction".into()));
                    }
                    if *count == 0 {
                        return Err(MutationError::PlanInvalid("truncate count must be at least 1".into()));
                    }
                }
                MutationInstruction::Replace { layer, field, .. } => {
                    let dup = self.instructions[..i].iter().any(|p| {
                        matches!(p, MutationInstruction::Replace { layer: l, field: f, .. } if l == layer && f == field)
                    });
                    if dup {
                        return Err(MutationError::PlanInvalid(format!("{layer}.{field} replaced twice")));
                    }
                }
                MutationInstruction::Insert { .. } => {}
            }
        }
        Ok(())
    }

    /// One instruction per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ins in &self.instructions {
            out.push_str(&ins.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses [`MutationPlan::to_text`] output; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, MutationError> {
        let instructions = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        let plan = MutationPlan::new(instructions);
        plan.validate()?;
        Ok(plan)
    }
}

fn depth(template: &PacketTemplate, layer: Proto) -> Option<usize> {
    template.layers().iter().position(|&l| l == layer)
}

/// Applies `plan` to `template`. Replace and Insert instructions edit the
/// template (so lengths, offsets and checksums the plan does not name are
/// recomputed); a final Truncate trims the encoded frame and re-fixes the
/// outer layers.
pub fn apply(template: &PacketTemplate, plan: &MutationPlan) -> Result<Packet, MutationError> {
    plan.validate()?;
    if plan.is_identity() {
        return Ok(encode(template)?);
    }
    let mut t = template.clone();
    let mut innermost = 0usize;
    for ins in &plan.instructions {
        match ins {
            MutationInstruction::Replace { layer, field, value } => {
                let d = depth(&t, *layer).ok_or_else(|| {
                    MutationError::PlanInvalid(format!("template has no {layer} layer"))
                })?;
                innermost = innermost.max(d);
                t.set(*layer, field, *value)?;
            }
            MutationInstruction::Insert { layer, option, part, value } => {
                let d = depth(&t, *layer).ok_or_else(|| {
                    MutationError::PlanInvalid(format!("template has no {layer} layer"))
                })?;
                innermost = innermost.max(d);
                let desc = fields::option(*layer, option)
                    .ok_or_else(|| MutationError::Packet(PacketError::UnknownOption(*layer, option.clone())))?;
                let inst = match part {
                    OptionPart::Value => OptionInstance::with_value(desc, value)?,
                    OptionPart::Length => {
                        if !desc.length_field {
                            return Err(MutationError::PlanInvalid(format!(
                                "{layer}.{option} has no length byte"
                            )));
                        }
                        OptionInstance::with_length(desc, value[0])
                    }
                };
                t.push_option(inst)?;
            }
            MutationInstruction::Truncate { .. } => {}
        }
    }
    let mut packet = encode(&t)?;
    let Some(count) = plan.truncation() else {
        return Ok(packet);
    };

    let len = packet.len();
    if count >= len {
        return Err(MutationError::TruncateTooLarge { count, len });
    }
    let new_len = len - count;
    let cut = packet
        .layout()
        .layers
        .iter()
        .rposition(|l| l.start <= new_len)
        .expect("ethernet starts at zero");
    // Truncation re-fixes the network layer, so everything up to the end of
    // the network header must survive.
    let net = &packet.layout().layers[1];
    if new_len < net.start + net.header_len {
        return Err(MutationError::OuterLayerCorrupt(format!(
            "truncating {count} bytes cuts into the {} header",
            packet.layout().layer_at(new_len).map_or(Proto::Ethernet, |l| l.proto)
        )));
    }
    let cut = cut.max(1);
    innermost = innermost.max(cut);
    packet.truncate_tail(count);

    let skip: Vec<FieldKey> = plan
        .replaced_fields()
        .filter_map(|(l, f)| fields::field(l, f).map(|d| FieldKey { layer: l, name: d.name }))
        .collect();
    let inner_proto = template.layers()[innermost];
    refix_layers(&mut packet, inner_proto, &skip)?;
    refresh_checksum(&mut packet, inner_proto, &skip)?;
    Ok(packet)
}

/// Recomputes lengths and checksums in every layer outside
/// `innermost_mutated_layer`, leaving that layer and anything inside it
/// untouched.
pub fn refix_outer_layers(packet: &Packet, innermost_mutated_layer: Proto) -> Result<Packet, MutationError> {
    let mut out = packet.clone();
    refix_layers(&mut out, innermost_mutated_layer, &[])?;
    Ok(out)
}

fn refix_layers(packet: &mut Packet, innermost: Proto, skip: &[FieldKey]) -> Result<(), MutationError> {
    let layers = packet.layout().layers.clone();
    let inner = layers
        .iter()
        .position(|l| l.proto == innermost)
        .ok_or_else(|| MutationError::PlanInvalid(format!("packet has no {innermost} layer")))?;
    let len = packet.len();
    let skipped = |layer: Proto, name: &str| skip.iter().any(|k| k.layer == layer && k.name == name);
    for (i, span) in layers[..inner].iter().enumerate() {
        let next_start = layers[i + 1].start;
        if span.start + span.header_len != next_start || next_start > len {
            return Err(MutationError::OuterLayerCorrupt(format!("{} header truncated", span.proto)));
        }
        match span.proto {
            Proto::Ipv4 => {
                if !skipped(Proto::Ipv4, "total_length") {
                    let d = fields::field(Proto::Ipv4, "total_length").expect("descriptor");
                    packet.set_field_in_place(d, (len - span.start).min(0xffff) as u32)?;
                }
                if !skipped(Proto::Ipv4, "checksum") {
                    let d = fields::field(Proto::Ipv4, "checksum").expect("descriptor");
                    let sum = ipv4_header_checksum(&packet.bytes()[span.header()])
                        .map_err(|e| MutationError::OuterLayerCorrupt(e.to_string()))?;
                    packet.set_field_in_place(d, sum as u32)?;
                }
            }
            Proto::Ipv6 if !skipped(Proto::Ipv6, "payload_length") => {
                let d = fields::field(Proto::Ipv6, "payload_length").expect("descriptor");
                packet.set_field_in_place(d, (len - span.start - 40).min(0xffff) as u32)?;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Recomputes the checksum of the (truncated) mutated layer when its
/// checksum field survived and the plan does not set it.
fn refresh_checksum(packet: &mut Packet, layer: Proto, skip: &[FieldKey]) -> Result<(), MutationError> {
    let Some(d) = fields::fields(layer).iter().find(|d| d.kind == FieldKind::Checksum) else {
        return Ok(());
    };
    if skip.iter().any(|k| k.layer == layer && k.name == d.name) {
        return Ok(());
    }
    let Some(span) = packet.layout().layer(layer).cloned() else {
        return Ok(());
    };
    if span.start + d.byte_end() > packet.len() {
        return Ok(());
    }
    match layer {
        Proto::Tcp | Proto::Udp => {
            let pseudo = pseudo_header(packet).expect("network layer intact");
            packet.set_field_in_place(d, 0)?;
            let sum = transport_checksum(&pseudo, &packet.bytes()[span.start..]);
            packet.set_field_in_place(d, sum as u32)?;
        }
        Proto::Ipv4 => {
            let sum = ipv4_header_checksum(&packet.bytes()[span.header()])
                .map_err(|e| MutationError::OuterLayerCorrupt(e.to_string()))?;
            packet.set_field_in_place(d, sum as u32)?;
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::checksum::{verify_ipv4_header, verify_transport};

    fn tcp() -> PacketTemplate {
        PacketTemplate::ipv4_tcp()
    }

    #[test]
    fn identity_plan_is_encode() {
        let t = tcp();
        assert_eq!(apply(&t, &MutationPlan::identity()).unwrap(), encode(&t).unwrap());
    }

    #[test]
    fn data_offset_trigger_shape() {
        let plan = MutationPlan::new(vec![MutationInstruction::replace(Proto::Tcp, "data_offset", 15)]);
        let p = apply(&tcp(), &plan).unwrap();
        assert_eq!(p.len(), 54);
        assert_eq!(p.field(Proto::Tcp, "data_offset").unwrap(), 15);
        assert!(verify_ipv4_header(&p.bytes()[14..34]));
        assert!(verify_transport(&pseudo_header(&p).unwrap(), &p.bytes()[34..]));
    }

    #[test]
    fn mss_zero_trigger_shape() {
        let plan = MutationPlan::new(vec![MutationInstruction::insert(Proto::Tcp, "mss", &[0, 0])]);
        let p = apply(&tcp(), &plan).unwrap();
        assert_eq!(p.len(), 58);
        assert_eq!(p.field(Proto::Tcp, "data_offset").unwrap(), 6);
        assert_eq!(&p.bytes()[54..58], &[2, 4, 0, 0]);
        assert!(verify_transport(&pseudo_header(&p).unwrap(), &p.bytes()[34..]));
    }

    #[test]
    fn insert_respects_replaced_offset() {
        let plan = MutationPlan::new(vec![
            MutationInstruction::replace(Proto::Tcp, "data_offset", 5),
            MutationInstruction::insert(Proto::Tcp, "mss", &[0, 0]),
        ]);
        let p = apply(&tcp(), &plan).unwrap();
        assert_eq!(p.len(), 58);
        assert_eq!(p.field(Proto::Tcp, "data_offset").unwrap(), 5);
    }

    #[test]
    fn truncate_refixes_outer() {
        let plan = MutationPlan::new(vec![MutationInstruction::truncate(10)]);
        let base = encode(&tcp()).unwrap();
        let p = apply(&tcp(), &plan).unwrap();
        assert_eq!(p.len(), 44);
        assert_eq!(p.field(Proto::Ipv4, "total_length").unwrap(), 30);
        assert!(verify_ipv4_header(&p.bytes()[14..34]));
        assert_eq!(&p.bytes()[34..], &base.bytes()[34..44]);
    }

    #[test]
    fn truncate_keeps_surviving_transport_checksum_valid() {
        let plan = MutationPlan::new(vec![MutationInstruction::truncate(1)]);
        let p = apply(&tcp(), &plan).unwrap();
        assert!(verify_transport(&pseudo_header(&p).unwrap(), &p.bytes()[34..]));
    }

    #[test]
    fn truncate_errors() {
        let plan = MutationPlan::new(vec![MutationInstruction::truncate(30)]);
        assert!(matches!(apply(&tcp(), &plan), Err(MutationError::OuterLayerCorrupt(_))));
        let plan = MutationPlan::new(vec![MutationInstruction::truncate(54)]);
        assert!(matches!(apply(&tcp(), &plan), Err(MutationError::TruncateTooLarge { .. })));
        let plan = MutationPlan::new(vec![MutationInstruction::truncate(20)]);
        assert_eq!(apply(&tcp(), &plan).unwrap().len(), 34);
    }

    #[test]
    fn refix_standalone() {
        let p = encode(&tcp()).unwrap();
        assert_eq!(refix_outer_layers(&p, Proto::Tcp).unwrap(), p);
        let mut short = p.clone();
        short.truncate_tail(30);
        assert!(matches!(
            refix_outer_layers(&short, Proto::Tcp),
            Err(MutationError::OuterLayerCorrupt(_))
        ));
    }

    #[test]
    fn plan_validation() {
        let bad = MutationPlan::new(vec![MutationInstruction::truncate(1), MutationInstruction::replace(Proto::Tcp, "seq", 0)]);
        assert!(matches!(bad.validate(), Err(MutationError::PlanInvalid(_))));
        let dup = MutationPlan::new(vec![
            MutationInstruction::replace(Proto::Tcp, "seq", 0),
            MutationInstruction::replace(Proto::Tcp, "seq", 1),
        ]);
        assert!(matches!(dup.validate(), Err(MutationError::PlanInvalid(_))));
        let zero = MutationPlan::new(vec![MutationInstruction::truncate(0)]);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn option_space() {
        let ts = || MutationInstruction::insert(Proto::Tcp, "timestamps", &[0; 8]);
        let plan = MutationPlan::new(vec![ts(), ts(), ts(), ts(), ts()]);
        assert!(matches!(apply(&tcp(), &plan), Err(MutationError::OptionSpaceExhausted { .. })));
    }

    #[test]
    fn text_roundtrip() {
        let plan = MutationPlan::new(vec![
            MutationInstruction::replace(Proto::Tcp, "data_offset", 15),
            MutationInstruction::insert(Proto::Tcp, "mss", &[0, 0]),
            MutationInstruction::insert_length(Proto::Tcp, "wscale", 0xff),
            MutationInstruction::insert(Proto::Tcp, "nop", &[]),
            MutationInstruction::truncate(3),
        ]);
        let text = plan.to_text();
        assert_eq!(
            text,
            "replace tcp data_offset 0xf\ninsert tcp mss 0x0000\ninsert tcp wscale.len 0xff\ninsert tcp nop 0x\ntruncate 3\n"
        );
        assert_eq!(MutationPlan::from_text(&text).unwrap().instructions, plan.instructions);
        assert!("replace tcp seq 12".parse::<MutationInstruction>().is_err());
        assert!("shuffle tcp".parse::<MutationInstruction>().is_err());
    }
}
