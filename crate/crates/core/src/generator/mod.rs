//! Ordered, duplicate-free enumeration of mutation plans.
//!
//! The stream starts with the unmodified packet, then every selection of one
//! entity (field or option), then two, up to the configured bound. Each
//! selected entity is swept over an interpolated value list and all
//! combinations are produced as a nested product. The truncation series
//! follows, and finally (for bounds of two or more) single field
//! replacements paired with a truncation. Any plan whose frame bytes equal
//! an earlier plan's bytes is suppressed.

mod flat;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mutation::{apply, MutationError, MutationInstruction, MutationPlan};
use crate::packet::{encode, fields, FieldKind, PacketTemplate, Proto};

pub use flat::{FlatField, FlatTemplate};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeneratorError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Mutation(#[from] MutationError),
}

/// How a field's domain is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StridePolicy {
    /// Fixed step between sampled values.
    Stride(u64),
    /// Step chosen so the domain yields this many values, endpoints included.
    ValueCount(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub max_entities: usize,
    pub stride_policy: StridePolicy,
    /// Per-entity policies keyed by `layer.name`.
    pub overrides: BTreeMap<String, StridePolicy>,
    pub include_truncation: bool,
    pub include_reserved: bool,
    pub protocols: BTreeSet<Proto>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_entities: 2,
            stride_policy: StridePolicy::ValueCount(4),
            overrides: BTreeMap::new(),
            include_truncation: true,
            include_reserved: false,
            protocols: [Proto::Ipv4, Proto::Ipv6, Proto::Tcp, Proto::Udp].into_iter().collect(),
        }
    }
}

impl GeneratorConfig {
    pub fn policy_for(&self, entity: &EntityRef) -> StridePolicy {
        self.overrides
            .get(&format!("{}.{}", entity.layer, entity.name))
            .copied()
            .unwrap_or(self.stride_policy)
    }

    pub fn validate(&self, entity_count: usize) -> Result<(), GeneratorError> {
        if self.max_entities > entity_count {
            return Err(GeneratorError::Config(format!(
                "max_entities {} exceeds the {} available entities",
                self.max_entities, entity_count
            )));
        }
        for policy in std::iter::once(&self.stride_policy).chain(self.overrides.values()) {
            match policy {
                StridePolicy::Stride(0) => return Err(GeneratorError::Config("stride must be positive".into())),
                StridePolicy::ValueCount(k) if *k < 2 => {
                    return Err(GeneratorError::Config("value count must be at least 2".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Field,
    Option,
    /// The length byte of an inserted option, swept on its own while the
    /// option value keeps its default.
    OptionLength,
}

/// One mutable unit of a packet.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub layer: Proto,
    pub name: String,
    pub ordinal: usize,
    /// Width of the swept domain in bits (0 for value-less options).
    pub bits: u32,
    /// Value left out of the sweep because it reproduces the baseline.
    pub excluded: Option<u64>,
}

impl EntityRef {
    /// The instruction that sets this entity to `value`.
    pub fn instruction(&self, value: u64) -> MutationInstruction {
        match self.kind {
            EntityKind::Field => MutationInstruction::replace(self.layer, &self.name, value as u32),
            EntityKind::Option => {
                let width = (self.bits / 8) as usize;
                let be = value.to_be_bytes();
                MutationInstruction::insert(self.layer, &self.name, &be[8 - width..])
            }
            EntityKind::OptionLength => MutationInstruction::insert_length(self.layer, &self.name, value as u8),
        }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = if self.kind == EntityKind::OptionLength { ".len" } else { "" };
        write!(f, "{}.{}{}", self.layer, self.name, suffix)
    }
}

/// Something the generator can enumerate plans for.
pub trait PlanTarget {
    /// Entities in stable ordinal order.
    fn entities(&self, config: &GeneratorConfig) -> Vec<EntityRef>;
    /// Frame bytes produced by a plan.
    fn render(&self, plan: &MutationPlan) -> Result<Vec<u8>, MutationError>;
    /// Largest trailing-byte count the truncation series removes.
    fn truncation_limit(&self) -> usize;
}

impl PlanTarget for PacketTemplate {
    fn entities(&self, config: &GeneratorConfig) -> Vec<EntityRef> {
        let baseline = encode(self).ok();
        let mut out = Vec::new();
        for &layer in self.layers() {
            if !config.protocols.contains(&layer) {
                continue;
            }
            for d in fields::fields(layer) {
                if d.kind == FieldKind::Reserved && !config.include_reserved {
                    continue;
                }
                let excluded = baseline.as_ref().and_then(|p| p.get_field(d).ok()).map(u64::from);
                out.push(EntityRef {
                    kind: EntityKind::Field,
                    layer,
                    name: d.name.to_string(),
                    ordinal: out.len(),
                    bits: d.bit_width as u32,
                    excluded,
                });
            }
            for o in fields::options(layer) {
                out.push(EntityRef {
                    kind: EntityKind::Option,
                    layer,
                    name: o.name.to_string(),
                    ordinal: out.len(),
                    bits: o.value_width as u32 * 8,
                    excluded: None,
                });
                if o.length_field {
                    out.push(EntityRef {
                        kind: EntityKind::OptionLength,
                        layer,
                        name: o.name.to_string(),
                        ordinal: out.len(),
                        bits: 8,
                        excluded: None,
                    });
                }
            }
        }
        out
    }

    fn render(&self, plan: &MutationPlan) -> Result<Vec<u8>, MutationError> {
        apply(self, plan).map(|p| p.into_bytes())
    }

    fn truncation_limit(&self) -> usize {
        match encode(self) {
            Ok(p) => {
                let net = &p.layout().layers[1];
                p.len() - (net.start + net.header_len)
            }
            Err(_) => 0,
        }
    }
}

/// Samples `[0, 2^bits - 1]` from the minimum along the stride, always
/// including the maximum, minus the entity's excluded value.
pub fn interpolate(entity: &EntityRef, config: &GeneratorConfig) -> Vec<u64> {
    let max = if entity.bits >= 64 { u64::MAX } else { (1u64 << entity.bits) - 1 };
    let mut values = sample_range(max, config.policy_for(entity));
    if let Some(x) = entity.excluded {
        values.retain(|&v| v != x);
    }
    values
}

/// `{0, s, 2s, ...} ∪ {max}` for the policy's stride `s`.
fn sample_range(max: u64, policy: StridePolicy) -> Vec<u64> {
    let stride = match policy {
        StridePolicy::Stride(s) => s.max(1),
        StridePolicy::ValueCount(k) => {
            let steps = u64::from(k.max(2) - 1);
            (max / steps + u64::from(max % steps != 0)).max(1)
        }
    };
    let mut values = Vec::new();
    let mut v = 0u64;
    loop {
        values.push(v);
        match v.checked_add(stride) {
            Some(next) if next <= max => v = next,
            _ => break,
        }
    }
    if *values.last().expect("non-empty") != max {
        values.push(max);
    }
    values
}

/// All `n`-subsets of `0..entity_count` in lexicographic order.
pub fn entity_selections(entity_count: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..entity_count).combinations(n)
}

/// Trailing-byte truncations `1..=limit`, ascending.
pub fn truncation_series<T: PlanTarget + ?Sized>(target: &T) -> impl Iterator<Item = MutationPlan> {
    (1..=target.truncation_limit()).map(|n| MutationPlan::new(vec![MutationInstruction::truncate(n)]))
}

/// Truncation counts paired with a field replacement.
fn paired_truncations(limit: usize, policy: StridePolicy) -> Vec<usize> {
    if limit == 0 {
        return Vec::new();
    }
    sample_range(limit as u64 - 1, policy).into_iter().map(|v| v as usize + 1).collect()
}

/// Number of plans [`generate`] considers before byte-equality suppression.
pub fn count_plans<T: PlanTarget + ?Sized>(target: &T, config: &GeneratorConfig) -> Result<u128, GeneratorError> {
    let entities = target.entities(config);
    config.validate(entities.len())?;
    let sizes: Vec<u128> = entities.iter().map(|e| interpolate(e, config).len() as u128).collect();
    // elementary symmetric sums: by_size[k] = sum over k-subsets of products
    let mut by_size = vec![0u128; config.max_entities + 1];
    by_size[0] = 1;
    for &s in &sizes {
        for k in (1..=config.max_entities).rev() {
            by_size[k] += by_size[k - 1] * s;
        }
    }
    let mut total: u128 = by_size.iter().sum();
    if config.include_truncation {
        let limit = target.truncation_limit();
        total += limit as u128;
        if config.max_entities >= 2 {
            let pairs = paired_truncations(limit, config.stride_policy).len() as u128;
            let field_values: u128 = entities
                .iter()
                .zip(&sizes)
                .filter(|(e, _)| e.kind == EntityKind::Field)
                .map(|(_, s)| *s)
                .sum();
            total += field_values * pairs;
        }
    }
    Ok(total)
}

type Candidates = Box<dyn Iterator<Item = Vec<MutationInstruction>> + Send>;

fn candidates(
    entities: Vec<EntityRef>,
    values: Vec<Vec<u64>>,
    config: &GeneratorConfig,
    truncation_limit: usize,
) -> Candidates {
    let n_max = config.max_entities;
    let count = entities.len();
    let entities = std::sync::Arc::new(entities);
    let values = std::sync::Arc::new(values);

    let baseline = std::iter::once(Vec::new());
    let levels = {
        let entities = entities.clone();
        let values = values.clone();
        (1..=n_max).flat_map(move |n| {
            let entities = entities.clone();
            let values = values.clone();
            entity_selections(count, n).flat_map(move |sel| {
                let entities = entities.clone();
                let lists: Vec<_> = sel.iter().map(|&i| values[i].clone().into_iter()).collect();
                let sel2 = sel.clone();
                lists.into_iter().multi_cartesian_product().map(move |vals| {
                    sel2.iter().zip(vals).map(|(&i, v)| entities[i].instruction(v)).collect::<Vec<_>>()
                })
            })
        })
    };
    let mut chain: Candidates = Box::new(baseline.chain(levels));
    if config.include_truncation {
        let series = (1..=truncation_limit).map(|n| vec![MutationInstruction::truncate(n)]);
        chain = Box::new(chain.chain(series));
        if n_max >= 2 {
            let cuts = paired_truncations(truncation_limit, config.stride_policy);
            let fields: Vec<usize> = (0..count).filter(|&i| entities[i].kind == EntityKind::Field).collect();
            let pairs = fields.into_iter().flat_map(move |i| {
                let entity = entities[i].clone();
                let cuts = cuts.clone();
                values[i].clone().into_iter().flat_map(move |v| {
                    let ins = entity.instruction(v);
                    cuts.clone().into_iter().map(move |c| vec![ins.clone(), MutationInstruction::truncate(c)])
                })
            });
            chain = Box::new(chain.chain(pairs));
        }
    }
    chain
}

/// Counters kept while streaming.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub considered: u64,
    pub emitted: u64,
    pub suppressed: u64,
}

/// The ordered plan stream. Yields `Err` for plans that fail to apply.
pub struct PlanStream<'a, T: PlanTarget + ?Sized> {
    target: &'a T,
    inner: Candidates,
    seen: HashSet<Vec<u8>>,
    stats: StreamStats,
}

impl<T: PlanTarget + ?Sized> PlanStream<'_, T> {
    pub fn stats(&self) -> StreamStats {
        self.stats
    }
}

impl<T: PlanTarget + ?Sized> Iterator for PlanStream<'_, T> {
    type Item = Result<MutationPlan, GeneratorError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let instructions = self.inner.next()?;
            self.stats.considered += 1;
            let mut plan = MutationPlan::new(instructions);
            match self.target.render(&plan) {
                Ok(bytes) => {
                    if !self.seen.insert(bytes) {
                        self.stats.suppressed += 1;
                        continue;
                    }
                    plan.plan_id = self.stats.emitted;
                    self.stats.emitted += 1;
                    return Some(Ok(plan));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// Starts the ordered plan stream for `target`.
pub fn generate<'a, T: PlanTarget + ?Sized>(
    target: &'a T,
    config: &GeneratorConfig,
) -> Result<PlanStream<'a, T>, GeneratorError> {
    let entities = target.entities(config);
    config.validate(entities.len())?;
    let values = entities.iter().map(|e| interpolate(e, config)).collect();
    let inner = candidates(entities, values, config, target.truncation_limit());
    Ok(PlanStream { target, inner, seen: HashSet::new(), stats: StreamStats::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(bits: u32, excluded: Option<u64>) -> EntityRef {
        EntityRef { kind: EntityKind::Field, layer: Proto::Flat, name: "f".into(), ordinal: 0, bits, excluded }
    }

    fn vc(k: u32) -> GeneratorConfig {
        GeneratorConfig { stride_policy: StridePolicy::ValueCount(k), ..Default::default() }
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate(&field(4, None), &vc(4)), vec![0, 5, 10, 15]);
        assert_eq!(interpolate(&field(16, None), &vc(4)), vec![0, 0x5555, 0xaaaa, 0xffff]);
        assert_eq!(interpolate(&field(1, Some(0)), &vc(4)), vec![1]);
        assert_eq!(interpolate(&field(1, Some(1)), &vc(6)), vec![0]);
        assert_eq!(interpolate(&field(8, None), &vc(4)), vec![0, 0x55, 0xaa, 0xff]);
        // TCP data offset with its baseline of 5 left out
        assert_eq!(interpolate(&field(4, Some(5)), &vc(4)), vec![0, 10, 15]);
    }

    #[test]
    fn stride_forces_maximum() {
        let cfg = GeneratorConfig { stride_policy: StridePolicy::Stride(100), ..Default::default() };
        assert_eq!(interpolate(&field(8, None), &cfg), vec![0, 100, 200, 255]);
        let cfg = GeneratorConfig { stride_policy: StridePolicy::Stride(1), ..Default::default() };
        assert_eq!(interpolate(&field(8, None), &cfg).len(), 256);
        assert_eq!(interpolate(&field(64, None), &vc(4)).last(), Some(&u64::MAX));
        assert_eq!(interpolate(&field(0, None), &vc(4)), vec![0]);
    }

    #[test]
    fn selections() {
        assert_eq!(entity_selections(3, 0).collect::<Vec<_>>(), vec![Vec::<usize>::new()]);
        assert_eq!(entity_selections(3, 2).collect::<Vec<_>>(), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(entity_selections(3, 3).collect::<Vec<_>>(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn template_entities_are_dense_and_skip_reserved() {
        let t = PacketTemplate::ipv4_tcp();
        let es = t.entities(&GeneratorConfig::default());
        assert!(es.iter().enumerate().all(|(i, e)| e.ordinal == i));
        assert!(!es.iter().any(|e| e.name == "reserved" || e.name == "flag_reserved"));
        assert!(es.iter().any(|e| e.name == "checksum" && e.layer == Proto::Tcp));
        assert!(es.iter().any(|e| e.kind == EntityKind::OptionLength && e.name == "mss"));
        assert!(!es.iter().any(|e| e.layer == Proto::Ethernet));
        let cfg = GeneratorConfig { include_reserved: true, ..Default::default() };
        assert!(t.entities(&cfg).iter().any(|e| e.name == "reserved"));
    }

    #[test]
    fn truncation_lengths() {
        assert_eq!(truncation_series(&PacketTemplate::ipv4_tcp()).count(), 20);
        assert_eq!(truncation_series(&PacketTemplate::ipv4_udp()).count(), 8);
        let first = truncation_series(&PacketTemplate::ipv4_tcp()).next().unwrap();
        assert_eq!(first.instructions, vec![MutationInstruction::truncate(1)]);
    }

    #[test]
    fn config_validation() {
        let t = FlatTemplate::bytes(&["a", "b"]);
        let cfg = GeneratorConfig { max_entities: 3, ..Default::default() };
        assert!(matches!(generate(&t, &cfg), Err(GeneratorError::Config(_))));
        let cfg = GeneratorConfig { stride_policy: StridePolicy::ValueCount(1), ..Default::default() };
        assert!(generate(&t, &cfg).is_err());
    }

    fn flat_cfg(n: usize) -> GeneratorConfig {
        GeneratorConfig { max_entities: n, include_truncation: false, ..Default::default() }
    }

    #[test]
    fn flat_level_sizes() {
        let t = FlatTemplate::bytes(&["a", "b", "c"]);
        let one: Vec<_> = generate(&t, &flat_cfg(1)).unwrap().map(Result::unwrap).collect();
        // baseline plus 3 fields x 3 non-default values
        assert_eq!(one.len() - 1, 9);
        let two = generate(&t, &flat_cfg(2)).unwrap().count() - one.len();
        assert_eq!(two, 27);
        assert_eq!(count_plans(&t, &flat_cfg(2)).unwrap(), 1 + 9 + 27);
    }

    #[test]
    fn stream_order_and_ids() {
        let t = PacketTemplate::ipv4_udp();
        let mut stream = generate(&t, &GeneratorConfig { max_entities: 1, ..Default::default() }).unwrap();
        let plans: Vec<_> = stream.by_ref().map(Result::unwrap).collect();
        assert!(plans[0].is_identity());
        assert!(plans.iter().enumerate().all(|(i, p)| p.plan_id == i as u64));
        let tail: Vec<_> = plans.iter().rev().take(8).map(|p| p.truncation()).collect();
        assert!(tail.iter().all(Option::is_some));
        let stats = stream.stats();
        let expected = count_plans(&t, &GeneratorConfig { max_entities: 1, ..Default::default() }).unwrap();
        assert_eq!(expected, (stats.emitted + stats.suppressed) as u128);
    }

    #[test]
    fn field_truncation_pairs() {
        let cuts = paired_truncations(20, StridePolicy::ValueCount(4));
        assert_eq!(cuts, vec![1, 8, 15, 20]);
        let t = PacketTemplate::ipv4_tcp();
        let plans = generate(&t, &GeneratorConfig::default()).unwrap();
        let shapes: BTreeSet<String> = plans.filter_map(Result::ok).map(|p| p.shape()).collect();
        for s in ["F", "O", "T", "F+F", "F+O", "F+T", "O+O"] {
            assert!(shapes.contains(s), "missing {s} in {shapes:?}");
        }
    }
}
