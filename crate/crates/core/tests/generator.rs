use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use stackprobe_core::generator::{
    count_plans, generate, FlatField, FlatTemplate, GeneratorConfig, PlanTarget, StridePolicy,
};
use stackprobe_core::mutation::MutationPlan;
use stackprobe_core::packet::{PacketTemplate, Proto};

fn flat_strategy() -> impl Strategy<Value = FlatTemplate> {
    prop::collection::vec((1usize..=2, any::<u16>()), 1..=4).prop_map(|fs| FlatTemplate {
        fields: fs
            .into_iter()
            .enumerate()
            .map(|(i, (width, d))| FlatField {
                name: format!("f{i}"),
                width,
                default: u32::from(d) & ((1u32 << (8 * width)) - 1),
            })
            .collect(),
    })
}

fn policy_strategy() -> impl Strategy<Value = StridePolicy> {
    prop_oneof![(2u32..6).prop_map(StridePolicy::ValueCount), (4000u64..30000).prop_map(StridePolicy::Stride)]
}

fn drain<T: PlanTarget>(t: &T, c: &GeneratorConfig) -> (Vec<MutationPlan>, u64, u64) {
    let mut s = generate(t, c).unwrap();
    let plans: Vec<_> = s.by_ref().map(|p| p.unwrap()).collect();
    (plans, s.stats().considered, s.stats().suppressed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flat_count_matches_stream(t in flat_strategy(), policy in policy_strategy(), n in 1usize..=3, trunc in any::<bool>()) {
        let n = n.min(t.fields.len());
        let c = GeneratorConfig { max_entities: n, stride_policy: policy, include_truncation: trunc, ..Default::default() };
        let (plans, considered, suppressed) = drain(&t, &c);
        prop_assert_eq!(count_plans(&t, &c).unwrap(), u128::from(considered));
        prop_assert_eq!(plans.len() as u64, considered - suppressed);
        let rendered: HashSet<Vec<u8>> = plans.iter().map(|p| t.render(p).unwrap()).collect();
        prop_assert_eq!(rendered.len(), plans.len());
    }

    #[test]
    fn streams_are_deterministic(t in flat_strategy(), policy in policy_strategy()) {
        let c = GeneratorConfig { max_entities: t.fields.len().min(2), stride_policy: policy, ..Default::default() };
        prop_assert_eq!(drain(&t, &c).0, drain(&t, &c).0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn template_count_matches_stream(
        which in 0usize..4,
        k in 2u32..=4,
        n in 1usize..=2,
        trunc in any::<bool>(),
        reserved in any::<bool>(),
        over in prop::option::of(2u32..=6),
    ) {
        let t = [PacketTemplate::ipv4_tcp(), PacketTemplate::ipv4_udp(), PacketTemplate::ipv6_tcp(), PacketTemplate::ipv6_udp()][which].clone();
        let mut overrides = BTreeMap::new();
        if let Some(v) = over {
            let layer = if t.has_layer(Proto::Tcp) { "tcp.window" } else { "udp.src_port" };
            overrides.insert(layer.to_string(), StridePolicy::ValueCount(v));
        }
        let c = GeneratorConfig {
            max_entities: n,
            stride_policy: StridePolicy::ValueCount(k),
            include_truncation: trunc,
            include_reserved: reserved,
            overrides,
            ..Default::default()
        };
        let (plans, considered, suppressed) = drain(&t, &c);
        prop_assert_eq!(count_plans(&t, &c).unwrap(), u128::from(considered));
        prop_assert_eq!(plans.len() as u64, considered - suppressed);
        for (i, p) in plans.iter().enumerate() {
            prop_assert_eq!(p.plan_id, i as u64);
            let back = MutationPlan::from_text(&p.to_text()).unwrap();
            prop_assert_eq!(&back.instructions, &p.instructions);
        }
    }
}

#[test]
fn baseline_comes_first_and_levels_are_ordered() {
    let t = PacketTemplate::ipv4_udp();
    let (plans, _, _) = drain(&t, &GeneratorConfig::default());
    assert!(plans[0].is_identity());
    let ranks: Vec<usize> = plans
        .iter()
        .map(|p| match (p.truncation().is_some(), p.instructions.len()) {
            (false, n) => n,
            (true, 1) => 3,
            (true, _) => 4,
        })
        .collect();
    assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
}
