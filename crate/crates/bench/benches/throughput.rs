use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use stackprobe_bench::{mutant, primed_stack};
use stackprobe_core::campaign::run_case;
use stackprobe_core::generator::{generate, GeneratorConfig};
use stackprobe_core::harness::Target;
use stackprobe_core::mutation::{apply, MutationPlan};
use stackprobe_core::packet::checksum::internet_checksum;
use stackprobe_core::refstack::{BugId, RefStack, RefStackConfig};
use stackprobe_core::scenario::builtin_scenario;
use stackprobe_core::{encode, PacketTemplate};

fn checksum(c: &mut Criterion) {
    let mut group = c.benchmark_group("checksum");
    for len in [20usize, 60, 1500] {
        let data: Vec<u8> = (0..len).map(|i| (i * 31) as u8).collect();
        group.throughput(Throughput::Bytes(len as u64));
        group.bench_with_input(BenchmarkId::from_parameter(len), &data, |b, d| b.iter(|| internet_checksum(d)));
    }
    group.finish();
}

fn packets(c: &mut Criterion) {
    let t = PacketTemplate::ipv4_tcp();
    c.bench_function("encode/ipv4_tcp", |b| b.iter(|| encode(&t).unwrap()));
    let plan = MutationPlan::from_text("replace tcp window 0x5555\ninsert tcp mss 0x0000\ntruncate 3\n").unwrap();
    c.bench_function("apply/F+O+T", |b| b.iter(|| apply(&t, &plan).unwrap()));
}

fn generator(c: &mut Criterion) {
    let t = PacketTemplate::ipv4_udp();
    let config = GeneratorConfig::default();
    let plans = generate(&t, &config).unwrap().count();
    let mut group = c.benchmark_group("generator");
    group.sample_size(10);
    group.throughput(Throughput::Elements(plans as u64));
    group.bench_function("ipv4_udp/N2", |b| b.iter(|| generate(&t, &config).unwrap().count()));
    group.finish();
}

fn refstack(c: &mut Criterion) {
    let (mut stack, ctx) = primed_stack("tcp-established", &[]);
    let ack = mutant(&ctx, "replace tcp window 0x1000\n");
    c.bench_function("deliver/established-ack", |b| {
        b.iter(|| {
            let r = stack.deliver(&ack).unwrap();
            stack.drain_outbound().unwrap();
            r
        })
    });

    let (mut stack, ctx) = primed_stack("tcp-listen", &BugId::ALL);
    let faulting = mutant(&ctx, "insert tcp mss 0x0000\n");
    c.bench_function("deliver/listen-fault", |b| b.iter(|| stack.deliver(&faulting).unwrap()));

    let template = PacketTemplate::ipv4_tcp();
    let plan = MutationPlan::from_text("replace tcp window 0x0\n").unwrap();
    for id in ["tcp-listen", "tcp-last-ack"] {
        let scenario = builtin_scenario(id).unwrap();
        let mut stack = RefStack::new(RefStackConfig::default());
        c.bench_function(&format!("case/{id}"), |b| {
            b.iter(|| run_case(&mut stack, &scenario, &template, &plan).unwrap())
        });
    }
}

criterion_group!(benches, checksum, packets, generator, refstack);
criterion_main!(benches);
