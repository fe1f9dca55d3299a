use std::hint::black_box;

use cavlab::forward::{Scheme, TimeGrid};
use cavlab::inverse::{compare, Arm};
use cavlab::scenario::Scenario;
use cavlab::Execution;
use criterion::{criterion_group, criterion_main, Criterion};

fn setup() -> (cavlab::inverse::Design, Arm, Arm) {
    let mut s = Scenario::preset("bang-bang-q1").unwrap().with_h(1.0 / 16.0).unwrap();
    s.time = TimeGrid::new(0.6, 150, Scheme::CrankNicolson);
    let design = s.design().unwrap();
    let e = s.experiment().unwrap();
    let op = s.operator("", &e.operator).unwrap().clone();
    let a = Arm { shape: Some(s.shape("", &e.d1).unwrap().clone()), op: op.clone(), u0: s.initial.u0.clone() };
    let b = Arm { shape: Some(s.shape("", &e.d2).unwrap().clone()), op, u0: s.initial.u0.clone() };
    (design, a, b)
}

fn bench_compare(c: &mut Criterion) {
    let (design, a, b) = setup();
    let mut group = c.benchmark_group("compare");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |bench| bench.iter(|| compare(black_box(&design), &a, &b, exec).unwrap().ratio));
    }
    group.finish();
}

criterion_group!(benches, bench_compare);
criterion_main!(benches);
