//! One backward sweep of the market-maker scheme, parallel against sequential.

use booklab::dp::{scheme_step, Exec};
use booklab::mm::{build_mm, MmParams};
use booklab::prior::{build_default_kernel, PriorConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn sweep(c: &mut Criterion) {
    let km = build_default_kernel(&PriorConfig::default()).unwrap();
    let mut group = c.benchmark_group("scheme_step");
    group.sample_size(10);
    for i_star in [1, 2] {
        let p = MmParams {
            i_star,
            ..MmParams::default()
        };
        let (space, model) = build_mm(&p, &km, Exec::default()).unwrap();
        let label = format!("{}_states", space.len());
        for exec in [Exec::Sequential, Exec::Parallel] {
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), &label),
                &model,
                |b, m| b.iter(|| scheme_step(m, black_box(&m.terminal), p.dt, exec)),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
