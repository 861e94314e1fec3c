use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cusp::encoding::{encoding_signature, CurvatureEncoder};
use cusp::graph::{generate, GraphKind, SbmParams};
use cusp::orc::{self, OrcConfig};
use cusp::Exec;

fn strategies() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn orc_all(c: &mut Criterion) {
    let g = generate(&GraphKind::Sbm(SbmParams {
        blocks: vec![100, 100],
        p_in: 0.1,
        p_out: 0.01,
        seed: 1,
    }))
    .unwrap();
    let mut group = c.benchmark_group("orc_compute_all");
    group.sample_size(10);
    for (name, exec) in strategies() {
        let cfg = OrcConfig {
            exec,
            ..OrcConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| orc::compute_all(&g, cfg).unwrap())
        });
    }
    group.finish();
}

fn encode_all(c: &mut Criterion) {
    let sig = encoding_signature(&"H:16:-1,S:16:1,E:16:0".parse().unwrap(), 64).unwrap();
    let enc = CurvatureEncoder::gaussian(64, 1.0, 3, sig).unwrap();
    let values: Vec<f64> = (0..5000).map(|i| -1.0 + 2.0 * i as f64 / 4999.0).collect();
    let mut group = c.benchmark_group("encode_all");
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| enc.encode_all(&values, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, orc_all, encode_all);
criterion_main!(benches);
