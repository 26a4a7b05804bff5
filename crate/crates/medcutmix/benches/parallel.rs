//! Sequential vs data-parallel matmul at encoder-realistic sizes.
//!
//! Run with `cargo bench`; build with `--no-default-features` to confirm
//! the sequential fallback compiles without rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use medcutmix::nn::tensor::{matmul_into, matmul_seq_into};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // 16×64·64×64 is one attention projection for a 32×32 image with 8px
    // patches; the larger shapes model batched global-similarity products.
    let cases = [(16, 64, 64), (64, 64, 256), (256, 256, 256)];
    let mut group = c.benchmark_group("matmul");
    for (m, k, n) in cases {
        let a = random(m * k, &mut rng);
        let b = random(k * n, &mut rng);
        let mut out = vec![0.0; m * n];
        let label = format!("{m}x{k}x{n}");
        group.bench_with_input(BenchmarkId::new("seq", &label), &(), |bch, _| {
            bch.iter(|| matmul_seq_into(&a, &b, m, k, n, &mut out));
        });
        group.bench_with_input(BenchmarkId::new("par", &label), &(), |bch, _| {
            bch.iter(|| matmul_into(&a, &b, m, k, n, &mut out));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul);
criterion_main!(benches);
