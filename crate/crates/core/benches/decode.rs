use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rse_core::decoder::{Decoder, NoiseFeasibleSet};
use rse_core::par::Execution;
use rse_core::{build_o, fixtures, SystemModel};

/// Windows with bounded noise and a large bias on the sensors in `attacked`.
fn windows(model: &SystemModel, attacked: &[usize], count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = build_o(model, &model.all_sensors());
    let (n, w) = (model.state_dim(), model.window());
    let per = model.delta_w() / (model.sensor_count() as f64).sqrt();
    (0..count)
        .map(|_| {
            let x = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
            let mut y = &o * x + DVector::from_fn(o.nrows(), |_, _| rng.random_range(-per..per));
            for &i in attacked {
                for k in 0..w {
                    y[i * w + k] += 5.0;
                }
            }
            y
        })
        .collect()
}

/// Eight redundant sensors on a lightly damped oscillator.
fn oscillator() -> SystemModel {
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let a = DMatrix::from_row_slice(2, 2, &[0.99 * c, -s, s, 0.99 * c]);
    let c = DMatrix::from_fn(8, 2, |i, j| ((i + 1) as f64 * (j as f64 + 0.5)).sin());
    SystemModel::new(a, DMatrix::zeros(2, 1), c, 0.05, 3).unwrap()
}

fn bench_batch(c: &mut Criterion) {
    let cases = [
        ("vtf", fixtures::vtf_default(), vec![2]),
        ("oscillator", oscillator(), vec![1, 4, 6]),
    ];
    let mut group = c.benchmark_group("decode_batch");
    group.sample_size(10);
    for (name, model, attacked) in &cases {
        let ys = windows(model, attacked, 256, 11);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let dec = Decoder::new(model, NoiseFeasibleSet::for_model(model, Default::default()))
                .with_execution(exec);
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), name), &ys, |b, ys| {
                b.iter(|| dec.decode_batch(ys))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_batch);
criterion_main!(benches);
