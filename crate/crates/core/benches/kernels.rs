use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pan_core::data::make_synthetic_dual;
use pan_core::trainer::{build_models, Architecture, PanTrainer, TrainingConfig};
use pan_core::{ops, par, Tensor};

fn filled(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5)
}

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn conv(c: &mut Criterion) {
    let x = filled(&[64, 8, 14, 14]);
    let w = filled(&[16, 8, 5, 5]);
    let b = filled(&[16]);
    let g = ops::conv2d_geom(&x, &w, &b, 1, 2).unwrap();
    let dy = filled(&[64, 16, 14, 14]);
    let mut group = c.benchmark_group("conv2d_64x8x14x14_k16");
    for (name, seq) in MODES {
        par::set_sequential(seq);
        group.bench_function(BenchmarkId::new("forward", name), |bch| {
            bch.iter(|| ops::conv2d(&x, &w, &b, 1, 2).unwrap())
        });
        group.bench_function(BenchmarkId::new("backward", name), |bch| {
            bch.iter(|| ops::conv2d_backward(&x, &w, &g, &dy, true))
        });
        group.bench_function(BenchmarkId::new("transposed", name), |bch| {
            bch.iter(|| ops::transposed_conv2d(&dy, &w, &filled(&[8]), 1, 2).unwrap())
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn pan_batch(c: &mut Criterion) {
    let data = make_synthetic_dual(64, 1).unwrap();
    let batch = data.train().gather(&(0..64).collect::<Vec<_>>()).unwrap();
    let models =
        build_models(&Architecture::default(), data.sample_shape(), 4, Some(4), 1).unwrap();
    let config = TrainingConfig {
        lambda1: 0.4,
        lambda2: 0.3,
        lambda3: 0.3,
        ..TrainingConfig::default()
    };
    let mut group = c.benchmark_group("pan_batch_64x1x16x16");
    group.sample_size(20);
    for (name, seq) in MODES {
        par::set_sequential(seq);
        let mut trainer = PanTrainer::new(models.clone(), config.clone()).unwrap();
        group.bench_function(name, |bch| bch.iter(|| trainer.run_batch(&batch).unwrap()));
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, conv, pan_batch);
criterion_main!(benches);
