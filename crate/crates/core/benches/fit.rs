use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bayeseg::grid::{ImageGrid, StencilOperator};
use bayeseg::model::{synthesize, Hyperparams, SceneSpec};
use bayeseg::pipeline::{fit_batch, FitConfig, FitJob};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![
        ("single thread".to_string(), one),
        (format!("default pool ({})", default.current_num_threads()), default),
    ]
}

fn batch_fit(c: &mut Criterion) {
    let jobs: Vec<FitJob> = (0..8)
        .map(|i| {
            let s = synthesize(&SceneSpec::standard(2), i).unwrap();
            FitJob {
                y: s.y,
                labels: Some(s.gt_label),
            }
        })
        .collect();
    let h = Hyperparams::default();
    let cfg = FitConfig {
        max_sweeps: 20,
        ..FitConfig::default()
    };
    let mut group = c.benchmark_group("fit_batch_8x32x32");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| fit_batch(&jobs, &h, &cfg)))
        });
    }
    group.finish();
}

fn stencil(c: &mut Criterion) {
    let side = 512;
    let f = ImageGrid::from_fn(side, side, |r, col| ((r * 31 + col * 17) % 97) as f64 / 97.0);
    let op = StencilOperator::for_grid(&f);
    let mut group = c.benchmark_group("stencil_512x512");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| op.apply(&f).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_fit, stencil);
criterion_main!(benches);
