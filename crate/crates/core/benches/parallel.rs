//! Sequential vs parallel execution of Proda group trials and sweep cells.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use poisonbench::data::{generate_synthetic, SyntheticSpec};
use poisonbench::defend::{proda_defend, ProdaConfig};
use poisonbench::exec::Execution;
use poisonbench::harness::{run_sweep, AttackKind, DatasetSource, DefenseKind, ExperimentSpec, LambdaPolicy};
use poisonbench::regress::Family;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn proda(c: &mut Criterion) {
    let (ds, _) = generate_synthetic(&SyntheticSpec::random(5, 600, 0.1, 1)).unwrap();
    let mut group = c.benchmark_group("proda_defend");
    for gamma in [6, 12] {
        for (name, execution) in MODES {
            let cfg = ProdaConfig {
                gamma,
                execution,
                ..ProdaConfig::for_dim(5)
            };
            group.bench_with_input(BenchmarkId::new(name, gamma), &cfg, |b, cfg| {
                b.iter(|| proda_defend(&ds, cfg, Family::Ols, 0.0).unwrap())
            });
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_sweep");
    group.sample_size(10);
    for (name, execution) in MODES {
        let mut spec = ExperimentSpec::new(DatasetSource::Synthetic {
            d: 3,
            n: 150,
            noise: 0.1,
            seed: None,
        });
        spec.families = vec![Family::Ols, Family::Ridge];
        spec.lambda = LambdaPolicy::Fixed(0.01);
        spec.attacks = vec![AttackKind::Nopt];
        spec.defenses = vec![DefenseKind::None, DefenseKind::Proda];
        spec.alphas = vec![0.1, 0.2];
        spec.repeats = 2;
        spec.attack.max_outer_iters = 10;
        spec.execution = execution;
        group.bench_function(name, |b| b.iter(|| run_sweep(&spec, |_| Ok(())).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, proda, sweep);
criterion_main!(benches);
