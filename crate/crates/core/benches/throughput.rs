use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use converse_core::eval::{evaluate, paired_bootstrap, BootstrapConfig, Protocol};
use converse_core::generator::{
    generate_fixtures, validate_instance, ArmRanges, DatasetConfig, DatasetEntry, FamilyRanges, Fixture,
    InstanceSource, NvdexRanges, ValidationConfig,
};
use converse_core::par::Execution;
use converse_core::sim::PolicySpec;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn fixture(ranges: FamilyRanges) -> Fixture {
    let config = DatasetConfig {
        master_seed: 1,
        entries: vec![DatasetEntry {
            count: 1,
            source: InstanceSource::Sampled { ranges },
        }],
        ..DatasetConfig::default()
    };
    generate_fixtures(&config, Execution::Parallel)
        .unwrap()
        .fixtures
        .remove(0)
}

fn validation(c: &mut Criterion) {
    let fixtures = [
        (
            "arm",
            fixture(FamilyRanges::Arm(ArmRanges {
                n_joints: vec![4],
                ..ArmRanges::default()
            })),
        ),
        (
            "nvdex",
            fixture(FamilyRanges::Nvdex(NvdexRanges {
                modules: vec![2],
                ..NvdexRanges::default()
            })),
        ),
    ];
    let cfg = ValidationConfig::default();
    let mut group = c.benchmark_group("validate_instance");
    group.sample_size(10);
    for (family, f) in &fixtures {
        let inst = f.build_instance().unwrap();
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(mode, family), &inst, |b, inst| {
                b.iter(|| validate_instance(black_box(inst), &cfg, 7, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let f = fixture(FamilyRanges::Nvdex(NvdexRanges::default()));
    let protocol = Protocol {
        n_trials: 64,
        horizon: Some(200),
        bootstrap: BootstrapConfig {
            resamples: 2000,
            ..BootstrapConfig::default()
        },
        ..Protocol::default()
    };
    let policy = PolicySpec::Scaled { kappa: 0.8 };
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (mode, exec) in MODES {
        group.bench_function(mode, |b| {
            b.iter(|| evaluate(black_box(&f), &policy, &protocol, exec).unwrap())
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let values: Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64 / 7.0).collect();
    let cfg = BootstrapConfig::default();
    let mut group = c.benchmark_group("paired_bootstrap");
    for (mode, exec) in MODES {
        group.bench_function(mode, |b| {
            b.iter(|| paired_bootstrap(black_box(&values), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, validation, evaluation, bootstrap);
criterion_main!(benches);
