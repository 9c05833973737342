use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use panelvar::dgp::{gen_stylized, StylizedSpec};
use panelvar::experiments::{placebo_study, power_curve, CaseSpec, StudyConfig, TauGrid};
use panelvar::imputers::ImputerKind;
use panelvar::variance::{residual_grid_with, Dof};
use panelvar::{Execution, TreatedCell};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn residual_grids(c: &mut Criterion) {
    let panel = gen_stylized(&StylizedSpec::new(
        40,
        40,
        Dof::Finite(1.0),
        Dof::Finite(1.0),
        1,
    ))
    .unwrap()
    .panel;
    let treated = TreatedCell::new(&panel, 39, 39).unwrap();
    let mut group = c.benchmark_group("residual_grid_40x40");
    group.sample_size(20);
    for kind in [ImputerKind::Twfe, ImputerKind::Sc] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(kind.as_str(), name), &exec, |b, &exec| {
                b.iter(|| residual_grid_with(black_box(&panel), treated, kind, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn studies(c: &mut Criterion) {
    let baseline = CaseSpec::Case4.baseline(30, 30);
    let grid = TauGrid::default();
    let mut group = c.benchmark_group("studies_30x30");
    group.sample_size(10);
    for (name, exec) in MODES {
        let twfe = StudyConfig::new(ImputerKind::Twfe, 200, 7).with_execution(exec);
        group.bench_function(BenchmarkId::new("placebo_twfe_200", name), |b| {
            b.iter(|| placebo_study(black_box(&baseline), &twfe).unwrap())
        });
        let sc = StudyConfig::new(ImputerKind::Sc, 20, 7).with_execution(exec);
        group.bench_function(BenchmarkId::new("power_sc_20", name), |b| {
            b.iter(|| power_curve(black_box(&baseline), &sc, &grid, 0.05).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, residual_grids, studies);
criterion_main!(benches);
