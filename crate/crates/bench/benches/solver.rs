use condiff_core::assembly::FormulationOperator;
use condiff_core::linsolve::LinearSolver;
use condiff_core::runner::{build_context, run};
use condiff_core::{FormulationKind, RunConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bench_basis_tables(c: &mut Criterion) {
    let space = condiff_core::spline::SplineSpace2D::new(2, 32, 32, [1.0, 1.0]).unwrap();
    c.bench_function("eval_basis_2d", |b| {
        b.iter(|| space.eval_basis(black_box(17), black_box(0.3), black_box(-0.7)).unwrap())
    });
}

fn bench_assembly(c: &mut Criterion) {
    let cfg = RunConfig::preset(32, FormulationKind::GlsDynamic);
    let ctx = build_context(&cfg).unwrap();
    c.bench_function("operator_build_glsd_32", |b| {
        b.iter(|| FormulationOperator::build(FormulationKind::GlsDynamic, black_box(&ctx)).unwrap())
    });
}

fn bench_step_solve(c: &mut Criterion) {
    let cfg = RunConfig::preset(32, FormulationKind::DynamicOrthogonal);
    let ctx = build_context(&cfg).unwrap();
    let op = FormulationOperator::build(FormulationKind::DynamicOrthogonal, &ctx).unwrap();
    let solver = LinearSolver::prepare(&op.matrix, op.structure).unwrap();
    let rhs: Vec<f64> = (0..op.matrix.n_rows)
        .map(|i| ((i % 13) as f64 - 6.0) * 1e-3)
        .collect();
    c.bench_function("solve_do_32", |b| {
        b.iter(|| solver.solve(&op.matrix, black_box(&rhs)).unwrap())
    });
}

fn bench_full_run(c: &mut Criterion) {
    let mut cfg = RunConfig::preset(16, FormulationKind::GlsDynamic);
    cfg.end_time = 0.25;
    cfg.snapshot_times.clear();
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    group.bench_function("glsd_16_quarter_loop", |b| b.iter(|| run(black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group!(
    benches,
    bench_basis_tables,
    bench_assembly,
    bench_step_solve,
    bench_full_run
);
criterion_main!(benches);
