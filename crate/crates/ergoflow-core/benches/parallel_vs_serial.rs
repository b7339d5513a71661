//! Parallel (rayon, default feature) vs sequential-fallback benchmarks on
//! the two ensemble workloads the engine actually parallelizes: Haar
//! Monte Carlo sampling and per-point averaging curves. The fixed-tree
//! reduction keeps both modes bit-identical; these benches measure the
//! throughput difference.
//!
//! Build the sequential core with `--no-default-features` to compare the
//! compiled-out variant; within one build, `map_indexed` vs
//! `map_indexed_seq` shows the same contrast.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ergoflow_core::average::{
    continuous_average, AveragePlan, PlanForm, QuadratureConfig, Rational,
};
use ergoflow_core::exec::{map_indexed, map_indexed_seq, tree_sum};
use ergoflow_core::flow::FlowSpec;
use ergoflow_core::flows::sl2::{haar_point, HAAR_Y_MAX};
use ergoflow_core::observable::Observable;
use ergoflow_core::phase::PhasePoint;
use ergoflow_core::poly::Polynomial;
use ergoflow_core::C64;

fn haar_ensemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("haar_monte_carlo");
    let n = 512usize;
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let pts = map_indexed(n, |i| haar_point(7, i as u64, HAAR_Y_MAX));
            black_box(pts.len())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let pts = map_indexed_seq(n, |i| haar_point(7, i as u64, HAAR_Y_MAX));
            black_box(pts.len())
        })
    });
    group.finish();
}

fn curve_ensemble(c: &mut Criterion) {
    let plan = AveragePlan {
        form: PlanForm::ThmA {
            a: Rational::new(1, 1).unwrap(),
            q_poly: Polynomial::monomial(1.0, 2),
        },
        flows: vec![
            FlowSpec::kronecker(vec![2f64.sqrt()]),
            FlowSpec::kronecker(vec![3f64.sqrt()]),
        ],
        observables: vec![
            Observable::TorusCharacter(vec![1]),
            Observable::TorusCharacter(vec![-2]),
            Observable::TorusCharacter(vec![1]),
        ],
    };
    let quad = QuadratureConfig {
        m_grid: vec![100.0, 1000.0],
        ..QuadratureConfig::default_geometric()
    };
    let points: Vec<PhasePoint> = (0..64)
        .map(|i| PhasePoint::Torus(vec![i as f64 / 64.0]))
        .collect();
    let mut group = c.benchmark_group("curve_ensemble");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let curves = map_indexed(points.len(), |i| {
                continuous_average(&plan, &points[i], &quad)
                    .unwrap()
                    .last_value()
            });
            black_box(tree_sum(&curves))
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let curves = map_indexed_seq(points.len(), |i| {
                continuous_average(&plan, &points[i], &quad)
                    .unwrap()
                    .last_value()
            });
            black_box(tree_sum(&curves))
        })
    });
    group.finish();
}

fn deterministic_reduction(c: &mut Criterion) {
    let values: Vec<C64> = (0..1_000_000)
        .map(|i| {
            let x = i as f64 * 1e-4;
            C64::new(x.sin(), x.cos()) / (1.0 + x)
        })
        .collect();
    let mut group = c.benchmark_group("reduction");
    group.bench_function("fixed_tree", |b| b.iter(|| black_box(tree_sum(&values))));
    group.bench_function("naive_fold", |b| {
        b.iter(|| black_box(values.iter().sum::<C64>()))
    });
    group.finish();
}

criterion_group!(benches, haar_ensemble, curve_ensemble, deterministic_reduction);
criterion_main!(benches);
