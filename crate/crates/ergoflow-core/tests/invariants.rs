//! Module-level invariants beyond the in-module unit tests: statistical
//! measure invariance, evaluation boundedness, suspension/base-map
//! consistency, property-based polynomial identities, substitution tails,
//! and the maximal-function regression baseline.

use ergoflow_core::average::{power_substitute_check, QuadratureConfig};
use ergoflow_core::diagnostics::maximal_ensemble_norm_discrete;
use ergoflow_core::discrete::{DObservable, DSystem};
use ergoflow_core::flow::{sample_invariant, FlowSpec, MeasureSampler};
use ergoflow_core::flows::{BaseMap, MultiBase, MultiSuspensionSpec};
use ergoflow_core::observable::{exact_integral, Observable};
use ergoflow_core::phase::{distance, BasePoint, PhasePoint};
use ergoflow_core::poly::{shift_scale_decompose, Polynomial};
use ergoflow_core::rng::CounterRng;
use ergoflow_core::C64;
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// flow-core invariants
// ---------------------------------------------------------------------------

/// Statistical measure invariance: for observables carrying an exact
/// integral, the sample mean moves by at most 4·(sample std)/√n when the
/// whole sample is pushed forward by a fixed time.
#[test]
fn measure_invariance_statistical() {
    let cases: Vec<(FlowSpec, Observable)> = vec![
        (
            FlowSpec::kronecker(vec![2f64.sqrt()]),
            Observable::TorusCharacter(vec![1]),
        ),
        (
            FlowSpec::suspension(BaseMap::Permutation(vec![1, 2, 0])),
            Observable::Product(vec![
                Observable::BaseFunction(vec![
                    C64::new(1.0, 0.0),
                    C64::new(-0.5, 0.0),
                    C64::new(0.25, 0.0),
                ]),
                Observable::FiberCharacter(vec![1]),
            ]),
        ),
    ];
    let n = 4000usize;
    for (flow, obs) in cases {
        let sampler = MeasureSampler::uniform(flow.clone(), 99);
        let points = sample_invariant(&sampler, n).unwrap();
        let vals: Vec<C64> = points.iter().map(|p| obs.eval(p).unwrap()).collect();
        let mean: C64 = vals.iter().sum::<C64>() / n as f64;
        let std = (vals.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / n as f64).sqrt();
        for &t in &[0.3, 1.7] {
            let moved: C64 = points
                .iter()
                .map(|p| obs.eval(&flow.evolve1(p, t).unwrap()).unwrap())
                .sum::<C64>()
                / n as f64;
            assert!(
                (moved - mean).norm() <= 4.0 * std / (n as f64).sqrt(),
                "flow {flow:?} t={t}: drift {} vs 4σ/√n {}",
                (moved - mean).norm(),
                4.0 * std / (n as f64).sqrt()
            );
        }
        // sanity: the exact integral agrees with the sample mean at 4σ
        let space = flow.space();
        if let Some(exact) = exact_integral(&obs, &space) {
            assert!((mean - exact).norm() <= 4.0 * std / (n as f64).sqrt() + 1e-12);
        }
    }
}

/// Boundedness: 10⁵ random evaluations stay under the sup-norm bound.
#[test]
fn eval_bounded_by_sup_norm() {
    let obs = Observable::Sum(vec![
        (C64::new(0.7, -0.2), Observable::TorusCharacter(vec![3, -1])),
        (
            C64::new(0.1, 0.0),
            Observable::Product(vec![
                Observable::TorusCharacter(vec![1, 0]),
                Observable::TorusCharacter(vec![0, 2]),
            ]),
        ),
        (C64::new(0.0, 1.5), Observable::constant(0.5)),
    ]);
    let bound = obs.sup_norm();
    let mut rng = CounterRng::stream(7, 0);
    for _ in 0..100_000 {
        let x = PhasePoint::Torus(vec![rng.uniform(), rng.uniform()]);
        assert!(obs.eval(&x).unwrap().norm() <= bound + 1e-12);
    }
}

/// Identity: evolve by zero is exact on torus and suspensions, and within
/// 1e-12 for the modular surface.
#[test]
fn identity_time_is_exact() {
    let torus = FlowSpec::kronecker(vec![0.123, 2f64.sqrt()]);
    let x = PhasePoint::Torus(vec![0.25, 0.75]);
    assert_eq!(torus.evolve1(&x, 0.0).unwrap(), x);

    let susp = FlowSpec::suspension(BaseMap::Rotation(0.618));
    let y = PhasePoint::Suspension {
        base: BasePoint::Circle(0.4),
        fiber: vec![0.9],
    };
    assert_eq!(susp.evolve1(&y, 0.0).unwrap(), y);

    let geo = FlowSpec::Sl2(ergoflow_core::flows::Sl2FlowSpec {
        kind: ergoflow_core::flows::Sl2Kind::Geodesic,
        speed: 1.0,
    });
    let p = PhasePoint::Sl2(ergoflow_core::flows::sl2::haar_sample(3, 1, 1e3)[0].clone());
    let p0 = geo.evolve1(&p, 0.0).unwrap();
    assert!(distance(&p, &p0) <= 1e-12);
}

/// Group law across families, including a product flow with routing.
#[test]
fn group_law_across_families() {
    let flows: Vec<(FlowSpec, PhasePoint)> = vec![
        (
            FlowSpec::suspension(BaseMap::Permutation(vec![2, 0, 1])),
            PhasePoint::Suspension {
                base: BasePoint::State(1),
                fiber: vec![0.35],
            },
        ),
        (
            FlowSpec::suspension(BaseMap::Rotation(2f64.sqrt() - 1.0)),
            PhasePoint::Suspension {
                base: BasePoint::Circle(0.2),
                fiber: vec![0.8],
            },
        ),
        (
            FlowSpec::Product(ergoflow_core::flows::ProductFlowSpec {
                components: vec![
                    FlowSpec::kronecker(vec![0.3]),
                    FlowSpec::suspension(BaseMap::Permutation(vec![1, 0])),
                ],
                routing: vec![vec![1.0], vec![-0.5]],
                param_dim: 1,
            }),
            PhasePoint::Product(vec![
                PhasePoint::Torus(vec![0.6]),
                PhasePoint::Suspension {
                    base: BasePoint::State(0),
                    fiber: vec![0.25],
                },
            ]),
        ),
    ];
    for (flow, x) in flows {
        for &(s, t) in &[(0.3, 1.7), (2.25, -5.5), (-0.8, 0.8)] {
            let one = flow.evolve1(&x, s + t).unwrap();
            let two = flow.evolve1(&flow.evolve1(&x, s).unwrap(), t).unwrap();
            assert!(
                distance(&one, &two) <= 1e-9,
                "{flow:?} at ({s},{t}): {}",
                distance(&one, &two)
            );
        }
    }
}

// ---------------------------------------------------------------------------
// flows-zoo invariants
// ---------------------------------------------------------------------------

/// The suspension's time-n map at fiber 0 equals the n-fold base map,
/// exactly, for all n ≤ 50.
#[test]
fn suspension_time_n_equals_base_power() {
    let bases = vec![
        BaseMap::Permutation(vec![1, 2, 3, 0]),
        BaseMap::Permutation(vec![3, 2, 1, 0]),
        BaseMap::Rotation(0.381966),
    ];
    for base in bases {
        let flow = FlowSpec::suspension(base.clone());
        let start_base = match &base {
            BaseMap::Permutation(_) => BasePoint::State(2),
            BaseMap::Rotation(_) => BasePoint::Circle(0.125),
        };
        let x = PhasePoint::Suspension {
            base: start_base.clone(),
            fiber: vec![0.0],
        };
        for n in 0..=50i64 {
            let moved = flow.evolve1(&x, n as f64).unwrap();
            let expected = PhasePoint::Suspension {
                base: base.apply(&start_base, n).unwrap(),
                fiber: vec![0.0],
            };
            match (&moved, &expected) {
                (
                    PhasePoint::Suspension { base: a, fiber: fa },
                    PhasePoint::Suspension { base: b, .. },
                ) => {
                    match (a, b) {
                        (BasePoint::State(x1), BasePoint::State(x2)) => assert_eq!(x1, x2),
                        (BasePoint::Circle(c1), BasePoint::Circle(c2)) => {
                            assert!((c1 - c2).abs() < 1e-9, "n={n}")
                        }
                        _ => panic!(),
                    }
                    assert!(fa[0] == 0.0 || fa[0] > 1.0 - 1e-9, "fiber {fa:?}");
                }
                _ => panic!(),
            }
        }
    }
}

/// The multi-suspension evolves by (t₁, 0) then (0, t₂) exactly as by
/// (t₁, t₂) on finite bases.
#[test]
fn multi_suspension_commutes_exactly() {
    let spec = MultiSuspensionSpec {
        base: MultiBase::Finite(vec![vec![1, 0, 3, 2], vec![2, 3, 0, 1]]),
    };
    let flow = FlowSpec::MultiSuspension(spec);
    let x = PhasePoint::Suspension {
        base: BasePoint::State(1),
        fiber: vec![0.3, 0.65],
    };
    let mut rng = CounterRng::stream(15, 0);
    for _ in 0..200 {
        let t1 = rng.uniform_in(0.0, 8.0);
        let t2 = rng.uniform_in(0.0, 8.0);
        let a = flow
            .evolve(&flow.evolve(&x, &[t1, 0.0]).unwrap(), &[0.0, t2])
            .unwrap();
        let b = flow.evolve(&x, &[t1, t2]).unwrap();
        match (&a, &b) {
            (
                PhasePoint::Suspension { base: ba, fiber: fa },
                PhasePoint::Suspension { base: bb, fiber: fb },
            ) => {
                assert_eq!(ba, bb, "t=({t1},{t2})");
                for (u, v) in fa.iter().zip(fb) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
            _ => panic!(),
        }
    }
}

// ---------------------------------------------------------------------------
// poly-algebra properties
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Eq-style decomposition identity under random coefficients.
    #[test]
    fn prop_decomposition_identity(
        deg in 2usize..=5,
        seedish in 0u64..1_000_000,
        delta in 1e-3f64..1.0,
        n in -100i64..100,
        t in -10.0f64..10.0,
    ) {
        let mut rng = CounterRng::stream(seedish, 0);
        let mut coeffs = vec![0.0];
        for _ in 1..=deg {
            coeffs.push(rng.uniform_in(-3.0, 3.0));
        }
        if coeffs[deg] == 0.0 {
            coeffs[deg] = 1.0;
        }
        let q = Polynomial::new(coeffs);
        let d = shift_scale_decompose(&q, delta).unwrap();
        let lhs = q.eval(n as f64 * delta + t);
        let rhs = d.eval_rhs(&q, n as f64, t);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    /// Composition with linear maps is associative in coefficients.
    #[test]
    fn prop_compose_linear_associativity(
        c0 in -4i32..4, c1 in -4i32..4, c2 in -4i32..4, c3 in -4i32..4,
        a in prop::sample::select(vec![0.5f64, 1.0, 2.0, -1.5, 0.25]),
        b in prop::sample::select(vec![0.0f64, 1.0, -2.0, 0.5]),
        c in prop::sample::select(vec![1.0f64, -0.5, 2.0]),
        d in prop::sample::select(vec![0.0f64, -1.0, 0.25]),
    ) {
        let q = Polynomial::new(vec![c0 as f64, c1 as f64, c2 as f64, c3 as f64]);
        let lhs = q.compose_linear(a, b).compose_linear(c, d);
        let rhs = q.compose_linear(a * c, a * d + b);
        prop_assert_eq!(lhs.degree(), rhs.degree());
        for (x, y) in lhs.coeffs().iter().zip(rhs.coeffs()) {
            prop_assert!((x - y).abs() <= 1e-11 * (1.0 + x.abs()));
        }
    }

    /// Floor orbits agree with integer arithmetic on integer polynomials.
    #[test]
    fn prop_floor_orbit_integer_polys(
        a in -50i64..50, b in -50i64..50, c in -50i64..50, n in -1000i64..1000,
    ) {
        let p = Polynomial::new(vec![c as f64, b as f64, a as f64]);
        let direct = a * n * n + b * n + c;
        prop_assert_eq!(ergoflow_core::poly::floor_poly_orbit(&p, n).unwrap(), direct);
    }
}

// ---------------------------------------------------------------------------
// averaging-engine invariants
// ---------------------------------------------------------------------------

/// Power-substitution tail: for a Kronecker character and exponent 2, both
/// curves converge to 0 and their tails at M = 10⁴ differ by ≤ 0.05.
#[test]
fn power_substitute_tail_gap() {
    let flow = FlowSpec::kronecker(vec![2f64.sqrt()]);
    let obs = Observable::TorusCharacter(vec![1]);
    let x = PhasePoint::Torus(vec![0.2]);
    let quad = QuadratureConfig::default_geometric();
    let (base, subst) = power_substitute_check(&flow, &obs, &x, 2.0, &quad).unwrap();
    let gap = (base.last_value() - subst.last_value()).norm();
    assert!(gap <= 0.05, "tail gap {gap}");
    assert!(base.last_value().norm() < 0.01);
    assert!(subst.last_value().norm() < 0.05);
}

/// The compiled oscillatory path with fractional exponents agrees with an
/// independent midpoint Riemann sum at plan level.
#[test]
fn thmb_fractional_exponent_matches_riemann() {
    use ergoflow_core::average::{continuous_average, AveragePlan, PlanForm, Rational};
    use ergoflow_core::observable::e2pi;
    let alpha_t = 2f64.sqrt();
    let sigma = 0.01;
    let plan = AveragePlan {
        form: PlanForm::ThmB {
            a: Rational::new(1, 2).unwrap(),
            q_poly: Polynomial::monomial(1.0, 2),
            alpha: 0.5,
            beta: 1.0,
        },
        flows: vec![
            FlowSpec::kronecker(vec![alpha_t]),
            FlowSpec::kronecker(vec![sigma]),
        ],
        observables: vec![
            Observable::TorusCharacter(vec![1]),
            Observable::TorusCharacter(vec![2]),
            Observable::TorusCharacter(vec![1]),
        ],
    };
    let x = PhasePoint::Torus(vec![0.0]);
    let m = 500.0;
    let quad = QuadratureConfig {
        m_grid: vec![m],
        ..QuadratureConfig::default_geometric()
    };
    let engine = continuous_average(&plan, &x, &quad).unwrap().points[0].value();
    // f₁f₂ at t^0.5 contributes (1+2·(1/2))·√2·√t = 2√2·√t; g gives σt²
    let steps = 2_000_000usize;
    let h = m / steps as f64;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..steps {
        let t = (i as f64 + 0.5) * h;
        acc += e2pi(2.0 * alpha_t * t.sqrt() + sigma * t * t) * h;
    }
    let bf = acc / m;
    assert!(
        (engine - bf).norm() < 2e-5,
        "engine {engine:?} riemann {bf:?}"
    );
}

/// Midpoint and Gauss-4 panel rules agree on a resolved direct integrand.
#[test]
fn midpoint_cross_checks_gauss() {
    use ergoflow_core::average::{continuous_average, AveragePlan, PlanForm, Rational, Strategy};
    let plan = AveragePlan {
        form: PlanForm::ThmA {
            a: Rational::new(1, 1).unwrap(),
            q_poly: Polynomial::monomial(1.0, 2),
        },
        flows: vec![
            FlowSpec::kronecker(vec![0.7]),
            FlowSpec::kronecker(vec![0.05]),
        ],
        observables: vec![
            Observable::TorusCharacter(vec![1]),
            Observable::TorusCharacter(vec![0]),
            Observable::TorusCharacter(vec![1]),
        ],
    };
    let x = PhasePoint::Torus(vec![0.3]);
    let gauss = QuadratureConfig {
        strategy: Strategy::Direct,
        m_grid: vec![80.0],
        ..QuadratureConfig::default_geometric()
    };
    let mid = QuadratureConfig {
        rule: ergoflow_core::quad::PanelRule::Midpoint,
        step: 0.004,
        ..gauss.clone()
    };
    let vg = continuous_average(&plan, &x, &gauss).unwrap().points[0].value();
    let vm = continuous_average(&plan, &x, &mid).unwrap().points[0].value();
    assert!((vg - vm).norm() < 1e-5, "gauss {vg:?} midpoint {vm:?}");
}

// ---------------------------------------------------------------------------
// diagnostics invariants
// ---------------------------------------------------------------------------

/// Maximal-function ensemble statistic on rotations: the observed L² ratio
/// of sup_{N ≤ 10⁴}|polynomial averages| stays under the regression bound
/// 50, and near its pinned first-run baseline.
#[test]
fn maximal_function_rotation_baseline() {
    let sys = DSystem::Rotation(2f64.sqrt() - 1.0);
    // mixed spectrum so the maximal function is not pinned at N = 1
    let f = DObservable::Sum(vec![
        (C64::new(1.0, 0.0), DObservable::CircleChar(1)),
        (C64::new(0.5, 0.0), DObservable::CircleChar(2)),
        (C64::new(0.0, 0.25), DObservable::CircleChar(-3)),
    ]);
    // a unimodular character gives exactly 1 (sup attained at N = 1)
    let unimodular = maximal_ensemble_norm_discrete(
        &sys,
        &DObservable::CircleChar(1),
        &Polynomial::monomial(2f64.sqrt(), 1),
        10_000,
        1000,
        2024,
    )
    .unwrap();
    assert!((unimodular.ratio - 1.0).abs() <= 1e-9);
    // pinned first-run baselines for the floor-orbit families
    for (poly, baseline) in [
        (Polynomial::monomial(2f64.sqrt(), 1), 1.0126150211),
        (Polynomial::monomial(1.0, 2), 1.0147670748),
    ] {
        let stats = maximal_ensemble_norm_discrete(&sys, &f, &poly, 10_000, 1000, 2024).unwrap();
        assert!(stats.ratio <= 50.0, "C = {}", stats.ratio);
        assert!(
            (stats.ratio - baseline).abs() <= 1e-6,
            "ratio {} drifted from pinned baseline {baseline}",
            stats.ratio
        );
    }
}

/// Theorem-D(2) both-sides comparison on a two-parameter torus flow.
#[test]
fn thmd2_both_sides_agree() {
    use ergoflow_core::average::{AveragePlan, PlanForm, Rational};
    use ergoflow_core::diagnostics::{diagnose, EstimatorConfig, Verdict};
    let s = FlowSpec::kronecker_multi(vec![
        vec![2f64.sqrt(), 0.0],
        vec![0.0, 3f64.sqrt()],
    ]);
    let plan = AveragePlan {
        form: PlanForm::ThmD2 {
            c: Rational::new(1, 2).unwrap(),
            beta: 1.0,
            q_poly: Polynomial::monomial(1.0, 2),
        },
        flows: vec![s],
        observables: vec![
            Observable::TorusCharacter(vec![0, 1]),
            Observable::TorusCharacter(vec![1, -1]),
        ],
    };
    let x = PhasePoint::Torus(vec![0.21, 0.58]);
    let quad = QuadratureConfig::default_geometric();
    let rep = diagnose(&plan, &x, &quad, &EstimatorConfig::default_config()).unwrap();
    assert_eq!(rep.verdict, Verdict::ConvergedToPrediction, "{rep:?}");
}

/// Haar sampler + cusp truncation bookkeeping.
#[test]
fn haar_truncation_bias_is_logged_scale() {
    let bias = ergoflow_core::flows::sl2::haar_truncation_bias(1e3);
    assert!(bias < 1e-3);
    assert!(bias > 5e-4);
}
