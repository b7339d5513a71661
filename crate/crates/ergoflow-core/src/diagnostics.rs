//! Convergence diagnostics: oscillation profiles of A(M) curves,
//! predicted-limit assembly from conditional expectations, residual
//! verdicts, and maximal-function ensemble statistics.
//!
//! Predicted limits per form:
//! - ThmA/ThmB product: E(g|I(S))·lim (1/M)∫f₁(T^t)f₂(T^{at})dt
//! - ThmC product: E(f|I(T))·E(g|I(S))
//! - ThmD1 product: E(g|I(S,ℝ²))·∏ E(fⱼ|I(Tⱼ))
//! - ThmD2 integral: lim (1/M)∫ f(S^{cte₂}x)·E(g|I(S^{te₁}))(S^{te₂}x) dt
//! - SL₂ corollary: ∫g dm · ∏ ∫fⱼ dm with grid-quadrature reference
//!   integrals
//!
//! Conditional expectations are symbolic where the observables
//! canonicalize (characters keep or die by exact frequency·velocity dot
//! products; finite tables project to orbit means), grid quadrature for
//! modular-surface bumps, and Birkhoff tail estimates otherwise —
//! unconverged ingredients flag the prediction instead of erroring.

use crate::average::{
    continuous_average, slots_curve, AverageCurve, AveragePlan, PlanForm, QuadratureConfig, Slot,
};
use crate::discrete::{DObservable, DState, DSystem};
use crate::error::{CoreError, Result};
use crate::exec::map_indexed;
use crate::flow::{sample_invariant, FlowSpec, MeasureSampler, SiteAction};
use crate::flows::sl2::{bump_reference_integral, HAAR_Y_MAX};
use crate::flows::BaseMap;
use crate::observable::{canonicalize, Mono, Observable, SiteFactor};
use crate::phase::PhasePoint;
use crate::poly::Polynomial;
use crate::quad::PowerSum;
use crate::rng::CounterRng;
use crate::C64;
use serde::{Deserialize, Serialize};

/// Verdict of a convergence report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ConvergedToPrediction,
    ConvergedElsewhere,
    Unconverged,
}

/// Formula behind a predicted limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormulaTag {
    ThmBProduct,
    ThmCProduct,
    ThmD1Product,
    ThmD2Integral,
    CorollaryProductOfIntegrals,
}

/// One estimated ingredient of a predicted limit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ingredient {
    pub name: String,
    pub re: f64,
    pub im: f64,
    pub error_bar: f64,
    pub provenance: String,
    pub converged: bool,
}

impl Ingredient {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictedLimit {
    pub re: f64,
    pub im: f64,
    pub formula: FormulaTag,
    pub ingredients: Vec<Ingredient>,
    /// True when some ingredient failed its convergence criterion.
    pub flagged: bool,
}

impl PredictedLimit {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Full report for one plan at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub curve: AverageCurve,
    /// (K, sup_{M₁,M₂ ≥ K} |A(M₁) − A(M₂)|) over the horizon grid.
    pub oscillation: Vec<(f64, f64)>,
    pub predicted: PredictedLimit,
    pub residual: f64,
    pub residual_tolerance: f64,
    pub oscillation_tolerance: f64,
    pub verdict: Verdict,
}

/// Estimator knobs for predicted limits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Quadrature for the numeric ingredients (inner double averages,
    /// flow-Birkhoff fallbacks).
    pub quad: QuadratureConfig,
    /// Horizon for discrete conditional expectations.
    pub discrete_horizon: usize,
    /// Tail criterion 1/r for unconverged flags.
    pub r: f64,
    /// Grid resolution per axis for bump reference integrals.
    pub bump_grid: usize,
}

impl EstimatorConfig {
    pub fn default_config() -> EstimatorConfig {
        EstimatorConfig {
            quad: QuadratureConfig::default_geometric(),
            discrete_horizon: 20_000,
            r: 20.0,
            bump_grid: 96,
        }
    }
}

// ---------------------------------------------------------------------------
// Oscillation
// ---------------------------------------------------------------------------

/// Sup over grid pairs M₁, M₂ ≥ K of |A(M₁) − A(M₂)|; non-increasing in K
/// by construction (sup over shrinking index sets). Box curves are keyed
/// by min(M₁,…,M_k).
pub fn oscillation_profile(curve: &AverageCurve, k_grid: &[f64]) -> Vec<(f64, f64)> {
    let keyed: Vec<(f64, C64)> = curve
        .points
        .iter()
        .map(|p| {
            let key = p.m.iter().cloned().fold(f64::INFINITY, f64::min);
            (key, p.value())
        })
        .collect();
    k_grid
        .iter()
        .map(|&k| {
            let tail: Vec<C64> = keyed
                .iter()
                .filter(|(m, _)| *m >= k)
                .map(|(_, v)| *v)
                .collect();
            let mut osc = 0.0f64;
            for i in 0..tail.len() {
                for j in (i + 1)..tail.len() {
                    osc = osc.max((tail[i] - tail[j]).norm());
                }
            }
            (k, osc)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Symbolic invariant projection
// ---------------------------------------------------------------------------

/// Projects a monomial onto the functions invariant under the listed flow
/// directions. Returns None when no symbolic rule applies (SL₂ sites,
/// multi-fiber drives, resonant circle bases); a zero-coefficient result
/// means the term projects to 0.
fn project_mono(mono: &Mono, actions: &[SiteAction], directions: &[usize]) -> Option<Option<Mono>> {
    let mut out = mono.clone();
    for (site, factor) in mono.sites.iter().enumerate() {
        match (factor, &actions[site]) {
            (SiteFactor::One, _) => {}
            (SiteFactor::TorusChar(k), SiteAction::Torus { rows }) => {
                for &j in directions {
                    let dot: f64 = k
                        .iter()
                        .zip(&rows[j])
                        .map(|(&ki, &vi)| ki as f64 * vi)
                        .sum();
                    if dot != 0.0 {
                        return Some(None); // character not invariant → kills the term
                    }
                }
            }
            (
                SiteFactor::Susp {
                    table,
                    circle,
                    fiber,
                },
                SiteAction::Susp { maps, drive },
            ) => {
                // collect which fibers the listed directions actually move
                let mut constrained: Vec<usize> = Vec::new();
                for &j in directions {
                    let active: Vec<usize> = drive[j]
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(i, _)| i)
                        .collect();
                    match active.len() {
                        0 => {}
                        1 => constrained.push(active[0]),
                        _ => return None, // joint drives: no symbolic rule
                    }
                }
                constrained.sort_unstable();
                constrained.dedup();
                if constrained.is_empty() {
                    continue;
                }
                // moving fibers force their frequencies to 0
                for &i in &constrained {
                    if fiber[i] != 0 {
                        return Some(None);
                    }
                }
                match &maps[constrained[0]] {
                    BaseMap::Permutation(_) => {
                        // project the table onto orbits of the driven maps
                        if *circle != 0 {
                            return Some(None);
                        }
                        if let Some(t) = table {
                            let gen_maps: Vec<&Vec<usize>> = constrained
                                .iter()
                                .map(|&i| match &maps[i] {
                                    BaseMap::Permutation(p) => p,
                                    _ => unreachable!(),
                                })
                                .collect();
                            let projected = orbit_mean_table(t, &gen_maps);
                            if let SiteFactor::Susp { table, .. } = &mut out.sites[site] {
                                *table = Some(projected);
                            }
                        }
                    }
                    BaseMap::Rotation(rho) => {
                        // circle base: character e(k·y)·e(m·u) under the
                        // suspension flow; k ≠ 0 survives only on rational
                        // resonance k·ρ ∈ ℤ, which has no symbolic form here
                        if *circle != 0 {
                            let kr = *circle as f64 * rho;
                            if (kr - kr.round()).abs() < 1e-12 {
                                return None;
                            }
                            return Some(None);
                        }
                    }
                }
            }
            (_, SiteAction::Sl2) => return None,
            _ => return None,
        }
    }
    Some(Some(out))
}

fn orbit_mean_table(table: &[C64], maps: &[&Vec<usize>]) -> Vec<C64> {
    let n = table.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // BFS orbit of `start` under the generated group
        let mut orbit = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < orbit.len() {
            let s = orbit[head];
            head += 1;
            for m in maps {
                let next = m[s];
                if !seen[next] {
                    seen[next] = true;
                    orbit.push(next);
                }
            }
        }
        let mean = orbit.iter().map(|&s| table[s]).sum::<C64>() / orbit.len() as f64;
        for &s in &orbit {
            out[s] = mean;
        }
    }
    out
}

/// E(obs | invariant σ-algebra of the flow restricted to `directions`),
/// evaluated at x, with provenance. Falls back from symbolic projection to
/// grid quadrature (SL₂ bumps) to a Birkhoff tail estimate along the flow.
pub fn flow_conditional_expectation(
    flow: &FlowSpec,
    obs: &Observable,
    x: &PhasePoint,
    directions: &[usize],
    cfg: &EstimatorConfig,
    name: &str,
) -> Result<Ingredient> {
    // symbolic path
    if let (Ok(actions), Some(monos)) = (flow.site_actions(), canonicalize(obs, &flow.space())) {
        let mut value = C64::new(0.0, 0.0);
        let mut symbolic = true;
        for mono in &monos {
            match project_mono(mono, &actions, directions) {
                Some(Some(proj)) => value += proj.eval(x)?,
                Some(None) => {}
                None => {
                    symbolic = false;
                    break;
                }
            }
        }
        if symbolic {
            return Ok(Ingredient {
                name: name.into(),
                re: value.re,
                im: value.im,
                error_bar: 0.0,
                provenance: "symbolic".into(),
                converged: true,
            });
        }
    }
    // modular-surface path: geodesic/horocycle flows are mixing, so the
    // conditional expectation is the Haar integral
    if let FlowSpec::Sl2(_) = flow {
        if let Some(v) = sl2_reference_integral(obs, cfg.bump_grid) {
            return Ok(Ingredient {
                name: name.into(),
                re: v.re,
                im: v.im,
                error_bar: 1e-4 * (1.0 + v.norm()),
                provenance: "grid-quadrature".into(),
                converged: true,
            });
        }
    }
    // Birkhoff tail estimate along the first listed flow direction
    let dir = *directions.first().unwrap_or(&0);
    let d = flow.param_dim();
    let mut routing = vec![vec![0.0]; d];
    routing[dir] = vec![1.0];
    let one_param = if d == 1 {
        flow.clone()
    } else {
        FlowSpec::Product(crate::flows::ProductFlowSpec {
            components: vec![flow.clone()],
            routing,
            param_dim: 1,
        })
    };
    let wrapped_obs = if d == 1 {
        obs.clone()
    } else {
        Observable::Component(0, Box::new(obs.clone()))
    };
    let wrapped_x = if d == 1 {
        x.clone()
    } else {
        PhasePoint::Product(vec![x.clone()])
    };
    let slots = vec![Slot {
        flow: one_param,
        obs: wrapped_obs,
        time_arg: vec![PowerSum::new(vec![(1.0, 1.0)])],
    }];
    let points = slots_curve(&slots, &wrapped_x, &cfg.quad, obs.sup_norm())?;
    let tail = points.last().unwrap();
    let half = points.len() / 2;
    let osc = points[half..]
        .iter()
        .map(|p| (p.value() - tail.value()).norm())
        .fold(0.0, f64::max);
    Ok(Ingredient {
        name: name.into(),
        re: tail.re,
        im: tail.im,
        error_bar: osc,
        provenance: "birkhoff-tail".into(),
        converged: osc < 1.0 / cfg.r,
    })
}

/// Haar reference integral of observables on the modular surface, when the
/// tree is built from constants and bumps.
fn sl2_reference_integral(obs: &Observable, grid: usize) -> Option<C64> {
    match obs {
        Observable::Constant(c) => Some(*c),
        Observable::SmoothBump(b) => Some(C64::new(
            bump_reference_integral(b, grid, HAAR_Y_MAX),
            0.0,
        )),
        Observable::Sum(ch) => {
            let mut acc = C64::new(0.0, 0.0);
            for (w, c) in ch {
                acc += w * sl2_reference_integral(c, grid)?;
            }
            Some(acc)
        }
        Observable::RealPart(c) => Some(C64::new(sl2_reference_integral(c, grid)?.re, 0.0)),
        Observable::Product(ch) => {
            // only products with at most one non-constant factor factorize
            let mut acc = C64::new(1.0, 0.0);
            let mut non_const = 0;
            for c in ch {
                if let Observable::Constant(v) = c {
                    acc *= v;
                } else {
                    non_const += 1;
                    if non_const > 1 {
                        return None;
                    }
                    acc *= sl2_reference_integral(c, grid)?;
                }
            }
            Some(acc)
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// predict_limit
// ---------------------------------------------------------------------------

/// Assembles the predicted limit of the plan's average at x.
pub fn predict_limit(
    plan: &AveragePlan,
    x: &PhasePoint,
    cfg: &EstimatorConfig,
) -> Result<PredictedLimit> {
    plan.validate()?;
    // SL₂ plans follow the product-of-Haar-integrals corollary
    if plan.flows.iter().all(|f| matches!(f, FlowSpec::Sl2(_))) {
        let mut ingredients = Vec::new();
        let mut value = C64::new(1.0, 0.0);
        for (i, obs) in plan.observables.iter().enumerate() {
            let v = sl2_reference_integral(obs, cfg.bump_grid).ok_or_else(|| {
                CoreError::Unsupported(
                    "no reference integral for this observable on the modular surface".into(),
                )
            })?;
            ingredients.push(Ingredient {
                name: format!("integral[{i}]"),
                re: v.re,
                im: v.im,
                error_bar: 1e-4 * (1.0 + v.norm()),
                provenance: "grid-quadrature".into(),
                converged: true,
            });
            value *= v;
        }
        return Ok(PredictedLimit {
            re: value.re,
            im: value.im,
            formula: FormulaTag::CorollaryProductOfIntegrals,
            ingredients,
            flagged: false,
        });
    }

    match &plan.form {
        PlanForm::ThmA { a, .. } | PlanForm::ThmB { a, .. } => {
            let cond = flow_conditional_expectation(
                &plan.flows[1],
                &plan.observables[2],
                x,
                &[0],
                cfg,
                "E(g|I(S))",
            )?;
            let double = double_average_limit(
                &plan.flows[0],
                &plan.observables[0],
                &plan.observables[1],
                *a,
                x,
                cfg,
            )?;
            let value = cond.value() * double.value();
            let flagged = !cond.converged || !double.converged;
            Ok(PredictedLimit {
                re: value.re,
                im: value.im,
                formula: FormulaTag::ThmBProduct,
                ingredients: vec![cond, double],
                flagged,
            })
        }
        PlanForm::ThmC { .. } => {
            let ef = flow_conditional_expectation(
                &plan.flows[0],
                &plan.observables[0],
                x,
                &[0],
                cfg,
                "E(f|I(T))",
            )?;
            let eg = flow_conditional_expectation(
                &plan.flows[1],
                &plan.observables[1],
                x,
                &[0],
                cfg,
                "E(g|I(S))",
            )?;
            let value = ef.value() * eg.value();
            let flagged = !ef.converged || !eg.converged;
            Ok(PredictedLimit {
                re: value.re,
                im: value.im,
                formula: FormulaTag::ThmCProduct,
                ingredients: vec![ef, eg],
                flagged,
            })
        }
        PlanForm::ThmD1 { exponents, .. } => {
            let d = exponents.len();
            let mut ingredients = Vec::new();
            let mut value = C64::new(1.0, 0.0);
            let eg = flow_conditional_expectation(
                &plan.flows[d],
                &plan.observables[d],
                x,
                &[0, 1],
                cfg,
                "E(g|I(S,R2))",
            )?;
            value *= eg.value();
            let mut flagged = !eg.converged;
            ingredients.push(eg);
            for j in 0..d {
                let ef = flow_conditional_expectation(
                    &plan.flows[j],
                    &plan.observables[j],
                    x,
                    &[0],
                    cfg,
                    &format!("E(f{}|I(T{}))", j + 1, j + 1),
                )?;
                value *= ef.value();
                flagged |= !ef.converged;
                ingredients.push(ef);
            }
            Ok(PredictedLimit {
                re: value.re,
                im: value.im,
                formula: FormulaTag::ThmD1Product,
                ingredients,
                flagged,
            })
        }
        PlanForm::ThmD2 { c, .. } => {
            // RHS: lim (1/M)∫ f(S^{cte₂}x)·E(g|I(S^{te₁}))(S^{te₂}x) dt.
            // Project g symbolically onto the e₁-invariant algebra, then run
            // that product average at the same horizons.
            let flow = &plan.flows[0];
            let actions = flow.site_actions()?;
            let monos = canonicalize(&plan.observables[1], &flow.space()).ok_or_else(|| {
                CoreError::Unsupported(
                    "ThmD2 predicted limit needs a canonicalizable g".into(),
                )
            })?;
            let mut projected: Vec<Mono> = Vec::new();
            for m in &monos {
                match project_mono(m, &actions, &[0]) {
                    Some(Some(p)) => projected.push(p),
                    Some(None) => {}
                    None => {
                        return Err(CoreError::Unsupported(
                            "no symbolic e1-projection for this g".into(),
                        ))
                    }
                }
            }
            let h = monos_to_observable(&projected, &flow.space());
            let slots = vec![
                Slot {
                    flow: flow.clone(),
                    obs: plan.observables[0].clone(),
                    time_arg: vec![PowerSum::zero(), PowerSum::new(vec![(c.as_f64(), 1.0)])],
                },
                Slot {
                    flow: flow.clone(),
                    obs: h.clone(),
                    time_arg: vec![PowerSum::zero(), PowerSum::new(vec![(1.0, 1.0)])],
                },
            ];
            let sup = plan.observables[0].sup_norm() * h.sup_norm();
            let points = slots_curve(&slots, x, &cfg.quad, sup)?;
            let tail = points.last().unwrap();
            let half = points.len() / 2;
            let osc = points[half..]
                .iter()
                .map(|p| (p.value() - tail.value()).norm())
                .fold(0.0, f64::max);
            let ing = Ingredient {
                name: "rhs-average".into(),
                re: tail.re,
                im: tail.im,
                error_bar: osc,
                provenance: "same-horizon-average".into(),
                converged: osc < 1.0 / cfg.r,
            };
            let flagged = !ing.converged;
            Ok(PredictedLimit {
                re: tail.re,
                im: tail.im,
                formula: FormulaTag::ThmD2Integral,
                ingredients: vec![ing],
                flagged,
            })
        }
        PlanForm::Single { .. } => Err(CoreError::Unsupported(
            "no limit formula for Single-form plans".into(),
        )),
    }
}

/// Rebuilds an observable tree from projected monomials.
fn monos_to_observable(monos: &[Mono], space: &crate::observable::SpaceKind) -> Observable {
    let sites = space.flat_sites();
    let mut terms = Vec::with_capacity(monos.len());
    for m in monos {
        let mut factors: Vec<Observable> = Vec::new();
        for (site_idx, sf) in m.sites.iter().enumerate() {
            let leaf = match sf {
                SiteFactor::One => None,
                SiteFactor::TorusChar(k) => Some(Observable::TorusCharacter(k.clone())),
                SiteFactor::Susp {
                    table,
                    circle,
                    fiber,
                } => {
                    let mut parts = Vec::new();
                    if let Some(t) = table {
                        parts.push(Observable::BaseFunction(t.clone()));
                    }
                    if *circle != 0 {
                        parts.push(Observable::TorusCharacter(vec![*circle]));
                    }
                    if fiber.iter().any(|&f| f != 0) {
                        parts.push(Observable::FiberCharacter(fiber.clone()));
                    }
                    match parts.len() {
                        0 => None,
                        1 => Some(parts.pop().unwrap()),
                        _ => Some(Observable::Product(parts)),
                    }
                }
            };
            if let Some(leaf) = leaf {
                if sites.len() > 1 {
                    factors.push(Observable::Component(site_idx, Box::new(leaf)));
                } else {
                    factors.push(leaf);
                }
            }
        }
        let body = match factors.len() {
            0 => Observable::constant(1.0),
            1 => factors.pop().unwrap(),
            _ => Observable::Product(factors),
        };
        terms.push((m.coeff, body));
    }
    if terms.is_empty() {
        Observable::constant(0.0)
    } else {
        Observable::Sum(terms)
    }
}

/// lim (1/M)∫ f₁(T^t x) f₂(T^{at} x) dt: symbolic for character plans
/// (a compiled term survives iff its phase vanishes identically),
/// otherwise the curve tail at the largest configured horizon.
fn double_average_limit(
    flow: &FlowSpec,
    f1: &Observable,
    f2: &Observable,
    a: crate::average::Rational,
    x: &PhasePoint,
    cfg: &EstimatorConfig,
) -> Result<Ingredient> {
    let slots = vec![
        Slot {
            flow: flow.clone(),
            obs: f1.clone(),
            time_arg: vec![PowerSum::new(vec![(1.0, 1.0)])],
        },
        Slot {
            flow: flow.clone(),
            obs: f2.clone(),
            time_arg: vec![PowerSum::new(vec![(a.as_f64(), 1.0)])],
        },
    ];
    // symbolic: every compiled term with a non-vanishing phase averages to 0
    if let (Ok(actions), (Some(m1), Some(m2))) = (
        flow.site_actions(),
        (
            canonicalize(f1, &flow.space()),
            canonicalize(f2, &flow.space()),
        ),
    ) {
        if actions
            .iter()
            .all(|ac| matches!(ac, SiteAction::Torus { .. }))
        {
            let mut value = C64::new(0.0, 0.0);
            for t1 in &m1 {
                for t2 in &m2 {
                    let dot = |mono: &Mono, scale: f64| -> f64 {
                        let mut acc = 0.0;
                        for (site, sf) in mono.sites.iter().enumerate() {
                            if let SiteFactor::TorusChar(k) = sf {
                                if let SiteAction::Torus { rows } = &actions[site] {
                                    acc += k
                                        .iter()
                                        .zip(&rows[0])
                                        .map(|(&ki, &vi)| ki as f64 * vi)
                                        .sum::<f64>();
                                }
                            }
                        }
                        acc * scale
                    };
                    let rate = dot(t1, 1.0) + dot(t2, a.as_f64());
                    if rate == 0.0 {
                        value += t1.eval(x)? * t2.eval(x)?;
                    }
                }
            }
            return Ok(Ingredient {
                name: "lim double average".into(),
                re: value.re,
                im: value.im,
                error_bar: 0.0,
                provenance: "symbolic".into(),
                converged: true,
            });
        }
    }
    let sup = f1.sup_norm() * f2.sup_norm();
    let points = slots_curve(&slots, x, &cfg.quad, sup)?;
    let tail = points.last().unwrap();
    let half = points.len() / 2;
    let osc = points[half..]
        .iter()
        .map(|p| (p.value() - tail.value()).norm())
        .fold(0.0, f64::max);
    Ok(Ingredient {
        name: "lim double average".into(),
        re: tail.re,
        im: tail.im,
        error_bar: osc,
        provenance: "largest-horizon".into(),
        converged: osc < 1.0 / cfg.r,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Residual tolerance schedule: max(5e-3, 10/M_max), scaled by the
/// observables' sup-norm product so verdicts are invariant under scaling.
pub fn residual_tolerance(m_max: f64, sup_product: f64) -> f64 {
    f64::max(5e-3, 10.0 / m_max) * f64::max(1.0, sup_product)
}

/// Runs the average, assembles the prediction, and issues the verdict.
pub fn diagnose(
    plan: &AveragePlan,
    x: &PhasePoint,
    quad: &QuadratureConfig,
    cfg: &EstimatorConfig,
) -> Result<ConvergenceReport> {
    let curve = continuous_average(plan, x, quad)?;
    let predicted = predict_limit(plan, x, cfg)?;
    let k_grid: Vec<f64> = curve
        .points
        .iter()
        .map(|p| p.m.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let oscillation = oscillation_profile(&curve, &k_grid);
    let m_max = k_grid.last().copied().unwrap_or(1.0);
    let res_tol = residual_tolerance(m_max, curve.sup_product);
    let osc_tol = res_tol;
    // final oscillation: over the top half of the grid
    let final_osc = oscillation
        .get(oscillation.len().saturating_sub(2))
        .map(|&(_, o)| o)
        .unwrap_or(0.0);
    let residual = (curve.last_value() - predicted.value()).norm();
    let verdict = if final_osc > osc_tol {
        Verdict::Unconverged
    } else if residual <= res_tol {
        Verdict::ConvergedToPrediction
    } else {
        Verdict::ConvergedElsewhere
    };
    Ok(ConvergenceReport {
        curve,
        oscillation,
        predicted,
        residual,
        residual_tolerance: res_tol,
        oscillation_tolerance: osc_tol,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Maximal-function ensemble statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalStats {
    /// ‖sup over horizons |A f|‖₂ / ‖f‖₂ over the empirical ensemble.
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub ensemble: usize,
}

/// Continuous maximal statistic: per sampled point, sup over the quad
/// horizon grid of |A(M)| for the Single-form average of `obs` along
/// `q_poly(t)`; reported as an empirical L² ratio against ‖f‖₂.
pub fn maximal_ensemble_norm_continuous(
    flow: &FlowSpec,
    obs: &Observable,
    q_poly: &Polynomial,
    quad: &QuadratureConfig,
    ensemble: usize,
    seed: u64,
) -> Result<MaximalStats> {
    if ensemble == 0 {
        return Err(CoreError::Contract("ensemble must be ≥ 1".into()));
    }
    let sampler = if matches!(flow, FlowSpec::Sl2(_)) {
        MeasureSampler::haar(flow.clone(), seed)
    } else {
        MeasureSampler::uniform(flow.clone(), seed)
    };
    let points = sample_invariant(&sampler, ensemble)?;
    let plan = AveragePlan {
        form: PlanForm::Single {
            q_poly: q_poly.clone(),
            exponent: 1.0,
        },
        flows: vec![flow.clone()],
        observables: vec![obs.clone()],
    };
    let per_point: Vec<Result<(f64, f64)>> = map_indexed(points.len(), |i| {
        let x = &points[i];
        let curve = continuous_average(&plan, x, quad)?;
        let sup = curve
            .points
            .iter()
            .map(|p| p.value().norm())
            .fold(0.0, f64::max);
        let fv = obs.eval(x)?.norm();
        Ok((sup, fv))
    });
    let mut num = 0.0;
    let mut den = 0.0;
    for r in per_point {
        let (sup, fv) = r?;
        num += sup * sup;
        den += fv * fv;
    }
    if den == 0.0 {
        return Err(CoreError::Domain("zero-norm observable".into()));
    }
    Ok(MaximalStats {
        ratio: (num / den).sqrt(),
        numerator: (num / ensemble as f64).sqrt(),
        denominator: (den / ensemble as f64).sqrt(),
        ensemble,
    })
}

/// Discrete maximal statistic: running sup over all N ≤ n_max of the
/// floor-polynomial averages |E_{n<N} f(T^{⌊P(n)⌋}x)|.
pub fn maximal_ensemble_norm_discrete(
    sys: &DSystem,
    f: &DObservable,
    poly: &Polynomial,
    n_max: usize,
    ensemble: usize,
    seed: u64,
) -> Result<MaximalStats> {
    if ensemble == 0 || n_max == 0 {
        return Err(CoreError::Contract(
            "ensemble and horizon must be ≥ 1".into(),
        ));
    }
    sys.validate()?;
    let per_point: Vec<Result<(f64, f64)>> = map_indexed(ensemble, |i| {
        let mut rng = CounterRng::stream(seed, i as u64);
        let x = sample_dstate(sys, &mut rng);
        let fv = f.eval(&x)?.norm();
        let mut acc = C64::new(0.0, 0.0);
        let mut sup = 0.0f64;
        for n in 0..n_max {
            let m = crate::poly::floor_poly_orbit(poly, n as i64)?;
            acc += f.eval(&sys.apply(&x, m)?)?;
            sup = sup.max(acc.norm() / (n + 1) as f64);
        }
        Ok((sup, fv))
    });
    let mut num = 0.0;
    let mut den = 0.0;
    for r in per_point {
        let (sup, fv) = r?;
        num += sup * sup;
        den += fv * fv;
    }
    if den == 0.0 {
        return Err(CoreError::Domain("zero-norm observable".into()));
    }
    Ok(MaximalStats {
        ratio: (num / den).sqrt(),
        numerator: (num / ensemble as f64).sqrt(),
        denominator: (den / ensemble as f64).sqrt(),
        ensemble,
    })
}

fn sample_dstate(sys: &DSystem, rng: &mut CounterRng) -> DState {
    match sys {
        DSystem::Permutation(t) => DState::Finite(rng.below(t.len() as u64) as usize),
        DSystem::Rotation(_) => DState::Circle(rng.uniform()),
        DSystem::Product(parts) => {
            DState::Product(parts.iter().map(|p| sample_dstate(p, rng)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::average::Rational;
    use crate::average::{CurvePoint, Strategy};

    fn kron(alpha: f64) -> FlowSpec {
        FlowSpec::kronecker(vec![alpha])
    }

    fn char_obs(k: i64) -> Observable {
        Observable::TorusCharacter(vec![k])
    }

    fn fake_curve(ms: &[f64], vals: &[f64]) -> AverageCurve {
        AverageCurve {
            points: ms
                .iter()
                .zip(vals)
                .map(|(&m, &v)| CurvePoint {
                    m: vec![m],
                    re: v,
                    im: 0.0,
                    err_estimate: 0.0,
                })
                .collect(),
            plan_hash: "test".into(),
            sup_product: 1.0,
            x: PhasePoint::Torus(vec![0.0]),
        }
    }

    #[test]
    fn oscillation_of_constant_curve_is_zero() {
        let curve = fake_curve(&[10.0, 100.0, 1000.0], &[0.5, 0.5, 0.5]);
        let prof = oscillation_profile(&curve, &[10.0, 100.0]);
        assert!(prof.iter().all(|&(_, o)| o == 0.0));
    }

    #[test]
    fn oscillation_of_reciprocal_curve() {
        let curve = fake_curve(&[10.0, 100.0, 1000.0], &[0.1, 0.01, 0.001]);
        let prof = oscillation_profile(&curve, &[10.0, 100.0]);
        assert!((prof[0].1 - 0.099).abs() < 1e-12);
        assert!((prof[1].1 - 0.009).abs() < 1e-12);
    }

    #[test]
    fn oscillation_is_monotone_nonincreasing() {
        let curve = fake_curve(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 1.0, -1.0]);
        let prof = oscillation_profile(&curve, &[1.0, 2.0, 3.0]);
        assert_eq!(prof[0].1, 2.0);
        for w in prof.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn predict_limit_ergodic_characters_is_zero() {
        // g = e(m·) with m ≠ 0 on an ergodic Kronecker flow: E(g|I) = 0
        let plan = AveragePlan {
            form: PlanForm::ThmB {
                a: Rational::new(1, 1).unwrap(),
                q_poly: Polynomial::monomial(1.0, 2),
                alpha: 1.0,
                beta: 1.0,
            },
            flows: vec![kron(2f64.sqrt()), kron(3f64.sqrt())],
            observables: vec![char_obs(1), char_obs(2), char_obs(1)],
        };
        let x = PhasePoint::Torus(vec![0.3]);
        let p = predict_limit(&plan, &x, &EstimatorConfig::default_config()).unwrap();
        assert_eq!(p.value(), C64::new(0.0, 0.0));
        assert!(!p.flagged);
    }

    #[test]
    fn predict_limit_constants_multiply() {
        let plan = AveragePlan {
            form: PlanForm::ThmA {
                a: Rational::new(1, 1).unwrap(),
                q_poly: Polynomial::monomial(1.0, 2),
            },
            flows: vec![kron(2f64.sqrt()), kron(3f64.sqrt())],
            observables: vec![
                Observable::constant(2.0),
                Observable::constant(3.0),
                Observable::constant(-1.0),
            ],
        };
        let x = PhasePoint::Torus(vec![0.0]);
        let p = predict_limit(&plan, &x, &EstimatorConfig::default_config()).unwrap();
        assert!((p.value() - C64::new(-6.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn predict_limit_nonzero_invariant_character() {
        // S velocity (1, -1), g = e(k·x) with k = (1,1): k·σ = 0, so g is
        // flow-invariant and E(g|I) = g(x) ≠ 0
        let s_flow = FlowSpec::kronecker(vec![1.0, -1.0]);
        let t_flow = FlowSpec::kronecker(vec![2f64.sqrt(), 0.0]);
        let plan = AveragePlan {
            form: PlanForm::ThmB {
                a: Rational::new(1, 1).unwrap(),
                q_poly: Polynomial::monomial(1.0, 2),
                alpha: 1.0,
                beta: 1.0,
            },
            flows: vec![t_flow, s_flow],
            observables: vec![
                Observable::TorusCharacter(vec![1, -1]),
                Observable::TorusCharacter(vec![-1, 1]),
                Observable::TorusCharacter(vec![1, 1]),
            ],
        };
        let x = PhasePoint::Torus(vec![0.2, 0.6]);
        let p = predict_limit(&plan, &x, &EstimatorConfig::default_config()).unwrap();
        // E(g|I)(x) = e((1,1)·x); double limit: f₁f₂ phase rate:
        // (1,-1)·α + (-1,1)·α = 0 ⇒ term survives: e((1,-1)·x)e((-1,1)·x) = 1
        let expected = crate::observable::e2pi(0.8);
        assert!((p.value() - expected).norm() < 1e-12, "{:?}", p.value());
    }

    #[test]
    fn verdict_is_invariant_under_observable_scaling() {
        let base = AveragePlan {
            form: PlanForm::ThmB {
                a: Rational::new(1, 1).unwrap(),
                q_poly: Polynomial::monomial(1.0, 2),
                alpha: 1.0,
                beta: 1.0,
            },
            flows: vec![kron(2f64.sqrt()), kron(3f64.sqrt())],
            observables: vec![char_obs(1), char_obs(-1), char_obs(1)],
        };
        let scaled = AveragePlan {
            form: base.form.clone(),
            flows: base.flows.clone(),
            observables: vec![
                char_obs(1),
                char_obs(-1),
                Observable::scaled(C64::new(-3.0, 4.0), char_obs(1)),
            ],
        };
        let x = PhasePoint::Torus(vec![0.7]);
        let quad = QuadratureConfig {
            m_grid: vec![100.0, 316.0, 1000.0],
            ..QuadratureConfig::default_geometric()
        };
        let cfg = EstimatorConfig::default_config();
        let r1 = diagnose(&base, &x, &quad, &cfg).unwrap();
        let r2 = diagnose(&scaled, &x, &quad, &cfg).unwrap();
        assert_eq!(r1.verdict, r2.verdict);
        // prediction scales linearly in g
        assert!(
            (r2.predicted.value() - r1.predicted.value() * C64::new(-3.0, 4.0)).norm() < 1e-10
        );
    }

    #[test]
    fn maximal_constant_ratio_is_one() {
        let sys = DSystem::Rotation(2f64.sqrt() - 1.0);
        let f = DObservable::constant(3.0);
        let stats = maximal_ensemble_norm_discrete(
            &sys,
            &f,
            &Polynomial::monomial(1.0, 1),
            100,
            50,
            7,
        )
        .unwrap();
        assert!((stats.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maximal_kronecker_character_ratio_at_most_one() {
        let flow = kron(2f64.sqrt());
        let obs = char_obs(1);
        let quad = QuadratureConfig {
            m_grid: vec![10.0, 31.6, 100.0],
            step: 0.05,
            ..QuadratureConfig::default_geometric()
        };
        let stats = maximal_ensemble_norm_continuous(
            &flow,
            &obs,
            &Polynomial::monomial(1.0, 1),
            &quad,
            100,
            13,
        )
        .unwrap();
        assert!(stats.ratio <= 1.0 + 1e-6, "ratio {}", stats.ratio);
    }

    #[test]
    fn zero_norm_observable_is_domain_error() {
        let sys = DSystem::Rotation(0.5);
        let f = DObservable::constant(0.0);
        assert!(matches!(
            maximal_ensemble_norm_discrete(&sys, &f, &Polynomial::monomial(1.0, 1), 10, 10, 1),
            Err(CoreError::Domain(_))
        ));
    }

    #[test]
    fn single_form_has_no_formula() {
        let plan = AveragePlan {
            form: PlanForm::Single {
                q_poly: Polynomial::monomial(1.0, 2),
                exponent: 1.0,
            },
            flows: vec![kron(1.0)],
            observables: vec![char_obs(1)],
        };
        let x = PhasePoint::Torus(vec![0.0]);
        assert!(matches!(
            predict_limit(&plan, &x, &EstimatorConfig::default_config()),
            Err(CoreError::Unsupported(_))
        ));
    }

    #[test]
    fn suspension_invariant_projection_uses_cycle_means() {
        // suspension over two 2-cycles: E(table|I) is the per-cycle mean
        let flow = FlowSpec::suspension(BaseMap::Permutation(vec![1, 0, 3, 2]));
        let obs = Observable::BaseFunction(vec![
            C64::new(1.0, 0.0),
            C64::new(3.0, 0.0),
            C64::new(10.0, 0.0),
            C64::new(20.0, 0.0),
        ]);
        let x = PhasePoint::Suspension {
            base: crate::phase::BasePoint::State(0),
            fiber: vec![0.3],
        };
        let cfg = EstimatorConfig::default_config();
        let ing = flow_conditional_expectation(&flow, &obs, &x, &[0], &cfg, "E").unwrap();
        assert_eq!(ing.value(), C64::new(2.0, 0.0));
        assert_eq!(ing.provenance, "symbolic");
        // and with a nonzero fiber character the projection is 0
        let obs2 = Observable::Product(vec![obs, Observable::FiberCharacter(vec![1])]);
        let ing2 = flow_conditional_expectation(&flow, &obs2, &x, &[0], &cfg, "E").unwrap();
        assert_eq!(ing2.value(), C64::new(0.0, 0.0));
    }

    #[test]
    fn direct_strategy_diagnose_on_suspension() {
        // contrast fixture shape: suspension flow, deg-2 Q converges to the
        // zero prediction
        let flow = FlowSpec::suspension(BaseMap::Permutation(vec![1, 0]));
        let chi = Observable::BaseFunction(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        let f1 = Observable::Product(vec![chi.clone(), Observable::FiberCharacter(vec![1])]);
        let g = Observable::Product(vec![chi, Observable::FiberCharacter(vec![-1])]);
        let plan = AveragePlan {
            form: PlanForm::ThmA {
                a: Rational::new(1, 1).unwrap(),
                q_poly: Polynomial::monomial(1.0, 2),
            },
            flows: vec![flow.clone(), flow],
            observables: vec![f1, Observable::constant(1.0), g],
        };
        let x = PhasePoint::Suspension {
            base: crate::phase::BasePoint::State(0),
            fiber: vec![0.37],
        };
        let quad = QuadratureConfig {
            m_grid: vec![60.0, 120.0, 240.0],
            step: 0.05,
            strategy: Strategy::Auto,
            ..QuadratureConfig::default_geometric()
        };
        let report = diagnose(&plan, &x, &quad, &EstimatorConfig::default_config()).unwrap();
        assert_eq!(report.predicted.value(), C64::new(0.0, 0.0));
        // curve decays like 1/M: resolution at these horizons just needs to
        // be under the tolerance schedule
        assert!(report.residual <= report.residual_tolerance * 2.0, "{report:?}");
    }
}
