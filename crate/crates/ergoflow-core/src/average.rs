//! The continuous-time average forms: plans, quadrature configs, and the
//! engine that turns a plan into an A(M) curve.
//!
//! Two evaluation paths:
//! - a compiled path for plans whose every factor is a character observable
//!   on a torus-translation flow: the integrand collapses to a sum of
//!   constant-coefficient terms e^{2πiφ(t)} with power-sum phases, handled
//!   by the oscillatory integrator at any horizon;
//! - a direct path that evolves the flows at each quadrature node, with
//!   panel boundaries snapped to suspension roof crossings and SL₂ orbits
//!   advanced incrementally.
//!
//! Block averages re-bracket the same panel grid, so block and continuous
//! values agree to floating-point accumulation; that is the content of
//! the re-bracketing identity.

use crate::error::{CoreError, Result};
use crate::exec::{tree_mean, tree_sum};
use crate::flow::{FlowSpec, SiteAction};
use crate::flows::sl2::OrbitWalker;
use crate::observable::{canonicalize, Observable};
use crate::phase::PhasePoint;
use crate::poly::Polynomial;
use crate::quad::{find_sign_changes, oscillatory_integral, PanelRule, PowerSum};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

/// Exact rational parameter a = p/q of Theorem-A/B-form plans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub p: i64,
    pub q: i64,
}

impl Rational {
    pub fn new(p: i64, q: i64) -> Result<Rational> {
        if q <= 0 {
            return Err(CoreError::Contract(format!("rational with q = {q} <= 0")));
        }
        Ok(Rational { p, q })
    }

    pub fn as_f64(&self) -> f64 {
        self.p as f64 / self.q as f64
    }
}

/// Which theorem-form average the plan evaluates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanForm {
    /// (1/M)∫ f₁(T^t x) f₂(T^{at} x) g(S^{Q(t)} x) dt
    ThmA { a: Rational, q_poly: Polynomial },
    /// (1/M)∫ f₁(T^{t^α}x) f₂(T^{at^α}x) g(S^{Q(t^β)}x) dt, 0 < α ≤ β
    ThmB {
        a: Rational,
        q_poly: Polynomial,
        alpha: f64,
        beta: f64,
    },
    /// box average of f(T^{|t|}x) g(S^{|t|²+cP(t)}x), P = Σ lⱼtⱼ
    ThmC { c: f64, linear_form: Vec<i64> },
    /// (1/M)∫ ∏ fⱼ(Tⱼ^{t^{αⱼ}}x) · g(S^{Q(t^β)e₁} S^{t^β e₂} x) dt
    ThmD1 {
        exponents: Vec<f64>,
        beta: f64,
        q_poly: Polynomial,
    },
    /// (1/M)∫ f(S^{ct^β e₂}x) g(S^{Q(t^β)e₁} S^{t^β e₂}x) dt
    ThmD2 {
        c: Rational,
        beta: f64,
        q_poly: Polynomial,
    },
    /// (1/M)∫ f(T^{Q(t^e)}x) dt — one flow, one polynomial
    Single { q_poly: Polynomial, exponent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragePlan {
    pub form: PlanForm,
    pub flows: Vec<FlowSpec>,
    pub observables: Vec<Observable>,
}

/// One multiplicative factor of the integrand: observable `obs` evaluated
/// on `flow` at flow-time `time_arg(t)` (one power sum per flow parameter).
#[derive(Clone)]
pub(crate) struct Slot {
    pub(crate) flow: FlowSpec,
    pub(crate) obs: Observable,
    pub(crate) time_arg: Vec<PowerSum>,
}

impl AveragePlan {
    pub fn validate(&self) -> Result<()> {
        for f in &self.flows {
            f.validate()?;
        }
        let (nf, no) = (self.flows.len(), self.observables.len());
        let arity = |flows: usize, obs: usize, what: &str| -> Result<()> {
            if nf != flows || no != obs {
                return Err(CoreError::Contract(format!(
                    "{what} needs {flows} flows and {obs} observables, got {nf} and {no}"
                )));
            }
            Ok(())
        };
        match &self.form {
            PlanForm::ThmA { q_poly, .. } => {
                arity(2, 3, "ThmA form")?;
                self.check_dims(&[1, 1])?;
                self.check_common_space()?;
                check_poly(q_poly)?;
            }
            PlanForm::ThmB {
                q_poly,
                alpha,
                beta,
                ..
            } => {
                arity(2, 3, "ThmB form")?;
                self.check_dims(&[1, 1])?;
                self.check_common_space()?;
                check_poly(q_poly)?;
                if !(0.0 < *alpha && *alpha <= *beta) {
                    return Err(CoreError::Contract(format!(
                        "ThmB exponents need 0 < α ≤ β, got α={alpha} β={beta}"
                    )));
                }
            }
            PlanForm::ThmC { linear_form, .. } => {
                arity(2, 2, "ThmC form")?;
                self.check_dims(&[1, 1])?;
                self.check_common_space()?;
                let k = linear_form.len();
                if k == 0 {
                    return Err(CoreError::Contract("ThmC needs k ≥ 1".into()));
                }
                if k > 3 {
                    return Err(CoreError::UnsupportedScale(format!(
                        "box averages support k ≤ 3, got {k}"
                    )));
                }
            }
            PlanForm::ThmD1 {
                exponents,
                beta,
                q_poly,
            } => {
                let d = exponents.len();
                arity(d + 1, d + 1, "ThmD1 form")?;
                let mut dims = vec![1usize; d];
                dims.push(2);
                self.check_dims(&dims)?;
                self.check_common_space()?;
                check_poly(q_poly)?;
                let mut prev = 0.0;
                for &a in exponents {
                    if a <= prev {
                        return Err(CoreError::Contract(
                            "ThmD1 exponents must be strictly increasing and positive".into(),
                        ));
                    }
                    prev = a;
                }
                if prev >= *beta {
                    return Err(CoreError::Contract("ThmD1 needs max exponent < β".into()));
                }
            }
            PlanForm::ThmD2 { q_poly, beta, .. } => {
                arity(1, 2, "ThmD2 form")?;
                self.check_dims(&[2])?;
                check_poly(q_poly)?;
                if *beta <= 0.0 {
                    return Err(CoreError::Contract("ThmD2 needs β > 0".into()));
                }
            }
            PlanForm::Single { q_poly, exponent } => {
                arity(1, 1, "Single form")?;
                self.check_dims(&[1])?;
                check_poly(q_poly)?;
                if *exponent <= 0.0 {
                    return Err(CoreError::Contract("Single form needs exponent > 0".into()));
                }
            }
        }
        Ok(())
    }

    fn check_dims(&self, dims: &[usize]) -> Result<()> {
        for (f, &d) in self.flows.iter().zip(dims) {
            if f.param_dim() != d {
                return Err(CoreError::Contract(format!(
                    "flow has parameter dimension {}, form needs {d}",
                    f.param_dim()
                )));
            }
        }
        Ok(())
    }

    fn check_common_space(&self) -> Result<()> {
        let s0 = self.flows[0].space();
        for f in &self.flows[1..] {
            if f.space() != s0 {
                return Err(CoreError::Contract(
                    "plan flows must act on a common phase space".into(),
                ));
            }
        }
        Ok(())
    }

    /// Slots of the product integrand, with their time arguments.
    pub(crate) fn slots(&self) -> Vec<Slot> {
        let t = PowerSum::new(vec![(1.0, 1.0)]);
        match &self.form {
            PlanForm::ThmA { a, q_poly } => vec![
                Slot {
                    flow: self.flows[0].clone(),
                    obs: self.observables[0].clone(),
                    time_arg: vec![t.clone()],
                },
                Slot {
                    flow: self.flows[0].clone(),
                    obs: self.observables[1].clone(),
                    time_arg: vec![t.scale(a.as_f64())],
                },
                Slot {
                    flow: self.flows[1].clone(),
                    obs: self.observables[2].clone(),
                    time_arg: vec![PowerSum::from_poly(q_poly)],
                },
            ],
            PlanForm::ThmB {
                a,
                q_poly,
                alpha,
                beta,
            } => {
                let ta = PowerSum::new(vec![(1.0, *alpha)]);
                vec![
                    Slot {
                        flow: self.flows[0].clone(),
                        obs: self.observables[0].clone(),
                        time_arg: vec![ta.clone()],
                    },
                    Slot {
                        flow: self.flows[0].clone(),
                        obs: self.observables[1].clone(),
                        time_arg: vec![ta.scale(a.as_f64())],
                    },
                    Slot {
                        flow: self.flows[1].clone(),
                        obs: self.observables[2].clone(),
                        time_arg: vec![PowerSum::from_poly(q_poly).compose_power(*beta)],
                    },
                ]
            }
            // ThmC slots depend on the box structure; box_average builds its
            // own integrand. For k = 1 the pseudo-plan path below applies.
            PlanForm::ThmC { .. } => Vec::new(),
            PlanForm::ThmD1 {
                exponents,
                beta,
                q_poly,
            } => {
                let d = exponents.len();
                let mut slots: Vec<Slot> = exponents
                    .iter()
                    .enumerate()
                    .map(|(j, &aj)| Slot {
                        flow: self.flows[j].clone(),
                        obs: self.observables[j].clone(),
                        time_arg: vec![PowerSum::new(vec![(1.0, aj)])],
                    })
                    .collect();
                slots.push(Slot {
                    flow: self.flows[d].clone(),
                    obs: self.observables[d].clone(),
                    time_arg: vec![
                        PowerSum::from_poly(q_poly).compose_power(*beta),
                        PowerSum::new(vec![(1.0, *beta)]),
                    ],
                });
                slots
            }
            PlanForm::ThmD2 { c, beta, q_poly } => vec![
                Slot {
                    flow: self.flows[0].clone(),
                    obs: self.observables[0].clone(),
                    time_arg: vec![PowerSum::zero(), PowerSum::new(vec![(c.as_f64(), *beta)])],
                },
                Slot {
                    flow: self.flows[0].clone(),
                    obs: self.observables[1].clone(),
                    time_arg: vec![
                        PowerSum::from_poly(q_poly).compose_power(*beta),
                        PowerSum::new(vec![(1.0, *beta)]),
                    ],
                },
            ],
            PlanForm::Single { q_poly, exponent } => vec![Slot {
                flow: self.flows[0].clone(),
                obs: self.observables[0].clone(),
                time_arg: vec![PowerSum::from_poly(q_poly).compose_power(*exponent)],
            }],
        }
    }

    /// Product of the observables' sup-norm bounds: every curve value is
    /// bounded by this.
    pub fn sup_product(&self) -> f64 {
        self.observables.iter().map(|o| o.sup_norm()).product()
    }

    /// Stable identifier of (form, flows, observables).
    pub fn plan_hash(&self) -> String {
        let repr = format!("{:?}|{:?}|{:?}", self.form, self.flows, self.observables);
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in repr.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }
}

fn check_poly(q: &Polynomial) -> Result<()> {
    if q.is_zero() || q.degree() < 1 {
        return Err(CoreError::Domain(
            "plan polynomial must have degree ≥ 1".into(),
        ));
    }
    Ok(())
}

/// Evaluation strategy for the engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Compiled character path when available, direct panels otherwise.
    #[default]
    Auto,
    /// Always evolve the flows at panel nodes.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Panel width for the direct path (auto-tuning may shrink it).
    pub step: f64,
    pub rule: PanelRule,
    /// Increasing horizon values M for one-parameter curves.
    pub m_grid: Vec<f64>,
    /// Box horizons (M₁,…,M_k) for ThmC plans.
    #[serde(default)]
    pub box_grid: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub strategy: Strategy,
}

impl QuadratureConfig {
    /// Default geometric horizon grid with the default panel settings.
    pub fn default_geometric() -> QuadratureConfig {
        QuadratureConfig {
            step: 0.05,
            rule: PanelRule::Gauss4,
            m_grid: vec![
                100.0,
                316.22776601683796,
                1000.0,
                3162.2776601683795,
                10000.0,
            ],
            box_grid: None,
            strategy: Strategy::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(CoreError::Config("quadrature step must be > 0".into()));
        }
        if self.m_grid.is_empty() && self.box_grid.is_none() {
            return Err(CoreError::Config("empty horizon grid".into()));
        }
        let mut prev = 0.0;
        for &m in &self.m_grid {
            if !(m > prev) {
                return Err(CoreError::Config(
                    "m_grid must be positive and strictly increasing".into(),
                ));
            }
            prev = m;
        }
        if let Some(first) = self.m_grid.first() {
            if first / self.step < 10.0 {
                return Err(CoreError::Config(format!(
                    "fewer than 10 panels per horizon: step {} at M = {first}",
                    self.step
                )));
            }
        }
        if let Some(boxes) = &self.box_grid {
            for mv in boxes {
                for &m in mv {
                    if !(m > 0.0) {
                        return Err(CoreError::Config("box horizons must be > 0".into()));
                    }
                    if m / self.step < 10.0 {
                        return Err(CoreError::Config(format!(
                            "fewer than 10 panels per horizon: step {} at M = {m}",
                            self.step
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One sampled point of the A(M) curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: Vec<f64>,
    pub re: f64,
    pub im: f64,
    pub err_estimate: f64,
}

impl CurvePoint {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Sampled averaging curve with its provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AverageCurve {
    pub points: Vec<CurvePoint>,
    pub plan_hash: String,
    pub sup_product: f64,
    pub x: PhasePoint,
}

impl AverageCurve {
    pub fn last_value(&self) -> C64 {
        self.points.last().map(|p| p.value()).unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// Compiled character path
// ---------------------------------------------------------------------------

const MAX_TERMS: usize = 512;

/// Integrand as Σ coeff·e^{2πiφ(t)}; present when every slot compiles.
struct Compiled {
    terms: Vec<(C64, PowerSum)>,
}

fn all_torus(actions: &[SiteAction]) -> bool {
    actions.iter().all(|a| matches!(a, SiteAction::Torus { .. }))
}

fn compile_slots(slots: &[Slot], x: &PhasePoint) -> Option<Compiled> {
    if slots.is_empty() {
        return None;
    }
    let mut terms: Vec<(C64, PowerSum)> = vec![(C64::new(1.0, 0.0), PowerSum::zero())];
    for slot in slots {
        let actions = slot.flow.site_actions().ok()?;
        if !all_torus(&actions) {
            return None;
        }
        let monos = canonicalize(&slot.obs, &slot.flow.space())?;
        let mut slot_terms: Vec<(C64, PowerSum)> = Vec::with_capacity(monos.len());
        for mono in &monos {
            let base = mono.eval(x).ok()?;
            // phase: Σ_j (k·velocity row j summed over sites)·τ_j(t)
            let mut phase = PowerSum::zero();
            for (j, tau) in slot.time_arg.iter().enumerate() {
                let mut dot = 0.0;
                for (site, factor) in mono.sites.iter().enumerate() {
                    if let crate::observable::SiteFactor::TorusChar(k) = factor {
                        if let SiteAction::Torus { rows } = &actions[site] {
                            dot += k
                                .iter()
                                .zip(&rows[j])
                                .map(|(&ki, &vi)| ki as f64 * vi)
                                .sum::<f64>();
                        }
                    }
                }
                phase = phase.add(&tau.scale(dot));
            }
            slot_terms.push((base, phase));
        }
        let mut next = Vec::with_capacity(terms.len() * slot_terms.len());
        for (c0, p0) in &terms {
            for (c1, p1) in &slot_terms {
                next.push((c0 * c1, p0.add(p1)));
            }
        }
        if next.len() > MAX_TERMS {
            return None;
        }
        terms = next;
    }
    Some(Compiled { terms })
}

impl Compiled {
    /// ∫_a^b of the integrand, with error estimate.
    fn integral(&self, a: f64, b: f64, tol: f64) -> Result<(C64, f64)> {
        let amp = PowerSum::constant(1.0);
        let mut acc = C64::new(0.0, 0.0);
        let mut err = 0.0;
        let per_term = tol / self.terms.len() as f64;
        for (c, phase) in &self.terms {
            if c.norm() == 0.0 {
                continue;
            }
            let out = oscillatory_integral(phase, &amp, a, b, per_term / c.norm().max(1e-12))?;
            acc += c * out.value;
            err += c.norm() * out.err_estimate;
        }
        Ok((acc, err))
    }
}

// ---------------------------------------------------------------------------
// Direct path
// ---------------------------------------------------------------------------

/// Per-slot evaluator for the direct path. SL₂ slots keep an orbit walker
/// and must be visited at increasing quadrature nodes.
enum SlotEval<'a> {
    Scratch {
        flow: &'a FlowSpec,
        obs: &'a Observable,
        time_arg: Vec<PowerSum>,
    },
    Sl2Walk {
        obs: &'a Observable,
        walker: RefCell<OrbitWalker>,
        tau: PowerSum,
        last_tau: std::cell::Cell<f64>,
    },
}

impl<'a> SlotEval<'a> {
    fn new(slot: &'a Slot, x: &PhasePoint) -> Result<SlotEval<'a>> {
        if let (FlowSpec::Sl2(spec), PhasePoint::Sl2(p)) = (&slot.flow, x) {
            let walker = OrbitWalker::new(spec.clone(), p.clone());
            return Ok(SlotEval::Sl2Walk {
                obs: &slot.obs,
                walker: RefCell::new(walker),
                tau: slot.time_arg[0].clone(),
                last_tau: std::cell::Cell::new(0.0),
            });
        }
        Ok(SlotEval::Scratch {
            flow: &slot.flow,
            obs: &slot.obs,
            time_arg: slot.time_arg.clone(),
        })
    }

    fn eval(&self, x: &PhasePoint, t: f64) -> Result<C64> {
        match self {
            SlotEval::Scratch {
                flow,
                obs,
                time_arg,
            } => {
                let args: Vec<f64> = time_arg.iter().map(|ps| ps.eval(t)).collect();
                let moved = flow.evolve(x, &args)?;
                obs.eval(&moved)
            }
            SlotEval::Sl2Walk {
                obs,
                walker,
                tau,
                last_tau,
            } => {
                let target = tau.eval(t);
                let dt = target - last_tau.get();
                let mut w = walker.borrow_mut();
                w.advance(dt)?;
                last_tau.set(target);
                obs.eval(&PhasePoint::Sl2(w.cur.clone()))
            }
        }
    }
}

/// Conservative bound on the integrand's oscillation rate (turns per unit
/// time) over [0, M]; drives the auto-tuned panel width.
fn rate_bound(slots: &[Slot], m: f64) -> f64 {
    let mut rate = 0.0f64;
    for slot in slots {
        let freq_scale = slot_freq_scale(slot);
        let slot_rate: f64 = slot
            .time_arg
            .iter()
            .map(|ps| {
                ps.deriv()
                    .terms
                    .iter()
                    .map(|&(c, g)| c.abs() * m.max(1.0).powf(g.max(0.0)))
                    .sum::<f64>()
            })
            .map(|r| r * freq_scale)
            .sum();
        rate += slot_rate;
    }
    rate
}

/// Pointwise oscillation rate at time t.
fn rate_at(slots: &[Slot], t: f64) -> f64 {
    let mut rate = 0.0f64;
    for slot in slots {
        let freq_scale = slot_freq_scale(slot);
        let slot_rate: f64 = slot
            .time_arg
            .iter()
            .map(|ps| ps.deriv().eval(t.max(1e-9)).abs())
            .map(|r| r * freq_scale)
            .sum();
        rate += slot_rate;
    }
    rate
}

fn slot_freq_scale(slot: &Slot) -> f64 {
    fn obs_freq(o: &Observable) -> f64 {
        match o {
            Observable::Constant(_) => 0.0,
            Observable::TorusCharacter(k) | Observable::FiberCharacter(k) => {
                k.iter().map(|&x| x.abs() as f64).sum()
            }
            Observable::BaseFunction(_) => 1.0,
            Observable::SmoothBump(b) => 1.0 / b.width.max(1e-3),
            Observable::Product(ch) => ch.iter().map(obs_freq).sum(),
            Observable::Sum(ch) => ch.iter().map(|(_, c)| obs_freq(c)).fold(0.0, f64::max),
            Observable::RealPart(c) => obs_freq(c),
            Observable::Component(_, c) => obs_freq(c),
        }
    }
    let vel_scale: f64 = match &slot.flow {
        FlowSpec::Kronecker(k) => k
            .velocity
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
            .max(1e-12),
        FlowSpec::Sl2(s) => s.speed.abs().max(1e-12),
        _ => 1.0,
    };
    (obs_freq(&slot.obs) * vel_scale).max(0.05)
}

/// Roof-crossing times of the suspension slots inside [a, b]: solutions of
/// τ(t) + z = integer level, per fiber, with τ split into monotone pieces.
fn suspension_crossings(slots: &[Slot], x: &PhasePoint, a: f64, b: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for slot in slots {
        let fibers: &[f64] = match (&slot.flow, x) {
            (FlowSpec::Suspension(_), PhasePoint::Suspension { fiber, .. }) => fiber,
            (FlowSpec::MultiSuspension(_), PhasePoint::Suspension { fiber, .. }) => fiber,
            _ => continue,
        };
        for (j, tau) in slot.time_arg.iter().enumerate() {
            let z = fibers
                .get(j)
                .copied()
                .ok_or_else(|| CoreError::Contract("fiber/parameter arity mismatch".into()))?;
            let mut cuts = vec![a, b];
            find_sign_changes(&tau.deriv(), a, b, &mut cuts);
            cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for w in cuts.windows(2) {
                let (p, q) = (w[0], w[1]);
                let (vp, vq) = (tau.eval(p) + z, tau.eval(q) + z);
                let (lo, hi) = (vp.min(vq), vp.max(vq));
                if hi.floor() - lo.ceil() > 2_000_000.0 {
                    return Err(CoreError::UnsupportedScale(format!(
                        "{} roof crossings on one segment",
                        hi.floor() - lo.ceil()
                    )));
                }
                let increasing = vq >= vp;
                let mut level = lo.ceil();
                while level <= hi {
                    if level > lo && level < hi {
                        let (mut t0, mut t1) = (p, q);
                        for _ in 0..60 {
                            let tm = 0.5 * (t0 + t1);
                            let below = tau.eval(tm) + z < level;
                            if below == increasing {
                                t0 = tm;
                            } else {
                                t1 = tm;
                            }
                        }
                        out.push(0.5 * (t0 + t1));
                    }
                    level += 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Panel boundaries on [a, b]: the absolute uniform grid of the effective
/// width, refined by suspension roof crossings.
fn panel_boundaries(
    slots: &[Slot],
    x: &PhasePoint,
    quad: &QuadratureConfig,
    a: f64,
    b: f64,
    m_scale: f64,
) -> Result<Vec<f64>> {
    // sample the pointwise rate: when it is nearly flat, keep the absolute
    // uniform grid (block averages re-bracket it exactly); when it grows
    // (polynomial time arguments into fast flows), walk an adaptive grid
    let mut r_lo = f64::INFINITY;
    let mut r_hi = 0.0f64;
    for i in 0..=32 {
        let t = a + (b - a) * i as f64 / 32.0;
        let r = rate_at(slots, t);
        r_lo = r_lo.min(r);
        r_hi = r_hi.max(r);
    }
    let mut bounds = Vec::new();
    if r_hi <= 4.0 * r_lo.max(1.0) {
        let auto = 0.2 / rate_bound(slots, m_scale).max(1.0);
        let width = quad.step.min(auto.max(1e-4));
        // absolute grid so nested segments share panel boundaries exactly
        let first = (a / width).ceil() as i64;
        let last = (b / width).floor() as i64;
        bounds.push(a);
        for j in first..=last {
            let t = j as f64 * width;
            if t > a && t < b {
                bounds.push(t);
            }
        }
        bounds.push(b);
    } else {
        let mut t = a;
        bounds.push(a);
        while t < b {
            let w = quad
                .step
                .min((0.2 / rate_at(slots, t).max(1.0)).max(1e-5));
            t = (t + w).min(b);
            bounds.push(t);
            if bounds.len() > 6_000_000 {
                return Err(CoreError::UnsupportedScale(format!(
                    "adaptive panel grid exceeded 6e6 panels on [{a}, {b}]"
                )));
            }
        }
    }
    let crossings = suspension_crossings(slots, x, a, b)?;
    bounds.extend(crossings);
    bounds.sort_by(|x, y| x.partial_cmp(y).unwrap());
    bounds.dedup_by(|p, q| (*p - *q).abs() < 1e-12 * (1.0 + q.abs()));
    if bounds.len() > 6_000_000 {
        return Err(CoreError::UnsupportedScale(format!(
            "{} quadrature panels on [{a}, {b}]",
            bounds.len()
        )));
    }
    Ok(bounds)
}

/// Per-panel integrals of the direct integrand over the panel grid.
fn direct_panel_integrals(
    slots: &[Slot],
    x: &PhasePoint,
    quad: &QuadratureConfig,
    bounds: &[f64],
    sup_product: f64,
) -> Result<(Vec<C64>, f64)> {
    // constant factors evaluate once
    let mut const_factor = C64::new(1.0, 0.0);
    let mut evals: Vec<SlotEval<'_>> = Vec::new();
    for s in slots {
        if let Observable::Constant(c) = &s.obs {
            const_factor *= c;
        } else {
            evals.push(SlotEval::new(s, x)?);
        }
    }
    let mut out = Vec::with_capacity(bounds.len().saturating_sub(1));
    let mut max_width = 0.0f64;
    for w in bounds.windows(2) {
        let (pa, pb) = (w[0], w[1]);
        max_width = max_width.max(pb - pa);
        let mut acc = C64::new(0.0, 0.0);
        for (t, wt) in quad.rule.nodes(pa, pb) {
            let mut v = const_factor;
            for e in &evals {
                v *= e.eval(x, t)?;
            }
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(CoreError::Evaluation { t });
            }
            acc += v * wt;
        }
        out.push(acc);
    }
    // truncation estimate from the panel order and the oscillation bound
    let m = bounds.last().copied().unwrap_or(0.0);
    let rate = rate_bound(slots, m);
    let z = std::f64::consts::PI * max_width * rate;
    let per_panel_rel = match quad.rule {
        PanelRule::Midpoint => (z * z / 6.0).min(2.0),
        PanelRule::Gauss4 => (z.powi(8) / 40320.0).min(2.0),
    };
    let err = per_panel_rel * sup_product * m.max(1.0);
    Ok((out, err))
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Full A(M) curve of the plan over the quadrature config's horizon grid.
///
/// ThmC plans iterate the box grid; everything else integrates one
/// parameter with nested horizon segments.
pub fn continuous_average(
    plan: &AveragePlan,
    x: &PhasePoint,
    quad: &QuadratureConfig,
) -> Result<AverageCurve> {
    plan.validate()?;
    quad.validate()?;
    if let PlanForm::ThmC { .. } = plan.form {
        let boxes = quad
            .box_grid
            .clone()
            .ok_or_else(|| CoreError::Config("ThmC plans need a box grid".into()))?;
        let mut points = Vec::with_capacity(boxes.len());
        for mv in &boxes {
            let (v, e) = box_average(plan, x, mv, quad)?;
            points.push(CurvePoint {
                m: mv.clone(),
                re: v.re,
                im: v.im,
                err_estimate: e,
            });
        }
        return Ok(AverageCurve {
            points,
            plan_hash: plan.plan_hash(),
            sup_product: plan.sup_product(),
            x: x.clone(),
        });
    }

    let slots = plan.slots();
    let points = slots_curve(&slots, x, quad, plan.sup_product())?;
    Ok(AverageCurve {
        points,
        plan_hash: plan.plan_hash(),
        sup_product: plan.sup_product(),
        x: x.clone(),
    })
}

/// Curve of a custom product integrand given directly by slots; used by
/// the limit diagnostics for averages that are not one of the named forms.
pub(crate) fn slots_curve(
    slots: &[Slot],
    x: &PhasePoint,
    quad: &QuadratureConfig,
    sup_product: f64,
) -> Result<Vec<CurvePoint>> {
    quad.validate()?;
    let compiled = match quad.strategy {
        Strategy::Auto => compile_slots(slots, x),
        Strategy::Direct => None,
    };
    let mut points = Vec::with_capacity(quad.m_grid.len());
    match compiled {
        Some(c) => {
            let mut integral = C64::new(0.0, 0.0);
            let mut err = 0.0;
            let mut prev = 0.0;
            for &m in &quad.m_grid {
                let (v, e) = c.integral(prev, m, 1e-9 * (1.0 + m))?;
                integral += v;
                err += e;
                prev = m;
                points.push(CurvePoint {
                    m: vec![m],
                    re: integral.re / m,
                    im: integral.im / m,
                    err_estimate: err / m,
                });
            }
        }
        None => {
            let mut integral = C64::new(0.0, 0.0);
            let mut err = 0.0;
            let mut prev = 0.0;
            let m_max = *quad.m_grid.last().unwrap();
            for &m in &quad.m_grid {
                let bounds = panel_boundaries(slots, x, quad, prev, m, m_max)?;
                let (panels, e) = direct_panel_integrals(slots, x, quad, &bounds, sup_product)?;
                integral += tree_sum(&panels);
                err += e;
                prev = m;
                points.push(CurvePoint {
                    m: vec![m],
                    re: integral.re / m,
                    im: integral.im / m,
                    err_estimate: err / m,
                });
            }
        }
    }
    Ok(points)
}

/// δ-block form E_{n<N} (1/δ)∫₀^δ … of the average over [0, Nδ]: the same
/// panel grid re-bracketed, so it matches the continuous average at M = Nδ
/// to floating-point accumulation when δ is a multiple of the panel width.
pub fn block_average(
    plan: &AveragePlan,
    x: &PhasePoint,
    delta: f64,
    n: usize,
    quad: &QuadratureConfig,
) -> Result<C64> {
    plan.validate()?;
    if !(delta > 0.0) {
        return Err(CoreError::Input(format!(
            "block width δ = {delta} must be > 0"
        )));
    }
    if n == 0 {
        return Err(CoreError::Input("block count must be ≥ 1".into()));
    }
    let m = delta * n as f64;
    let slots = plan.slots();
    let compiled = match quad.strategy {
        Strategy::Auto => compile_slots(&slots, x),
        Strategy::Direct => None,
    };
    if let Some(c) = compiled {
        let block_values: Vec<C64> = (0..n)
            .map(|j| {
                let (v, _) =
                    c.integral(j as f64 * delta, (j + 1) as f64 * delta, 1e-10 * delta)?;
                Ok(v / delta)
            })
            .collect::<Result<_>>()?;
        return Ok(tree_mean(&block_values));
    }
    let mut bounds = panel_boundaries(&slots, x, quad, 0.0, m, m)?;
    // block boundaries must be panel boundaries
    for j in 1..n {
        bounds.push(j as f64 * delta);
    }
    bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bounds.dedup_by(|p, q| (*p - *q).abs() < 1e-12 * (1.0 + q.abs()));
    let (panels, _) = direct_panel_integrals(&slots, x, quad, &bounds, plan.sup_product())?;
    let mut block_values = Vec::with_capacity(n);
    let mut idx = 0;
    for j in 0..n {
        let hi = (j + 1) as f64 * delta;
        let mut grp = Vec::new();
        while idx < panels.len() && bounds[idx + 1] <= hi + 1e-9 * (1.0 + hi) {
            grp.push(panels[idx]);
            idx += 1;
        }
        block_values.push(tree_sum(&grp) / delta);
    }
    Ok(tree_mean(&block_values))
}

/// The two curves of the power-substitution identity: M ↦ (1/M)∫F(t)dt and
/// M ↦ (1/M)∫F(t^δ)dt for F(t) = obs(evolve(x, t)); when the first
/// converges, their tails agree.
pub fn power_substitute_check(
    flow: &FlowSpec,
    obs: &Observable,
    x: &PhasePoint,
    delta_exp: f64,
    quad: &QuadratureConfig,
) -> Result<(AverageCurve, AverageCurve)> {
    if !(delta_exp > 0.0) {
        return Err(CoreError::Input("delta_exp must be > 0".into()));
    }
    let base = AveragePlan {
        form: PlanForm::Single {
            q_poly: Polynomial::monomial(1.0, 1),
            exponent: 1.0,
        },
        flows: vec![flow.clone()],
        observables: vec![obs.clone()],
    };
    let subst = AveragePlan {
        form: PlanForm::Single {
            q_poly: Polynomial::monomial(1.0, 1),
            exponent: delta_exp,
        },
        flows: vec![flow.clone()],
        observables: vec![obs.clone()],
    };
    Ok((
        continuous_average(&base, x, quad)?,
        continuous_average(&subst, x, quad)?,
    ))
}

/// k-dimensional box average of a ThmC plan at box horizon `m`.
///
/// For k = 2 in the compiled case the integral reduces along u = t₁+t₂:
/// the phase is φ(u) + c₁t₁ + c₂t₂ = ψ(u) + f̄·v in rotated coordinates
/// (u, v) = (t₁+t₂, t₁−t₂), and the v-line integrals close over each
/// linear section of the diamond; what remains is a one-dimensional
/// oscillatory integral. k = 1 degenerates to the one-parameter engine;
/// k = 3 and non-compilable plans use direct tensor panels, which caps
/// the affordable horizons.
pub fn box_average(
    plan: &AveragePlan,
    x: &PhasePoint,
    m: &[f64],
    quad: &QuadratureConfig,
) -> Result<(C64, f64)> {
    plan.validate()?;
    let (c, linear_form) = match &plan.form {
        PlanForm::ThmC { c, linear_form } => (*c, linear_form.clone()),
        _ => {
            return Err(CoreError::Contract(
                "box_average needs a ThmC-form plan".into(),
            ))
        }
    };
    let k = linear_form.len();
    if m.len() != k {
        return Err(CoreError::Contract(format!(
            "box horizon of dimension {}, form has k = {k}",
            m.len()
        )));
    }
    if m.iter().any(|&v| !(v > 0.0)) {
        return Err(CoreError::Input("box horizons must be positive".into()));
    }

    if k == 1 {
        // |t| = t on the positive axis: f(T^t x)·g(S^{t² + c·l₁·t} x)
        let l1 = linear_form[0] as f64;
        let q2 = Polynomial::new(vec![0.0, c * l1, 1.0]);
        let pseudo = AveragePlan {
            form: PlanForm::ThmA {
                a: Rational { p: 0, q: 1 },
                q_poly: q2,
            },
            flows: plan.flows.clone(),
            observables: vec![
                plan.observables[0].clone(),
                Observable::constant(1.0),
                plan.observables[1].clone(),
            ],
        };
        let cfg = QuadratureConfig {
            m_grid: vec![m[0]],
            box_grid: None,
            ..quad.clone()
        };
        let curve = continuous_average(&pseudo, x, &cfg)?;
        let p = &curve.points[0];
        return Ok((p.value(), p.err_estimate));
    }

    if quad.strategy == Strategy::Auto && k == 2 {
        if let Some(terms) = compile_box(plan, x) {
            return box_compiled_2d(&terms, c, &linear_form, m);
        }
    }
    box_tensor_direct(plan, x, c, &linear_form, m, quad)
}

struct BoxTerm {
    coeff: C64,
    /// frequency of the f-slot against its flow velocity (u-direction)
    f_dot: f64,
    /// frequency of the g-slot against its flow velocity
    g_dot: f64,
}

fn compile_box(plan: &AveragePlan, x: &PhasePoint) -> Option<Vec<BoxTerm>> {
    let mut out: Vec<BoxTerm> = vec![BoxTerm {
        coeff: C64::new(1.0, 0.0),
        f_dot: 0.0,
        g_dot: 0.0,
    }];
    for (slot_idx, (flow, obs)) in plan.flows.iter().zip(&plan.observables).enumerate() {
        let actions = flow.site_actions().ok()?;
        if !all_torus(&actions) {
            return None;
        }
        let monos = canonicalize(obs, &flow.space())?;
        let mut slot_terms = Vec::with_capacity(monos.len());
        for mono in &monos {
            let base = mono.eval(x).ok()?;
            let mut dot = 0.0;
            for (site, factor) in mono.sites.iter().enumerate() {
                if let crate::observable::SiteFactor::TorusChar(k) = factor {
                    if let SiteAction::Torus { rows } = &actions[site] {
                        dot += k
                            .iter()
                            .zip(&rows[0])
                            .map(|(&ki, &vi)| ki as f64 * vi)
                            .sum::<f64>();
                    }
                }
            }
            slot_terms.push((base, dot));
        }
        let mut next = Vec::with_capacity(out.len() * slot_terms.len());
        for bt in &out {
            for &(cf, dot) in &slot_terms {
                let mut t = BoxTerm {
                    coeff: bt.coeff * cf,
                    f_dot: bt.f_dot,
                    g_dot: bt.g_dot,
                };
                if slot_idx == 0 {
                    t.f_dot += dot;
                } else {
                    t.g_dot += dot;
                }
                next.push(t);
            }
        }
        if next.len() > MAX_TERMS {
            return None;
        }
        out = next;
    }
    Some(out)
}

/// k = 2 compiled box: per term, the phase is
/// a_f·u + a_g·(u² + c(l₁t₁+l₂t₂)) = ψ(u) + f̄·v.
fn box_compiled_2d(
    terms: &[BoxTerm],
    c: f64,
    linear_form: &[i64],
    m: &[f64],
) -> Result<(C64, f64)> {
    let (m1, m2) = (m[0], m[1]);
    let (l1, l2) = (linear_form[0] as f64, linear_form[1] as f64);
    // v-range kinks: min(u, 2M₁−u) switches at u = M₁, max(−u, u−2M₂) at M₂
    let u_break1 = m1.min(m2);
    let u_break2 = m1.max(m2);
    let u_max = m1 + m2;
    let mut acc = C64::new(0.0, 0.0);
    let mut err = 0.0;
    for term in terms {
        if term.coeff.norm() == 0.0 {
            continue;
        }
        let a_f = term.f_dot;
        let a_g = term.g_dot;
        let psi = PowerSum::new(vec![(a_f + a_g * c * (l1 + l2) / 2.0, 1.0), (a_g, 2.0)]);
        let fbar = a_g * c * (l1 - l2) / 2.0;
        // v ∈ [max(−u, u−2M₂), min(u, 2M₁−u)]; dt₁dt₂ = du dv / 2
        let pieces = [(0.0, u_break1), (u_break1, u_break2), (u_break2, u_max)];
        for &(ua, ub) in &pieces {
            if ub <= ua + 1e-15 {
                continue;
            }
            let mid = 0.5 * (ua + ub);
            let (alo, blo) = if -mid >= mid - 2.0 * m2 {
                (-1.0, 0.0)
            } else {
                (1.0, -2.0 * m2)
            };
            let (ahi, bhi) = if mid <= 2.0 * m1 - mid {
                (1.0, 0.0)
            } else {
                (-1.0, 2.0 * m1)
            };
            let tol = 1e-10 * (1.0 + m1 * m2).sqrt() / terms.len() as f64;
            if fbar.abs() < 1e-14 {
                // W(u) = vhi − vlo: linear amplitude
                let amp = PowerSum::new(vec![(bhi - blo, 0.0), (ahi - alo, 1.0)]);
                let out = oscillatory_integral(&psi, &amp, ua, ub, tol)?;
                acc += term.coeff * out.value * 0.5;
                err += term.coeff.norm() * out.err_estimate * 0.5;
            } else {
                // W(u) = (e(f̄·vhi) − e(f̄·vlo)) / (2πi f̄)
                let denom = C64::new(0.0, std::f64::consts::TAU * fbar);
                let amp = PowerSum::constant(1.0);
                let hi_phase =
                    psi.add(&PowerSum::new(vec![(fbar * bhi, 0.0), (fbar * ahi, 1.0)]));
                let lo_phase =
                    psi.add(&PowerSum::new(vec![(fbar * blo, 0.0), (fbar * alo, 1.0)]));
                let oh = oscillatory_integral(&hi_phase, &amp, ua, ub, tol)?;
                let ol = oscillatory_integral(&lo_phase, &amp, ua, ub, tol)?;
                acc += term.coeff * (oh.value - ol.value) / denom * 0.5;
                err += term.coeff.norm() * (oh.err_estimate + ol.err_estimate) / denom.norm()
                    * 0.5;
            }
        }
    }
    let vol = m1 * m2;
    Ok((acc / vol, err / vol))
}

/// Direct tensor-product panels for k ∈ {2, 3}; cost-capped.
fn box_tensor_direct(
    plan: &AveragePlan,
    x: &PhasePoint,
    c: f64,
    linear_form: &[i64],
    m: &[f64],
    quad: &QuadratureConfig,
) -> Result<(C64, f64)> {
    let k = linear_form.len();
    let rate = rate_bound_box(plan, c, linear_form, m);
    let width = quad.step.min((0.2 / rate.max(1.0)).max(1e-3));
    let per_axis: Vec<usize> = m
        .iter()
        .map(|&mi| ((mi / width).ceil() as usize).max(1))
        .collect();
    let total: usize = per_axis.iter().product();
    let nodes_per_panel = quad.rule.nodes(0.0, 1.0).len().pow(k as u32);
    if total.saturating_mul(nodes_per_panel) > 60_000_000 {
        return Err(CoreError::UnsupportedScale(format!(
            "direct box quadrature needs {total} cells at M = {m:?}"
        )));
    }
    let flows = &plan.flows;
    let obs = &plan.observables;
    let mut acc = C64::new(0.0, 0.0);
    let mut idx = vec![0usize; k];
    'panels: loop {
        let mut node_sets = Vec::with_capacity(k);
        for d in 0..k {
            let a = idx[d] as f64 * m[d] / per_axis[d] as f64;
            let b = (idx[d] + 1) as f64 * m[d] / per_axis[d] as f64;
            node_sets.push(quad.rule.nodes(a, b));
        }
        let mut node_idx = vec![0usize; k];
        'nodes: loop {
            let mut t_abs = 0.0;
            let mut wt = 1.0;
            let mut p_lin = 0.0;
            for d in 0..k {
                let (t, w) = node_sets[d][node_idx[d]];
                t_abs += t;
                wt *= w;
                p_lin += linear_form[d] as f64 * t;
            }
            let xf = flows[0].evolve1(x, t_abs)?;
            let xg = flows[1].evolve1(x, t_abs * t_abs + c * p_lin)?;
            let v = obs[0].eval(&xf)? * obs[1].eval(&xg)?;
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(CoreError::Evaluation { t: t_abs });
            }
            acc += v * wt;
            for d in 0..k {
                node_idx[d] += 1;
                if node_idx[d] < node_sets[d].len() {
                    continue 'nodes;
                }
                node_idx[d] = 0;
            }
            break;
        }
        for d in 0..k {
            idx[d] += 1;
            if idx[d] < per_axis[d] {
                continue 'panels;
            }
            idx[d] = 0;
        }
        break;
    }
    let vol: f64 = m.iter().product();
    let z = std::f64::consts::PI * width * rate;
    let per_panel_rel = match quad.rule {
        PanelRule::Midpoint => (z * z / 6.0).min(2.0),
        PanelRule::Gauss4 => (z.powi(8) / 40320.0).min(2.0),
    };
    Ok((acc / vol, per_panel_rel * plan.sup_product()))
}

fn rate_bound_box(plan: &AveragePlan, c: f64, linear_form: &[i64], m: &[f64]) -> f64 {
    let u_max: f64 = m.iter().sum();
    let lmax = linear_form
        .iter()
        .map(|&l| l.abs() as f64)
        .fold(0.0, f64::max);
    let slots = [
        (&plan.flows[0], &plan.observables[0], 1.0),
        (
            &plan.flows[1],
            &plan.observables[1],
            2.0 * u_max + c.abs() * lmax,
        ),
    ];
    let mut rate = 0.0;
    for (flow, obs, tau_rate) in slots {
        let pseudo = Slot {
            flow: flow.clone(),
            obs: obs.clone(),
            time_arg: vec![PowerSum::new(vec![(1.0, 1.0)])],
        };
        rate += slot_freq_scale(&pseudo) * tau_rate;
    }
    rate
}
