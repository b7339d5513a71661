//! Discrete-time averages and the exact finite-system oracles: Birkhoff
//! averages, conditional expectations through the invariant σ-algebra,
//! floor-polynomial orbits, and the suspension transfer identity that
//! rewrites f(T₁^{⌊P₁(n)+z₁⌋}…x) as a partitioned sum over roof-crossing
//! patterns.

use crate::error::{CoreError, Result};
use crate::flows::{MultiBase, MultiSuspensionSpec};
use crate::observable::e2pi;
use crate::phase::{wrap_unit, BasePoint, PhasePoint};
use crate::poly::{floor_poly_orbit, Polynomial};
use crate::rng::CounterRng;
use crate::C64;
use serde::{Deserialize, Serialize};

/// State of a discrete system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DState {
    Finite(usize),
    Circle(f64),
    Product(Vec<DState>),
}

/// Invertible measure-preserving map at desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DSystem {
    /// Finite permutation; state s maps to table[s].
    Permutation(Vec<usize>),
    /// Circle rotation by ρ.
    Rotation(f64),
    /// Product system acting componentwise.
    Product(Vec<DSystem>),
}

impl DSystem {
    pub fn validate(&self) -> Result<()> {
        match self {
            DSystem::Permutation(t) => {
                let n = t.len();
                if n == 0 {
                    return Err(CoreError::Config("empty permutation".into()));
                }
                let mut seen = vec![false; n];
                for &v in t {
                    if v >= n || seen[v] {
                        return Err(CoreError::Config("table is not a bijection".into()));
                    }
                    seen[v] = true;
                }
                Ok(())
            }
            DSystem::Rotation(r) => {
                if r.is_finite() {
                    Ok(())
                } else {
                    Err(CoreError::Config("non-finite rotation".into()))
                }
            }
            DSystem::Product(parts) => {
                if parts.is_empty() {
                    return Err(CoreError::Config("empty product system".into()));
                }
                parts.iter().try_for_each(|p| p.validate())
            }
        }
    }

    /// T^n x (n may be negative).
    pub fn apply(&self, x: &DState, n: i64) -> Result<DState> {
        match (self, x) {
            (DSystem::Permutation(t), DState::Finite(s)) => {
                if *s >= t.len() {
                    return Err(CoreError::Contract(format!(
                        "state {s} outside permutation on {} states",
                        t.len()
                    )));
                }
                let mut len = 1usize;
                let mut cur = t[*s];
                while cur != *s {
                    cur = t[cur];
                    len += 1;
                }
                let mut steps = (n % len as i64 + len as i64) as usize % len;
                let mut cur = *s;
                while steps > 0 {
                    cur = t[cur];
                    steps -= 1;
                }
                Ok(DState::Finite(cur))
            }
            (DSystem::Rotation(rho), DState::Circle(y)) => {
                Ok(DState::Circle(wrap_unit(y + n as f64 * rho)))
            }
            (DSystem::Product(maps), DState::Product(parts)) if maps.len() == parts.len() => {
                Ok(DState::Product(
                    maps.iter()
                        .zip(parts)
                        .map(|(m, p)| m.apply(p, n))
                        .collect::<Result<_>>()?,
                ))
            }
            _ => Err(CoreError::Contract(
                "state variant does not match the system".into(),
            )),
        }
    }

    /// Exhaustive state list for fully finite systems.
    pub fn enumerate_states(&self) -> Option<Vec<DState>> {
        match self {
            DSystem::Permutation(t) => Some((0..t.len()).map(DState::Finite).collect()),
            DSystem::Rotation(_) => None,
            DSystem::Product(parts) => {
                let lists: Option<Vec<Vec<DState>>> =
                    parts.iter().map(|p| p.enumerate_states()).collect();
                let lists = lists?;
                let mut acc: Vec<Vec<DState>> = vec![vec![]];
                for l in &lists {
                    let mut next = Vec::with_capacity(acc.len() * l.len());
                    for prefix in &acc {
                        for s in l {
                            let mut v = prefix.clone();
                            v.push(s.clone());
                            next.push(v);
                        }
                    }
                    acc = next;
                }
                Some(acc.into_iter().map(DState::Product).collect())
            }
        }
    }

    /// Orbit of x when it closes within `cap` steps.
    pub fn orbit(&self, x: &DState, cap: usize) -> Result<Option<Vec<DState>>> {
        let mut orbit = vec![x.clone()];
        let mut cur = x.clone();
        for _ in 0..cap {
            cur = self.apply(&cur, 1)?;
            if cur == *x {
                return Ok(Some(orbit));
            }
            orbit.push(cur.clone());
        }
        Ok(None)
    }
}

/// Observable over discrete states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DObservable {
    Constant(C64),
    /// Finite table over states.
    Table(Vec<C64>),
    /// e^{2πi k y} on a circle state.
    CircleChar(i64),
    Product(Vec<DObservable>),
    Sum(Vec<(C64, DObservable)>),
    RealPart(Box<DObservable>),
    Component(usize, Box<DObservable>),
}

impl DObservable {
    pub fn constant(c: f64) -> DObservable {
        DObservable::Constant(C64::new(c, 0.0))
    }

    pub fn eval(&self, x: &DState) -> Result<C64> {
        Ok(match self {
            DObservable::Constant(c) => *c,
            DObservable::Table(t) => match x {
                DState::Finite(s) => *t.get(*s).ok_or_else(|| {
                    CoreError::Contract(format!("state {s} outside table of {}", t.len()))
                })?,
                _ => return Err(CoreError::Contract("table needs a finite state".into())),
            },
            DObservable::CircleChar(k) => match x {
                DState::Circle(y) => e2pi(*k as f64 * y),
                _ => {
                    return Err(CoreError::Contract(
                        "circle character needs a circle state".into(),
                    ))
                }
            },
            DObservable::Product(ch) => {
                let mut acc = C64::new(1.0, 0.0);
                for c in ch {
                    acc *= c.eval(x)?;
                }
                acc
            }
            DObservable::Sum(ch) => {
                let mut acc = C64::new(0.0, 0.0);
                for (w, c) in ch {
                    acc += w * c.eval(x)?;
                }
                acc
            }
            DObservable::RealPart(c) => C64::new(c.eval(x)?.re, 0.0),
            DObservable::Component(i, c) => match x {
                DState::Product(parts) => c.eval(
                    parts
                        .get(*i)
                        .ok_or_else(|| CoreError::Contract(format!("component {i} outside product")))?,
                )?,
                _ => {
                    return Err(CoreError::Contract(
                        "component reference needs a product state".into(),
                    ))
                }
            },
        })
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            DObservable::Constant(c) => c.norm(),
            DObservable::Table(t) => t.iter().map(|c| c.norm()).fold(0.0, f64::max),
            DObservable::CircleChar(_) => 1.0,
            DObservable::Product(ch) => ch.iter().map(|c| c.sup_norm()).product(),
            DObservable::Sum(ch) => ch.iter().map(|(w, c)| w.norm() * c.sup_norm()).sum(),
            DObservable::RealPart(c) => c.sup_norm(),
            DObservable::Component(_, c) => c.sup_norm(),
        }
    }
}

/// (1/N) Σ_{n<N} f(Tⁿ x).
pub fn birkhoff_average(sys: &DSystem, f: &DObservable, x: &DState, n: usize) -> Result<C64> {
    if n == 0 {
        return Err(CoreError::Contract("birkhoff_average needs N ≥ 1".into()));
    }
    let mut acc = C64::new(0.0, 0.0);
    let mut cur = x.clone();
    for i in 0..n {
        acc += f.eval(&cur)?;
        if i + 1 < n {
            cur = sys.apply(&cur, 1)?;
        }
    }
    Ok(acc / n as f64)
}

/// Estimate of E(f | invariant σ-algebra)(x).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CondExpEstimate {
    pub re: f64,
    pub im: f64,
    pub horizon: usize,
    pub error_bar: f64,
    /// False when the Birkhoff tail still oscillates by ≥ 1/r.
    pub converged: bool,
}

impl CondExpEstimate {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Conditional expectation with respect to the invariant σ-algebra: the
/// exact orbit mean when the orbit of x closes (finite systems — the
/// invariant σ-algebra separates cycles), otherwise the Birkhoff tail mean
/// over [N/2, N] with the tail-oscillation criterion `< 1/r`.
pub fn conditional_expectation(
    sys: &DSystem,
    f: &DObservable,
    x: &DState,
    n: usize,
    r: f64,
) -> Result<CondExpEstimate> {
    if n == 0 {
        return Err(CoreError::Contract(
            "conditional_expectation needs N ≥ 1".into(),
        ));
    }
    if let Some(orbit) = sys.orbit(x, n.min(100_000))? {
        let mut acc = C64::new(0.0, 0.0);
        for s in &orbit {
            acc += f.eval(s)?;
        }
        let v = acc / orbit.len() as f64;
        return Ok(CondExpEstimate {
            re: v.re,
            im: v.im,
            horizon: orbit.len(),
            error_bar: 0.0,
            converged: true,
        });
    }
    // Birkhoff prefix averages; tail window [N/2, N]
    let half = (n / 2).max(1);
    let mut sum = C64::new(0.0, 0.0);
    let mut cur = x.clone();
    let mut tail_sum = C64::new(0.0, 0.0);
    let mut tail_count = 0usize;
    let mut osc_max = 0.0f64;
    let mut tail_first = None;
    for i in 0..n {
        sum += f.eval(&cur)?;
        let prefix = sum / (i + 1) as f64;
        if i + 1 >= half {
            tail_sum += prefix;
            tail_count += 1;
            match tail_first {
                None => tail_first = Some(prefix),
                Some(f0) => osc_max = osc_max.max((prefix - f0).norm()),
            }
        }
        if i + 1 < n {
            cur = sys.apply(&cur, 1)?;
        }
    }
    let estimate = tail_sum / tail_count as f64;
    let converged = osc_max < 1.0 / r;
    Ok(CondExpEstimate {
        re: estimate.re,
        im: estimate.im,
        horizon: n,
        error_bar: osc_max,
        converged,
    })
}

/// (1/N) Σ_{n<N} f(T^{⌊P(n)⌋} x).
pub fn polynomial_average(
    sys: &DSystem,
    f: &DObservable,
    x: &DState,
    p: &Polynomial,
    n: usize,
) -> Result<C64> {
    if n == 0 {
        return Err(CoreError::Contract("polynomial_average needs N ≥ 1".into()));
    }
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let m = floor_poly_orbit(p, i as i64)?;
        acc += f.eval(&sys.apply(x, m)?)?;
    }
    Ok(acc / n as f64)
}

/// (1/N) Σ_{n<N} f₁(T^{an}x) f₂(T^{bn}x).
pub fn double_recurrence_average(
    sys: &DSystem,
    f1: &DObservable,
    f2: &DObservable,
    a: i64,
    b: i64,
    x: &DState,
    n: usize,
) -> Result<C64> {
    if n == 0 {
        return Err(CoreError::Contract(
            "double_recurrence_average needs N ≥ 1".into(),
        ));
    }
    let mut acc = C64::new(0.0, 0.0);
    let mut xa = x.clone();
    let mut xb = x.clone();
    for i in 0..n {
        acc += f1.eval(&xa)? * f2.eval(&xb)?;
        if i + 1 < n {
            xa = sys.apply(&xa, a)?;
            xb = sys.apply(&xb, b)?;
        }
    }
    Ok(acc / n as f64)
}

/// Exhaustive commutation check on a shared finite state space.
fn check_commuting(maps: &[DSystem]) -> Result<()> {
    let states = match maps.first().and_then(|m| m.enumerate_states()) {
        Some(s) => s,
        None => return Ok(()), // rotations commute
    };
    for (i, a) in maps.iter().enumerate() {
        for b in maps.iter().skip(i + 1) {
            for s in &states {
                let ab = a.apply(&b.apply(s, 1)?, 1)?;
                let ba = b.apply(&a.apply(s, 1)?, 1)?;
                if ab != ba {
                    return Err(CoreError::Domain(format!(
                        "maps do not commute at state {s:?}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// E_{n<N} f(T₁^{⌊P₁(n)⌋} ⋯ T_d^{⌊P_d(n)⌋} x) for commuting maps on one
/// state space.
pub fn floor_multi_average(
    maps: &[DSystem],
    polys: &[Polynomial],
    f: &DObservable,
    x: &DState,
    n: usize,
) -> Result<C64> {
    if maps.len() != polys.len() || maps.is_empty() {
        return Err(CoreError::Contract(
            "floor_multi_average needs matching nonempty maps and polynomials".into(),
        ));
    }
    if n == 0 {
        return Err(CoreError::Contract("floor_multi_average needs N ≥ 1".into()));
    }
    check_commuting(maps)?;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let mut cur = x.clone();
        for (map, p) in maps.iter().zip(polys) {
            let m = floor_poly_orbit(p, i as i64)?;
            cur = map.apply(&cur, m)?;
        }
        acc += f.eval(&cur)?;
    }
    Ok(acc / n as f64)
}

/// Outcome of the suspension transfer identity check.
#[derive(Clone, Debug)]
pub struct TransferCheck {
    /// |lhs − rhs| where both sides sum the same table values; exactly 0 on
    /// finite bases with exactly-representable tables.
    pub residual: f64,
    pub lhs: C64,
    pub rhs: C64,
    /// Fiber actually used (re-drawn if the input sat on a crossing
    /// boundary for a sampled n).
    pub z_used: Vec<f64>,
    pub redraws: usize,
}

/// Verifies the transfer identity
/// E_{n<N} f̃(S^{(P₁(n),…,P_d(n))}(x, z)) =
/// (1/N) Σ_{(i₁,…,i_d)∈{0,1}^d} Σ_{n: ϑ(P_j(n)) ∈ L_{i_j}(z_j) ∀j}
///     f(T₁^{⌊P₁(n)⌋}⋯T_d^{⌊P_d(n)⌋}·T₁^{i₁}⋯T_d^{i_d} x)
/// with L₀(z) = [0, 1−z), L₁(z) = [1−z, 1): the left side drives the
/// multi-suspension flow, the right side partitions over crossing patterns.
///
/// If some P_j(n) + z_j sits within 1e-9 of an integer for a sampled n,
/// the fiber is re-drawn deterministically and the redraw is reported.
pub fn suspension_transfer_check(
    spec: &MultiSuspensionSpec,
    f_table: &[C64],
    polys: &[Polynomial],
    x: usize,
    z: &[f64],
    n: usize,
) -> Result<TransferCheck> {
    spec.validate()?;
    let maps = match &spec.base {
        MultiBase::Finite(maps) => maps.clone(),
        MultiBase::Rotations(_) => {
            return Err(CoreError::Contract(
                "suspension transfer check needs a finite base".into(),
            ))
        }
    };
    let d = maps.len();
    if polys.len() != d || z.len() != d {
        return Err(CoreError::Contract(format!(
            "need {d} polynomials and fibers, got {} and {}",
            polys.len(),
            z.len()
        )));
    }
    if n == 0 {
        return Err(CoreError::Contract("transfer check needs N ≥ 1".into()));
    }
    let n_states = maps[0].len();
    if x >= n_states || f_table.len() != n_states {
        return Err(CoreError::Contract(
            "state or table outside the shared state space".into(),
        ));
    }

    let mut z_cur: Vec<f64> = z.to_vec();
    let mut redraws = 0usize;
    'attempt: loop {
        // boundary scan: P_j(n) + z_j within 1e-9 of an integer?
        for p in polys {
            for i in 0..n {
                let v = p.eval(i as f64);
                for &zj in &z_cur {
                    let s = v + zj;
                    if (s - s.round()).abs() < 1e-9 {
                        redraws += 1;
                        if redraws > 64 {
                            return Err(CoreError::NumericInstability {
                                t: i as f64,
                                what: "could not find a boundary-free fiber".into(),
                            });
                        }
                        let mut rng = CounterRng::stream(0xE5_u64 + redraws as u64, 0);
                        z_cur = (0..d).map(|_| rng.uniform()).collect();
                        continue 'attempt;
                    }
                }
            }
        }
        break;
    }

    // left side: drive the multi-suspension flow with t = (P₁(n),…,P_d(n))
    let start = PhasePoint::Suspension {
        base: BasePoint::State(x),
        fiber: z_cur.clone(),
    };
    let mut lhs = C64::new(0.0, 0.0);
    for i in 0..n {
        let t: Vec<f64> = polys.iter().map(|p| p.eval(i as f64)).collect();
        let moved = crate::flows::multi_suspension_evolve(spec, &start, &t)?;
        let s = match moved {
            PhasePoint::Suspension {
                base: BasePoint::State(s),
                ..
            } => s,
            _ => unreachable!(),
        };
        lhs += f_table[s];
    }
    lhs /= n as f64;

    // right side: per-n crossing pattern, then the floor orbit
    let mut rhs = C64::new(0.0, 0.0);
    for i in 0..n {
        let mut state = x;
        let mut floors: Vec<i64> = Vec::with_capacity(d);
        for (j, p) in polys.iter().enumerate() {
            let fl = floor_poly_orbit(p, i as i64)?;
            let frac = p.eval(i as f64) - fl as f64;
            if frac >= 1.0 - z_cur[j] {
                // ϑ(P_j(n)) ∈ L₁(z_j): the pattern applies T_j once
                state = maps[j][state];
            }
            floors.push(fl);
        }
        for (j, &fl) in floors.iter().enumerate() {
            let map = crate::flows::BaseMap::Permutation(maps[j].clone());
            match map.apply(&BasePoint::State(state), fl)? {
                BasePoint::State(s) => state = s,
                _ => unreachable!(),
            }
        }
        rhs += f_table[state];
    }
    rhs /= n as f64;

    Ok(TransferCheck {
        residual: (lhs - rhs).norm(),
        lhs,
        rhs,
        z_used: z_cur,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vals: &[f64]) -> DObservable {
        DObservable::Table(vals.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    #[test]
    fn birkhoff_of_constant_is_constant() {
        let sys = DSystem::Permutation(vec![1, 2, 0]);
        let v =
            birkhoff_average(&sys, &DObservable::constant(4.25), &DState::Finite(0), 17).unwrap();
        assert_eq!(v, C64::new(4.25, 0.0));
    }

    #[test]
    fn birkhoff_cycle_mean_is_exact() {
        let sys = DSystem::Permutation(vec![1, 2, 0]);
        let f = table(&[1.0, 2.0, 4.0]);
        for start in 0..3 {
            let v = birkhoff_average(&sys, &f, &DState::Finite(start), 3).unwrap();
            assert_eq!(v, C64::new(7.0 / 3.0, 0.0));
        }
    }

    #[test]
    fn rotation_character_geometric_sum_bound() {
        let rho = 2f64.sqrt() - 1.0;
        let sys = DSystem::Rotation(rho);
        let f = DObservable::CircleChar(1);
        let n = 10_000;
        let v = birkhoff_average(&sys, &f, &DState::Circle(0.2), n).unwrap();
        let bound = 2.0 / (n as f64 * (e2pi(rho) - C64::new(1.0, 0.0)).norm());
        assert!(v.norm() <= bound * 1.000001, "{} vs {bound}", v.norm());
    }

    #[test]
    fn conditional_expectation_on_cycles() {
        // ergodic 5-cycle: exact mean, error bar 0
        let sys = DSystem::Permutation(vec![1, 2, 3, 4, 0]);
        let f = table(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        let est = conditional_expectation(&sys, &f, &DState::Finite(2), 100, 10.0).unwrap();
        assert_eq!(est.value(), C64::new(4.0, 0.0));
        assert_eq!(est.error_bar, 0.0);
        assert!(est.converged);

        // two 3-cycles: estimate is the mean over x's own cycle
        let sys2 = DSystem::Permutation(vec![1, 2, 0, 4, 5, 3]);
        let f2 = table(&[1.0, 1.0, 1.0, 5.0, 6.0, 7.0]);
        let a = conditional_expectation(&sys2, &f2, &DState::Finite(0), 100, 10.0).unwrap();
        let b = conditional_expectation(&sys2, &f2, &DState::Finite(4), 100, 10.0).unwrap();
        assert_eq!(a.value(), C64::new(1.0, 0.0));
        assert_eq!(b.value(), C64::new(6.0, 0.0));
    }

    #[test]
    fn conditional_expectation_of_constant() {
        let sys = DSystem::Rotation(0.1234);
        let est = conditional_expectation(
            &sys,
            &DObservable::constant(2.5),
            &DState::Circle(0.6),
            50,
            4.0,
        )
        .unwrap();
        assert_eq!(est.value(), C64::new(2.5, 0.0));
        assert!(est.converged);
    }

    #[test]
    fn conditional_expectation_is_t_invariant_on_finite_systems() {
        let sys = DSystem::Permutation(vec![3, 0, 1, 2, 5, 4]);
        let f = table(&[0.5, -1.0, 2.0, 0.0, 3.0, 1.0]);
        for s in 0..6 {
            let at_x = conditional_expectation(&sys, &f, &DState::Finite(s), 50, 5.0).unwrap();
            let tx = match sys.apply(&DState::Finite(s), 1).unwrap() {
                DState::Finite(v) => v,
                _ => unreachable!(),
            };
            let at_tx = conditional_expectation(&sys, &f, &DState::Finite(tx), 50, 5.0).unwrap();
            assert_eq!(at_x.value(), at_tx.value());
        }
    }

    #[test]
    fn conditional_expectation_unconverged_flag() {
        // rotation with a character: the Birkhoff tail oscillates at scale
        // ~1/N; a huge r forces the unconverged flag
        let sys = DSystem::Rotation(2f64.sqrt() - 1.0);
        let f = DObservable::CircleChar(1);
        let est = conditional_expectation(&sys, &f, &DState::Circle(0.0), 200, 1e9).unwrap();
        assert!(!est.converged);
        let est2 = conditional_expectation(&sys, &f, &DState::Circle(0.0), 20_000, 20.0).unwrap();
        assert!(est2.converged);
        assert!(est2.value().norm() < 0.05);
    }

    #[test]
    fn polynomial_average_linear_is_birkhoff() {
        let sys = DSystem::Permutation(vec![2, 0, 3, 1]);
        let f = table(&[1.0, -2.0, 0.5, 3.0]);
        let p = Polynomial::monomial(1.0, 1);
        let a = polynomial_average(&sys, &f, &DState::Finite(1), &p, 40).unwrap();
        let b = birkhoff_average(&sys, &f, &DState::Finite(1), 40).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn polynomial_average_square_on_six_cycle() {
        // n² mod 6 has period 6: 0, 1, 4, 3, 4, 1
        let sys = DSystem::Permutation(vec![1, 2, 3, 4, 5, 0]);
        let f = table(&[1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        let p = Polynomial::monomial(1.0, 2);
        let got = polynomial_average(&sys, &f, &DState::Finite(0), &p, 36).unwrap();
        let pattern = [0usize, 1, 4, 3, 4, 1];
        let vals = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let expected: f64 = (0..36).map(|i| vals[pattern[i % 6]]).sum::<f64>() / 36.0;
        assert_eq!(got, C64::new(expected, 0.0));
    }

    #[test]
    fn double_recurrence_degenerate_and_exact() {
        let sys = DSystem::Permutation(vec![1, 2, 3, 0]);
        let f1 = table(&[1.0, 2.0, 3.0, 4.0]);
        let f2 = table(&[1.0, 0.0, -1.0, 0.5]);
        // a = b = 0: f₁(x)·f₂(x)
        let v = double_recurrence_average(&sys, &f1, &f2, 0, 0, &DState::Finite(2), 7).unwrap();
        assert_eq!(v, C64::new(-3.0, 0.0));
        // 4-cycle with a=1, b=2 over N=8: exact period-4 enumeration
        let got = double_recurrence_average(&sys, &f1, &f2, 1, 2, &DState::Finite(0), 8).unwrap();
        let vals1 = [1.0, 2.0, 3.0, 4.0];
        let vals2 = [1.0, 0.0, -1.0, 0.5];
        let expected: f64 =
            (0..8).map(|nn| vals1[nn % 4] * vals2[(2 * nn) % 4]).sum::<f64>() / 8.0;
        assert_eq!(got, C64::new(expected, 0.0));
        // constant f₂ factorizes
        let c = double_recurrence_average(
            &sys,
            &f1,
            &DObservable::constant(2.0),
            1,
            5,
            &DState::Finite(0),
            12,
        )
        .unwrap();
        let bk = birkhoff_average(&sys, &f1, &DState::Finite(0), 12).unwrap();
        assert!((c - bk * 2.0).norm() < 1e-14);
    }

    #[test]
    fn floor_multi_reduces_to_polynomial_average() {
        let sys = DSystem::Permutation(vec![1, 2, 0]);
        let f = table(&[1.0, 5.0, -2.0]);
        let p = Polynomial::monomial(2f64.sqrt(), 1);
        let a =
            floor_multi_average(&[sys.clone()], &[p.clone()], &f, &DState::Finite(0), 50).unwrap();
        let b = polynomial_average(&sys, &f, &DState::Finite(0), &p, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn floor_multi_on_z6_times_z6() {
        // commuting shifts on ℤ₆×ℤ₆ with P₁ = √2·n, P₂ = n²; the oracle is
        // the same sum assembled from modular index arithmetic
        let shift6 = DSystem::Permutation(vec![1, 2, 3, 4, 5, 0]);
        let idty = DSystem::Permutation((0..6).collect());
        let sys1 = DSystem::Product(vec![shift6.clone(), idty.clone()]);
        let sys2 = DSystem::Product(vec![idty, shift6]);
        let f = DObservable::Product(vec![
            DObservable::Component(0, Box::new(table(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))),
            DObservable::Component(1, Box::new(table(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]))),
        ]);
        let x = DState::Product(vec![DState::Finite(0), DState::Finite(0)]);
        let p1 = Polynomial::monomial(2f64.sqrt(), 1);
        let p2 = Polynomial::monomial(1.0, 2);
        let n = 720;
        let got = floor_multi_average(&[sys1, sys2], &[p1, p2], &f, &x, n).unwrap();
        let v1 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let v2 = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let mut acc = 0.0;
        for i in 0..n {
            let m1 = (2f64.sqrt() * i as f64).floor() as i64;
            let m2 = (i * i) as i64;
            acc += v1[m1.rem_euclid(6) as usize] * v2[m2.rem_euclid(6) as usize];
        }
        let expected = acc / n as f64;
        assert!(
            (got - C64::new(expected, 0.0)).norm() < 1e-12,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn non_commuting_maps_rejected() {
        let a = DSystem::Permutation(vec![1, 0, 2]);
        let b = DSystem::Permutation(vec![0, 2, 1]);
        let f = table(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            floor_multi_average(
                &[a, b],
                &[Polynomial::monomial(1.0, 1), Polynomial::monomial(1.0, 1)],
                &f,
                &DState::Finite(0),
                5,
            ),
            Err(CoreError::Domain(_))
        ));
    }

    #[test]
    fn suspension_transfer_is_exact_d1() {
        let spec = MultiSuspensionSpec {
            base: MultiBase::Finite(vec![vec![1, 2, 0]]),
        };
        let f: Vec<C64> = [1.0, 2.0, 4.0].iter().map(|&v| C64::new(v, 0.0)).collect();
        let check =
            suspension_transfer_check(&spec, &f, &[Polynomial::monomial(1.0, 2)], 0, &[0.5], 30)
                .unwrap();
        assert_eq!(check.residual, 0.0, "{check:?}");
        assert_eq!(check.redraws, 0);
    }

    #[test]
    fn suspension_transfer_zero_polys() {
        let spec = MultiSuspensionSpec {
            base: MultiBase::Finite(vec![vec![1, 0]]),
        };
        let f: Vec<C64> = [3.0, 7.0].iter().map(|&v| C64::new(v, 0.0)).collect();
        let check =
            suspension_transfer_check(&spec, &f, &[Polynomial::zero()], 1, &[0.25], 10).unwrap();
        assert_eq!(check.residual, 0.0);
        assert_eq!(check.lhs, C64::new(7.0, 0.0));
    }

    #[test]
    fn suspension_transfer_is_exact_d2() {
        let spec = MultiSuspensionSpec {
            base: MultiBase::Finite(vec![vec![1, 0, 3, 2], vec![2, 3, 0, 1]]),
        };
        let f: Vec<C64> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&v| C64::new(v, 0.0))
            .collect();
        let check = suspension_transfer_check(
            &spec,
            &f,
            &[
                Polynomial::monomial(2f64.sqrt(), 1),
                Polynomial::monomial(1.0, 2),
            ],
            2,
            &[0.3, 0.7],
            50,
        )
        .unwrap();
        assert_eq!(check.residual, 0.0, "{check:?}");
    }

    #[test]
    fn suspension_transfer_redraws_on_boundary() {
        let spec = MultiSuspensionSpec {
            base: MultiBase::Finite(vec![vec![1, 2, 0]]),
        };
        let f: Vec<C64> = [1.0, 2.0, 4.0].iter().map(|&v| C64::new(v, 0.0)).collect();
        // z = 0.5 with P = n/2: P(1) + z = 1.0 sits exactly on a crossing
        let check =
            suspension_transfer_check(&spec, &f, &[Polynomial::monomial(0.5, 1)], 0, &[0.5], 20)
                .unwrap();
        assert!(check.redraws > 0);
        assert_eq!(check.residual, 0.0);
    }

    #[test]
    fn projection_law_over_full_state_space() {
        // state-weighted mean of conditional expectations = global mean
        let sys = DSystem::Permutation(vec![1, 0, 3, 4, 2, 5]);
        let f = table(&[0.1, 0.9, 2.0, -1.0, 5.0, 7.5]);
        let states = sys.enumerate_states().unwrap();
        let mut acc = C64::new(0.0, 0.0);
        for s in &states {
            acc += conditional_expectation(&sys, &f, s, 100, 5.0).unwrap().value();
        }
        let lhs = acc / states.len() as f64;
        let global =
            states.iter().map(|s| f.eval(s).unwrap()).sum::<C64>() / states.len() as f64;
        assert!((lhs - global).norm() <= 1e-12);
    }
}
