//! Observables as expression trees over phase coordinates.
//!
//! Complex-valued observables are primary (torus characters make the
//! integral oracles exact); real observables are `RealPart` wrappers.
//! Trees built from characters and finite tables canonicalize into sums of
//! monomials, which yields exact invariant-measure integrals and the
//! symbolic ingredients of the predicted limits. A `SmoothBump` on the
//! modular surface has no symbolic form; its reference integral comes from
//! grid quadrature in `flows::sl2`.

use crate::error::{CoreError, Result};
use crate::phase::{BasePoint, PhasePoint};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// e^{2πi x}, evaluated on the reduced argument so huge phases keep full
/// angular accuracy.
#[inline]
pub fn e2pi(x: f64) -> C64 {
    let f = x - x.round();
    let (s, c) = (TAU * f).sin_cos();
    C64::new(c, s)
}

/// Compactly supported mollifier bump on the modular surface, in the
/// fundamental-domain coordinates (x, y, θ): value
/// `exp(1 - 1/(1-r²))` for `r < 1`, zero outside, where
/// `r² = ((x-x₀)² + (y-y₀)² + dθ²)/w²` and `dθ` is the angular distance
/// modulo π. Supported inside the ball of radius `width` around `center`;
/// callers keep that ball inside the fundamental domain so the bump is a
/// genuinely smooth function on the quotient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: (f64, f64, f64),
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, x: f64, y: f64, theta: f64) -> f64 {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let mut dt = (theta - self.center.2).abs() % PI;
        if dt > PI / 2.0 {
            dt = PI - dt;
        }
        let r2 = (dx * dx + dy * dy + dt * dt) / (self.width * self.width);
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    Constant(C64),
    /// e^{2πi k·coords} on a torus point, or on the circle base of a
    /// suspension (frequency vector of length 1).
    TorusCharacter(Vec<i64>),
    /// e^{2πi m·fiber} on a suspension point.
    FiberCharacter(Vec<i64>),
    /// Finite table over base states of a suspension.
    BaseFunction(Vec<C64>),
    /// Smooth bump on SL₂(ℝ)/SL₂(ℤ).
    SmoothBump(Bump),
    Product(Vec<Observable>),
    /// Weighted sum Σ wᵢ·childᵢ.
    Sum(Vec<(C64, Observable)>),
    RealPart(Box<Observable>),
    /// Evaluate the child on component `i` of a product phase point.
    Component(usize, Box<Observable>),
}

impl Observable {
    pub fn constant(c: f64) -> Observable {
        Observable::Constant(C64::new(c, 0.0))
    }

    pub fn scaled(w: C64, obs: Observable) -> Observable {
        Observable::Sum(vec![(w, obs)])
    }

    /// Pointwise evaluation. Errors when the tree references coordinates
    /// that do not exist on this phase-point variant.
    pub fn eval(&self, x: &PhasePoint) -> Result<C64> {
        Ok(match self {
            Observable::Constant(c) => *c,
            Observable::TorusCharacter(k) => match x {
                PhasePoint::Torus(coords) => {
                    if coords.len() != k.len() {
                        return Err(CoreError::Contract(format!(
                            "torus character of arity {} on a {}-torus",
                            k.len(),
                            coords.len()
                        )));
                    }
                    let phase: f64 = k.iter().zip(coords).map(|(&ki, &xi)| ki as f64 * xi).sum();
                    e2pi(phase)
                }
                PhasePoint::Suspension {
                    base: BasePoint::Circle(b),
                    ..
                } if k.len() == 1 => e2pi(k[0] as f64 * b),
                _ => {
                    return Err(CoreError::Contract(
                        "torus character needs a torus point or a circle-base suspension".into(),
                    ))
                }
            },
            Observable::FiberCharacter(m) => match x {
                PhasePoint::Suspension { fiber, .. } => {
                    if fiber.len() != m.len() {
                        return Err(CoreError::Contract(format!(
                            "fiber character of arity {} on a {}-fiber suspension",
                            m.len(),
                            fiber.len()
                        )));
                    }
                    let phase: f64 = m.iter().zip(fiber).map(|(&mi, &ui)| mi as f64 * ui).sum();
                    e2pi(phase)
                }
                _ => {
                    return Err(CoreError::Contract(
                        "fiber character needs a suspension point".into(),
                    ))
                }
            },
            Observable::BaseFunction(table) => match x {
                PhasePoint::Suspension {
                    base: BasePoint::State(s),
                    ..
                } => *table.get(*s).ok_or_else(|| {
                    CoreError::Contract(format!("base state {s} outside table of {}", table.len()))
                })?,
                _ => {
                    return Err(CoreError::Contract(
                        "base function needs a finite-base suspension point".into(),
                    ))
                }
            },
            Observable::SmoothBump(b) => match x {
                PhasePoint::Sl2(p) => C64::new(b.eval(p.x, p.y, p.theta), 0.0),
                _ => return Err(CoreError::Contract("smooth bump needs an SL2 point".into())),
            },
            Observable::Product(children) => {
                let mut acc = C64::new(1.0, 0.0);
                for c in children {
                    acc *= c.eval(x)?;
                }
                acc
            }
            Observable::Sum(children) => {
                let mut acc = C64::new(0.0, 0.0);
                for (w, c) in children {
                    acc += w * c.eval(x)?;
                }
                acc
            }
            Observable::RealPart(c) => C64::new(c.eval(x)?.re, 0.0),
            Observable::Component(i, child) => match x {
                PhasePoint::Product(parts) => {
                    let part = parts.get(*i).ok_or_else(|| {
                        CoreError::Contract(format!(
                            "component {i} outside product of {}",
                            parts.len()
                        ))
                    })?;
                    child.eval(part)?
                }
                _ => {
                    return Err(CoreError::Contract(
                        "component reference needs a product point".into(),
                    ))
                }
            },
        })
    }

    /// Precomputed sup-norm bound dominating |f(x)| everywhere.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Observable::Constant(c) => c.norm(),
            Observable::TorusCharacter(_) | Observable::FiberCharacter(_) => 1.0,
            Observable::BaseFunction(t) => t.iter().map(|c| c.norm()).fold(0.0, f64::max),
            Observable::SmoothBump(_) => 1.0,
            Observable::Product(ch) => ch.iter().map(|c| c.sup_norm()).product(),
            Observable::Sum(ch) => ch.iter().map(|(w, c)| w.norm() * c.sup_norm()).sum(),
            Observable::RealPart(c) => c.sup_norm(),
            Observable::Component(_, c) => c.sup_norm(),
        }
    }

    /// Complex conjugate of the observable, as a tree.
    pub fn conj(&self) -> Observable {
        match self {
            Observable::Constant(c) => Observable::Constant(c.conj()),
            Observable::TorusCharacter(k) => {
                Observable::TorusCharacter(k.iter().map(|&x| -x).collect())
            }
            Observable::FiberCharacter(m) => {
                Observable::FiberCharacter(m.iter().map(|&x| -x).collect())
            }
            Observable::BaseFunction(t) => {
                Observable::BaseFunction(t.iter().map(|c| c.conj()).collect())
            }
            Observable::SmoothBump(b) => Observable::SmoothBump(b.clone()),
            Observable::Product(ch) => Observable::Product(ch.iter().map(|c| c.conj()).collect()),
            Observable::Sum(ch) => {
                Observable::Sum(ch.iter().map(|(w, c)| (w.conj(), c.conj())).collect())
            }
            Observable::RealPart(c) => Observable::RealPart(Box::new(c.conj())),
            Observable::Component(i, c) => Observable::Component(*i, Box::new(c.conj())),
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical monomial form
// ---------------------------------------------------------------------------

/// Shape of a phase space, used to canonicalize observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpaceKind {
    Torus(usize),
    SuspFinite { states: usize, fibers: usize },
    SuspCircle { fibers: usize },
    Sl2,
    Product(Vec<SpaceKind>),
}

impl SpaceKind {
    /// Flattened list of non-product sites.
    pub fn flat_sites(&self) -> Vec<SpaceKind> {
        match self {
            SpaceKind::Product(parts) => parts.iter().flat_map(|p| p.flat_sites()).collect(),
            other => vec![other.clone()],
        }
    }
}

/// One multiplicative factor living on a single flat site.
#[derive(Clone, Debug, PartialEq)]
pub enum SiteFactor {
    One,
    /// e^{2πi k·x} on a torus site.
    TorusChar(Vec<i64>),
    /// table(y) · e^{2πi c·y_circle} · e^{2πi m·fiber} on a suspension site;
    /// `table = None` means the all-ones table, `circle` is 0 on finite bases.
    Susp {
        table: Option<Vec<C64>>,
        circle: i64,
        fiber: Vec<i64>,
    },
}

impl SiteFactor {
    fn merge(&self, other: &SiteFactor) -> Option<SiteFactor> {
        match (self, other) {
            (SiteFactor::One, x) | (x, SiteFactor::One) => Some(x.clone()),
            (SiteFactor::TorusChar(a), SiteFactor::TorusChar(b)) => {
                if a.len() != b.len() {
                    return None;
                }
                Some(SiteFactor::TorusChar(
                    a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
                ))
            }
            (
                SiteFactor::Susp { table: ta, circle: ca, fiber: fa },
                SiteFactor::Susp { table: tb, circle: cb, fiber: fb },
            ) => {
                if fa.len() != fb.len() {
                    return None;
                }
                let table = match (ta, tb) {
                    (None, None) => None,
                    (Some(t), None) | (None, Some(t)) => Some(t.clone()),
                    (Some(t1), Some(t2)) => {
                        if t1.len() != t2.len() {
                            return None;
                        }
                        Some(t1.iter().zip(t2).map(|(a, b)| a * b).collect())
                    }
                };
                Some(SiteFactor::Susp {
                    table,
                    circle: ca + cb,
                    fiber: fa.iter().zip(fb).map(|(&x, &y)| x + y).collect(),
                })
            }
            _ => None,
        }
    }

    fn conj(&self) -> SiteFactor {
        match self {
            SiteFactor::One => SiteFactor::One,
            SiteFactor::TorusChar(k) => SiteFactor::TorusChar(k.iter().map(|&x| -x).collect()),
            SiteFactor::Susp { table, circle, fiber } => SiteFactor::Susp {
                table: table
                    .as_ref()
                    .map(|t| t.iter().map(|c| c.conj()).collect()),
                circle: -circle,
                fiber: fiber.iter().map(|&x| -x).collect(),
            },
        }
    }

    /// Mean against the site's invariant probability measure
    /// (uniform states × uniform circle × Lebesgue fiber).
    fn integral(&self) -> C64 {
        match self {
            SiteFactor::One => C64::new(1.0, 0.0),
            SiteFactor::TorusChar(k) => {
                if k.iter().all(|&x| x == 0) {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            SiteFactor::Susp { table, circle, fiber } => {
                if *circle != 0 || fiber.iter().any(|&x| x != 0) {
                    return C64::new(0.0, 0.0);
                }
                match table {
                    None => C64::new(1.0, 0.0),
                    Some(t) => t.iter().sum::<C64>() / t.len() as f64,
                }
            }
        }
    }

    fn eval(&self, x: &PhasePoint) -> Result<C64> {
        match self {
            SiteFactor::One => Ok(C64::new(1.0, 0.0)),
            SiteFactor::TorusChar(k) => Observable::TorusCharacter(k.clone()).eval(x),
            SiteFactor::Susp { table, circle, fiber } => {
                let mut acc = match table {
                    None => C64::new(1.0, 0.0),
                    Some(t) => Observable::BaseFunction(t.clone()).eval(x)?,
                };
                if *circle != 0 {
                    acc *= Observable::TorusCharacter(vec![*circle]).eval(x)?;
                }
                if fiber.iter().any(|&m| m != 0) {
                    acc *= Observable::FiberCharacter(fiber.clone()).eval(x)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Monomial: coefficient times one factor per flat site.
#[derive(Clone, Debug)]
pub struct Mono {
    pub coeff: C64,
    pub sites: Vec<SiteFactor>,
}

impl Mono {
    fn one(coeff: C64, n_sites: usize) -> Mono {
        Mono {
            coeff,
            sites: vec![SiteFactor::One; n_sites],
        }
    }

    fn mul(&self, other: &Mono) -> Option<Mono> {
        let sites: Option<Vec<_>> = self
            .sites
            .iter()
            .zip(&other.sites)
            .map(|(a, b)| a.merge(b))
            .collect();
        Some(Mono {
            coeff: self.coeff * other.coeff,
            sites: sites?,
        })
    }

    pub fn conj(&self) -> Mono {
        Mono {
            coeff: self.coeff.conj(),
            sites: self.sites.iter().map(|s| s.conj()).collect(),
        }
    }

    pub fn integral(&self) -> C64 {
        let mut acc = self.coeff;
        for s in &self.sites {
            acc *= s.integral();
        }
        acc
    }

    /// Evaluate at a phase point; `x` is flattened the same way the space was.
    pub fn eval(&self, x: &PhasePoint) -> Result<C64> {
        let flat = flatten_point(x);
        if flat.len() != self.sites.len() {
            return Err(CoreError::Contract(format!(
                "monomial over {} sites on a {}-site point",
                self.sites.len(),
                flat.len()
            )));
        }
        let mut acc = self.coeff;
        for (s, p) in self.sites.iter().zip(flat) {
            acc *= s.eval(p)?;
        }
        Ok(acc)
    }
}

/// Flattens a product phase point into its non-product leaves.
pub fn flatten_point(x: &PhasePoint) -> Vec<&PhasePoint> {
    match x {
        PhasePoint::Product(parts) => parts.iter().flat_map(flatten_point).collect(),
        other => vec![other],
    }
}

/// Canonical monomial expansion of an observable over a space, or `None`
/// when the tree has no symbolic form there (smooth bumps, mismatched
/// coordinate references).
pub fn canonicalize(obs: &Observable, space: &SpaceKind) -> Option<Vec<Mono>> {
    let sites = space.flat_sites();
    canon_at(obs, &sites, 0, sites.len())
}

/// Canonicalize `obs` as an observable of the sub-space `sites[offset..offset+span]`
/// embedded in a space with `sites.len()` total sites... the embedding pads
/// other sites with `One`.
fn canon_at(obs: &Observable, sites: &[SpaceKind], offset: usize, span: usize) -> Option<Vec<Mono>> {
    let n = sites.len();
    match obs {
        Observable::Constant(c) => Some(vec![Mono::one(*c, n)]),
        Observable::TorusCharacter(k) => {
            if span != 1 {
                return None;
            }
            let factor = match &sites[offset] {
                SpaceKind::Torus(d) if *d == k.len() => SiteFactor::TorusChar(k.clone()),
                SpaceKind::SuspCircle { fibers } if k.len() == 1 => SiteFactor::Susp {
                    table: None,
                    circle: k[0],
                    fiber: vec![0; *fibers],
                },
                _ => return None,
            };
            let mut m = Mono::one(C64::new(1.0, 0.0), n);
            m.sites[offset] = factor;
            Some(vec![m])
        }
        Observable::FiberCharacter(f) => {
            if span != 1 {
                return None;
            }
            let factor = match &sites[offset] {
                SpaceKind::SuspFinite { fibers, .. } | SpaceKind::SuspCircle { fibers }
                    if *fibers == f.len() =>
                {
                    SiteFactor::Susp {
                        table: None,
                        circle: 0,
                        fiber: f.clone(),
                    }
                }
                _ => return None,
            };
            let mut m = Mono::one(C64::new(1.0, 0.0), n);
            m.sites[offset] = factor;
            Some(vec![m])
        }
        Observable::BaseFunction(t) => {
            if span != 1 {
                return None;
            }
            let factor = match &sites[offset] {
                SpaceKind::SuspFinite { states, fibers } if *states == t.len() => {
                    SiteFactor::Susp {
                        table: Some(t.clone()),
                        circle: 0,
                        fiber: vec![0; *fibers],
                    }
                }
                _ => return None,
            };
            let mut m = Mono::one(C64::new(1.0, 0.0), n);
            m.sites[offset] = factor;
            Some(vec![m])
        }
        Observable::SmoothBump(_) => None,
        Observable::Product(children) => {
            let mut acc = vec![Mono::one(C64::new(1.0, 0.0), n)];
            for c in children {
                let terms = canon_at(c, sites, offset, span)?;
                let mut next = Vec::with_capacity(acc.len() * terms.len());
                for a in &acc {
                    for b in &terms {
                        next.push(a.mul(b)?);
                    }
                }
                acc = next;
            }
            Some(acc)
        }
        Observable::Sum(children) => {
            let mut acc = Vec::new();
            for (w, c) in children {
                for mut m in canon_at(c, sites, offset, span)? {
                    m.coeff *= w;
                    acc.push(m);
                }
            }
            Some(acc)
        }
        Observable::RealPart(c) => {
            let terms = canon_at(c, sites, offset, span)?;
            let mut acc = Vec::with_capacity(terms.len() * 2);
            for m in terms {
                let mut half = m.clone();
                half.coeff *= 0.5;
                let mut halfc = m.conj();
                halfc.coeff *= 0.5;
                acc.push(half);
                acc.push(halfc);
            }
            Some(acc)
        }
        Observable::Component(i, child) => {
            // resolve component i of the (sub-)product starting at `offset`
            let sub = subspace_components(sites, offset, span)?;
            let (child_off, child_span) = *sub.get(*i)?;
            canon_at(child, sites, child_off, child_span)
        }
    }
}

/// Offsets/spans of the top-level components of the product space occupying
/// `sites[offset..offset+span]`. Requires span > 1 (a genuine product) or
/// returns the single site as one component.
fn subspace_components(
    sites: &[SpaceKind],
    offset: usize,
    span: usize,
) -> Option<Vec<(usize, usize)>> {
    // Flat sites lose the nesting structure; products used here are flat
    // lists of non-product components, so each component is one site.
    if offset + span > sites.len() {
        return None;
    }
    Some((offset..offset + span).map(|i| (i, 1)).collect())
}

/// Exact invariant-measure integral of the observable, when the tree
/// canonicalizes over this space.
pub fn exact_integral(obs: &Observable, space: &SpaceKind) -> Option<C64> {
    let monos = canonicalize(obs, space)?;
    Some(monos.iter().map(|m| m.integral()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_evaluates_anywhere() {
        let obs = Observable::constant(3.5);
        let x = PhasePoint::Torus(vec![0.77]);
        assert_eq!(obs.eval(&x).unwrap(), C64::new(3.5, 0.0));
    }

    #[test]
    fn character_at_quarter_is_i() {
        let obs = Observable::TorusCharacter(vec![1]);
        let x = PhasePoint::Torus(vec![0.25]);
        let v = obs.eval(&x).unwrap();
        assert!((v - C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_frequency_product_is_constant() {
        let obs = Observable::Product(vec![
            Observable::constant(2.0),
            Observable::TorusCharacter(vec![0]),
        ]);
        let x = PhasePoint::Torus(vec![0.9123]);
        assert_eq!(obs.eval(&x).unwrap(), C64::new(2.0, 0.0));
    }

    #[test]
    fn coordinate_mismatch_is_contract_violation() {
        let obs = Observable::FiberCharacter(vec![1]);
        let x = PhasePoint::Torus(vec![0.5]);
        assert!(matches!(obs.eval(&x), Err(CoreError::Contract(_))));
    }

    #[test]
    fn sup_norm_dominates_samples() {
        let obs = Observable::Sum(vec![
            (C64::new(0.5, -1.0), Observable::TorusCharacter(vec![2])),
            (C64::new(1.0, 0.0), Observable::constant(0.25)),
        ]);
        let bound = obs.sup_norm();
        for i in 0..1000 {
            let x = PhasePoint::Torus(vec![i as f64 / 1000.0]);
            assert!(obs.eval(&x).unwrap().norm() <= bound + 1e-12);
        }
    }

    #[test]
    fn exact_integral_of_characters() {
        let space = SpaceKind::Torus(1);
        assert_eq!(
            exact_integral(&Observable::TorusCharacter(vec![3]), &space).unwrap(),
            C64::new(0.0, 0.0)
        );
        assert_eq!(
            exact_integral(&Observable::TorusCharacter(vec![0]), &space).unwrap(),
            C64::new(1.0, 0.0)
        );
        // RealPart of a nonzero character integrates to 0
        let rp = Observable::RealPart(Box::new(Observable::TorusCharacter(vec![2])));
        assert_eq!(exact_integral(&rp, &space).unwrap(), C64::new(0.0, 0.0));
        // product of k and -k is constant 1
        let prod = Observable::Product(vec![
            Observable::TorusCharacter(vec![5]),
            Observable::TorusCharacter(vec![-5]),
        ]);
        assert_eq!(exact_integral(&prod, &space).unwrap(), C64::new(1.0, 0.0));
    }

    #[test]
    fn exact_integral_on_suspension() {
        let space = SpaceKind::SuspFinite { states: 3, fibers: 1 };
        let table = Observable::BaseFunction(vec![
            C64::new(1.0, 0.0),
            C64::new(2.0, 0.0),
            C64::new(4.0, 0.0),
        ]);
        assert!(
            (exact_integral(&table, &space).unwrap() - C64::new(7.0 / 3.0, 0.0)).norm() < 1e-15
        );
        let with_fiber = Observable::Product(vec![table, Observable::FiberCharacter(vec![1])]);
        assert_eq!(exact_integral(&with_fiber, &space).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn bump_has_no_symbolic_integral() {
        let b = Observable::SmoothBump(Bump {
            center: (0.0, 1.5, 1.0),
            width: 0.3,
        });
        assert!(exact_integral(&b, &SpaceKind::Sl2).is_none());
    }

    #[test]
    fn component_canonicalization_on_products() {
        let space = SpaceKind::Product(vec![SpaceKind::Torus(1), SpaceKind::Torus(2)]);
        let obs = Observable::Product(vec![
            Observable::Component(0, Box::new(Observable::TorusCharacter(vec![2]))),
            Observable::Component(1, Box::new(Observable::TorusCharacter(vec![0, 0]))),
        ]);
        let monos = canonicalize(&obs, &space).unwrap();
        assert_eq!(monos.len(), 1);
        assert_eq!(exact_integral(&obs, &space).unwrap(), C64::new(0.0, 0.0));
        // evaluation agrees with the canonical form
        let x = PhasePoint::Product(vec![
            PhasePoint::Torus(vec![0.3]),
            PhasePoint::Torus(vec![0.1, 0.7]),
        ]);
        let direct = obs.eval(&x).unwrap();
        let canon: C64 = monos.iter().map(|m| m.eval(&x).unwrap()).sum();
        assert!((direct - canon).norm() < 1e-14);
    }

    #[test]
    fn conjugation_negates_frequencies() {
        let obs = Observable::Sum(vec![(
            C64::new(0.0, 2.0),
            Observable::TorusCharacter(vec![4]),
        )]);
        let x = PhasePoint::Torus(vec![0.7]);
        let a = obs.eval(&x).unwrap().conj();
        let b = obs.conj().eval(&x).unwrap();
        assert!((a - b).norm() < 1e-15);
    }
}
