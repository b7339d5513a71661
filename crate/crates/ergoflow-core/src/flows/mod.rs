//! Concrete flow families: torus translations, unit-roof suspensions,
//! multi-parameter suspensions, SL₂ flows, and products with parameter
//! routing.

pub mod sl2;

use crate::error::{CoreError, Result};
use crate::phase::{wrap_unit, BasePoint, PhasePoint};
use serde::{Deserialize, Serialize};

pub use sl2::{Sl2FlowSpec, Sl2Kind};

/// Translation flow x ↦ x + Σ tⱼ·velocity[j] on the torus; `velocity` has
/// one row per flow parameter (D = 1 for ordinary Kronecker flows, D = 2
/// realizes the two-parameter flows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KroneckerSpec {
    pub velocity: Vec<Vec<f64>>,
    pub dim: usize,
}

impl KroneckerSpec {
    pub fn new(alpha: Vec<f64>) -> KroneckerSpec {
        let dim = alpha.len();
        KroneckerSpec {
            velocity: vec![alpha],
            dim,
        }
    }

    pub fn multi(rows: Vec<Vec<f64>>) -> KroneckerSpec {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        KroneckerSpec {
            velocity: rows,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.velocity.is_empty() {
            return Err(CoreError::Config("Kronecker flow needs ≥ 1 velocity row".into()));
        }
        for row in &self.velocity {
            if row.len() != self.dim {
                return Err(CoreError::Config(format!(
                    "velocity row of length {} on a {}-torus",
                    row.len(),
                    self.dim
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Config("non-finite velocity".into()));
            }
        }
        Ok(())
    }
}

/// Invertible discrete base map for suspensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseMap {
    /// Finite permutation table: state s maps to table[s].
    Permutation(Vec<usize>),
    /// Circle rotation by angle ρ.
    Rotation(f64),
}

impl BaseMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaseMap::Permutation(t) => {
                let n = t.len();
                if n == 0 {
                    return Err(CoreError::Config("empty permutation table".into()));
                }
                let mut seen = vec![false; n];
                for &v in t {
                    if v >= n || seen[v] {
                        return Err(CoreError::Config(
                            "permutation table is not a bijection".into(),
                        ));
                    }
                    seen[v] = true;
                }
                Ok(())
            }
            BaseMap::Rotation(r) => {
                if r.is_finite() {
                    Ok(())
                } else {
                    Err(CoreError::Config("non-finite rotation angle".into()))
                }
            }
        }
    }

    /// n-fold application (n may be negative; maps are invertible).
    pub fn apply(&self, p: &BasePoint, n: i64) -> Result<BasePoint> {
        match (self, p) {
            (BaseMap::Permutation(t), BasePoint::State(s)) => {
                if *s >= t.len() {
                    return Err(CoreError::Contract(format!(
                        "state {s} outside permutation on {} states",
                        t.len()
                    )));
                }
                // reduce n modulo the cycle length of s
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
                Ok(BasePoint::State(cur))
            }
            (BaseMap::Rotation(rho), BasePoint::Circle(y)) => {
                Ok(BasePoint::Circle(wrap_unit(y + n as f64 * rho)))
            }
            _ => Err(CoreError::Contract(
                "base point variant does not match the base map".into(),
            )),
        }
    }
}

/// Unit-roof suspension over a discrete invertible map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspensionSpec {
    pub base: BaseMap,
}

/// S̃ᵗ(y, s) = (S^{⌊t+s⌋} y, (t+s) mod 1).
pub fn suspension_evolve(spec: &SuspensionSpec, p: &PhasePoint, t: f64) -> Result<PhasePoint> {
    let (base, fiber) = match p {
        PhasePoint::Suspension { base, fiber } if fiber.len() == 1 => (base, fiber[0]),
        _ => {
            return Err(CoreError::Contract(
                "suspension flow needs a suspension point with one fiber".into(),
            ))
        }
    };
    if !(0.0..1.0).contains(&fiber) {
        return Err(CoreError::Contract(format!("fiber {fiber} outside [0,1)")));
    }
    let total = t + fiber;
    let steps = total.floor();
    let new_base = spec.base.apply(base, steps as i64)?;
    Ok(PhasePoint::Suspension {
        base: new_base,
        fiber: vec![wrap_unit(total - steps)],
    })
}

/// Shared-state commuting base maps for the d-parameter suspension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MultiBase {
    /// d permutations of one finite state space.
    Finite(Vec<Vec<usize>>),
    /// d rotations of one shared circle.
    Rotations(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSuspensionSpec {
    pub base: MultiBase,
}

impl MultiSuspensionSpec {
    pub fn dim(&self) -> usize {
        match &self.base {
            MultiBase::Finite(maps) => maps.len(),
            MultiBase::Rotations(r) => r.len(),
        }
    }

    pub fn maps(&self) -> Result<Vec<BaseMap>> {
        Ok(match &self.base {
            MultiBase::Finite(maps) => maps.iter().cloned().map(BaseMap::Permutation).collect(),
            MultiBase::Rotations(r) => r.iter().cloned().map(BaseMap::Rotation).collect(),
        })
    }

    /// Bijection and exhaustive-commutation checks (finite bases).
    pub fn validate(&self) -> Result<()> {
        match &self.base {
            MultiBase::Finite(maps) => {
                if maps.is_empty() {
                    return Err(CoreError::Config("multi-suspension needs ≥ 1 map".into()));
                }
                let n = maps[0].len();
                for m in maps {
                    if m.len() != n {
                        return Err(CoreError::Config(
                            "base maps must share one state space".into(),
                        ));
                    }
                    BaseMap::Permutation(m.clone()).validate()?;
                }
                for (i, a) in maps.iter().enumerate() {
                    for b in maps.iter().skip(i + 1) {
                        for s in 0..n {
                            if a[b[s]] != b[a[s]] {
                                return Err(CoreError::Config(format!(
                                    "base maps do not commute at state {s}"
                                )));
                            }
                        }
                    }
                }
                Ok(())
            }
            MultiBase::Rotations(r) => {
                if r.is_empty() {
                    return Err(CoreError::Config("multi-suspension needs ≥ 1 map".into()));
                }
                if r.iter().any(|x| !x.is_finite()) {
                    return Err(CoreError::Config("non-finite rotation angle".into()));
                }
                Ok(())
            }
        }
    }
}

/// S^{(t₁,…,t_d)}(x, z) = (T₁^{⌊t₁+z₁⌋}⋯T_d^{⌊t_d+z_d⌋}x, ϑ(t₁+z₁), …).
pub fn multi_suspension_evolve(
    spec: &MultiSuspensionSpec,
    p: &PhasePoint,
    t: &[f64],
) -> Result<PhasePoint> {
    let d = spec.dim();
    if t.len() != d {
        return Err(CoreError::Contract(format!(
            "multi-suspension of dimension {d} evolved with {} parameters",
            t.len()
        )));
    }
    let (base, fibers) = match p {
        PhasePoint::Suspension { base, fiber } if fiber.len() == d => (base, fiber),
        _ => {
            return Err(CoreError::Contract(
                "multi-suspension flow needs a suspension point with d fibers".into(),
            ))
        }
    };
    for &z in fibers {
        if !(0.0..1.0).contains(&z) {
            return Err(CoreError::Contract(format!("fiber {z} outside [0,1)")));
        }
    }
    let maps = spec.maps()?;
    let mut cur = base.clone();
    let mut new_fibers = Vec::with_capacity(d);
    for i in 0..d {
        let total = t[i] + fibers[i];
        let steps = total.floor();
        cur = maps[i].apply(&cur, steps as i64)?;
        new_fibers.push(wrap_unit(total - steps));
    }
    Ok(PhasePoint::Suspension {
        base: cur,
        fiber: new_fibers,
    })
}

/// Product of component flows on one product space. The routing matrix has
/// one row per component parameter slot (components stacked in order) and
/// one column per input parameter: component c receives its block of
/// `routing · t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductFlowSpec {
    pub components: Vec<super::flow::FlowSpec>,
    pub routing: Vec<Vec<f64>>,
    /// Input parameter dimension D.
    pub param_dim: usize,
}

impl ProductFlowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(CoreError::Config("product flow needs components".into()));
        }
        let rows_needed: usize = self.components.iter().map(|c| c.param_dim()).sum();
        if self.routing.len() != rows_needed {
            return Err(CoreError::Config(format!(
                "routing has {} rows, components need {rows_needed}",
                self.routing.len()
            )));
        }
        for row in &self.routing {
            if row.len() != self.param_dim {
                return Err(CoreError::Config(format!(
                    "routing row of length {}, parameter dimension is {}",
                    row.len(),
                    self.param_dim
                )));
            }
        }
        for c in &self.components {
            c.validate()?;
        }
        Ok(())
    }

    /// Parameters received by each component for input t.
    pub fn routed(&self, t: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.components.len());
        let mut row = 0;
        for c in &self.components {
            let d_c = c.param_dim();
            let mut v = Vec::with_capacity(d_c);
            for _ in 0..d_c {
                v.push(
                    self.routing[row]
                        .iter()
                        .zip(t)
                        .map(|(&r, &tj)| r * tj)
                        .sum(),
                );
                row += 1;
            }
            out.push(v);
        }
        out
    }
}
