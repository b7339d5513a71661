//! The measurable-flow contract: evolve, phase-space shape, and
//! invariant-measure sampling, shared by every concrete family.

use crate::error::{CoreError, Result};
use crate::flows::{
    multi_suspension_evolve, sl2, suspension_evolve, BaseMap, KroneckerSpec, MultiBase,
    MultiSuspensionSpec, ProductFlowSpec, Sl2FlowSpec, SuspensionSpec,
};
use crate::observable::SpaceKind;
use crate::phase::{BasePoint, PhasePoint};
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FlowSpec {
    Kronecker(KroneckerSpec),
    Suspension(SuspensionSpec),
    MultiSuspension(MultiSuspensionSpec),
    Sl2(Sl2FlowSpec),
    Product(ProductFlowSpec),
}

impl FlowSpec {
    pub fn kronecker(alpha: Vec<f64>) -> FlowSpec {
        FlowSpec::Kronecker(KroneckerSpec::new(alpha))
    }

    pub fn kronecker_multi(rows: Vec<Vec<f64>>) -> FlowSpec {
        FlowSpec::Kronecker(KroneckerSpec::multi(rows))
    }

    pub fn suspension(base: BaseMap) -> FlowSpec {
        FlowSpec::Suspension(SuspensionSpec { base })
    }

    /// Parameter-group dimension D.
    pub fn param_dim(&self) -> usize {
        match self {
            FlowSpec::Kronecker(k) => k.velocity.len(),
            FlowSpec::Suspension(_) => 1,
            FlowSpec::MultiSuspension(m) => m.dim(),
            FlowSpec::Sl2(_) => 1,
            FlowSpec::Product(p) => p.param_dim,
        }
    }

    /// Shape of the phase space this flow acts on.
    pub fn space(&self) -> SpaceKind {
        match self {
            FlowSpec::Kronecker(k) => SpaceKind::Torus(k.dim),
            FlowSpec::Suspension(s) => match &s.base {
                BaseMap::Permutation(t) => SpaceKind::SuspFinite {
                    states: t.len(),
                    fibers: 1,
                },
                BaseMap::Rotation(_) => SpaceKind::SuspCircle { fibers: 1 },
            },
            FlowSpec::MultiSuspension(m) => match &m.base {
                MultiBase::Finite(maps) => SpaceKind::SuspFinite {
                    states: maps[0].len(),
                    fibers: maps.len(),
                },
                MultiBase::Rotations(r) => SpaceKind::SuspCircle { fibers: r.len() },
            },
            FlowSpec::Sl2(_) => SpaceKind::Sl2,
            FlowSpec::Product(p) => {
                SpaceKind::Product(p.components.iter().map(|c| c.space()).collect())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowSpec::Kronecker(k) => k.validate(),
            FlowSpec::Suspension(s) => s.base.validate(),
            FlowSpec::MultiSuspension(m) => m.validate(),
            FlowSpec::Sl2(s) => {
                if s.speed.is_finite() {
                    Ok(())
                } else {
                    Err(CoreError::Config("non-finite SL2 flow speed".into()))
                }
            }
            FlowSpec::Product(p) => p.validate(),
        }
    }

    /// The flow action T^t x.
    pub fn evolve(&self, x: &PhasePoint, t: &[f64]) -> Result<PhasePoint> {
        if t.len() != self.param_dim() {
            return Err(CoreError::Contract(format!(
                "flow of parameter dimension {} evolved with {} parameters",
                self.param_dim(),
                t.len()
            )));
        }
        if t.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Input(format!("non-finite flow time {t:?}")));
        }
        match self {
            FlowSpec::Kronecker(k) => match x {
                PhasePoint::Torus(coords) if coords.len() == k.dim => {
                    let mut out = coords.clone();
                    for (row, &tj) in k.velocity.iter().zip(t) {
                        for (o, &v) in out.iter_mut().zip(row) {
                            *o += tj * v;
                        }
                    }
                    for o in out.iter_mut() {
                        *o = crate::phase::wrap_unit(*o);
                    }
                    Ok(PhasePoint::Torus(out))
                }
                _ => Err(CoreError::Contract(
                    "Kronecker flow needs a torus point of matching dimension".into(),
                )),
            },
            FlowSpec::Suspension(s) => suspension_evolve(s, x, t[0]),
            FlowSpec::MultiSuspension(m) => multi_suspension_evolve(m, x, t),
            FlowSpec::Sl2(s) => match x {
                PhasePoint::Sl2(p) => Ok(PhasePoint::Sl2(sl2::evolve(s, p, t[0])?)),
                _ => Err(CoreError::Contract("SL2 flow needs an SL2 point".into())),
            },
            FlowSpec::Product(p) => match x {
                PhasePoint::Product(parts) if parts.len() == p.components.len() => {
                    let routed = p.routed(t);
                    let mut out = Vec::with_capacity(parts.len());
                    for ((c, part), tc) in p.components.iter().zip(parts).zip(routed) {
                        out.push(c.evolve(part, &tc)?);
                    }
                    Ok(PhasePoint::Product(out))
                }
                _ => Err(CoreError::Contract(
                    "product flow needs a product point of matching arity".into(),
                )),
            },
        }
    }

    /// One-parameter convenience wrapper.
    pub fn evolve1(&self, x: &PhasePoint, t: f64) -> Result<PhasePoint> {
        self.evolve(x, &[t])
    }

    /// Per-site description of how each flow direction moves each flat site
    /// of the phase space; feeds the symbolic invariant projections.
    pub fn site_actions(&self) -> Result<Vec<SiteAction>> {
        let d = self.param_dim();
        match self {
            FlowSpec::Kronecker(k) => Ok(vec![SiteAction::Torus {
                rows: k.velocity.clone(),
            }]),
            FlowSpec::Suspension(s) => Ok(vec![SiteAction::Susp {
                maps: vec![s.base.clone()],
                drive: vec![vec![1.0]],
            }]),
            FlowSpec::MultiSuspension(m) => {
                let maps = m.maps()?;
                let d = maps.len();
                let drive = (0..d)
                    .map(|j| {
                        let mut row = vec![0.0; d];
                        row[j] = 1.0;
                        row
                    })
                    .collect();
                Ok(vec![SiteAction::Susp { maps, drive }])
            }
            FlowSpec::Sl2(_) => Ok(vec![SiteAction::Sl2]),
            FlowSpec::Product(p) => {
                let mut out = Vec::new();
                let mut row0 = 0;
                for c in &p.components {
                    let d_c = c.param_dim();
                    // component direction i as a function of parent direction j
                    let block: Vec<Vec<f64>> =
                        (0..d_c).map(|i| p.routing[row0 + i].clone()).collect();
                    for action in c.site_actions()? {
                        out.push(action.compose(&block, d));
                    }
                    row0 += d_c;
                }
                Ok(out)
            }
        }
    }
}

/// How the D flow directions move one flat site.
#[derive(Clone, Debug)]
pub enum SiteAction {
    /// Direction j translates the torus site by rows[j].
    Torus { rows: Vec<Vec<f64>> },
    /// Direction j advances suspension fiber i at rate drive[j][i] and
    /// applies maps[i] at its roof crossings.
    Susp { maps: Vec<BaseMap>, drive: Vec<Vec<f64>> },
    /// Geodesic/horocycle site; ergodic for Haar.
    Sl2,
}

impl SiteAction {
    /// Rewrites a component action in terms of parent directions:
    /// component direction i contributes with weight block[i][j] to parent
    /// direction j.
    fn compose(self, block: &[Vec<f64>], parent_d: usize) -> SiteAction {
        match self {
            SiteAction::Torus { rows } => {
                let dim = rows.first().map(|r| r.len()).unwrap_or(0);
                let new_rows = (0..parent_d)
                    .map(|j| {
                        let mut row = vec![0.0; dim];
                        for (i, r) in rows.iter().enumerate() {
                            for (slot, &v) in row.iter_mut().zip(r) {
                                *slot += block[i][j] * v;
                            }
                        }
                        row
                    })
                    .collect();
                SiteAction::Torus { rows: new_rows }
            }
            SiteAction::Susp { maps, drive } => {
                let fibers = drive.first().map(|r| r.len()).unwrap_or(0);
                let new_drive = (0..parent_d)
                    .map(|j| {
                        let mut row = vec![0.0; fibers];
                        for (i, r) in drive.iter().enumerate() {
                            for (slot, &v) in row.iter_mut().zip(r) {
                                *slot += block[i][j] * v;
                            }
                        }
                        row
                    })
                    .collect();
                SiteAction::Susp {
                    maps,
                    drive: new_drive,
                }
            }
            SiteAction::Sl2 => SiteAction::Sl2,
        }
    }
}

/// Sampling recipe per family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    /// Uniform/product measure (torus, suspensions).
    Uniform,
    /// Cusp-truncated Haar measure on the modular surface.
    Haar { y_max: f64 },
}

/// Deterministic sampler from the flow's invariant measure: the same seed
/// and parameters always produce the identical point stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureSampler {
    pub flow: FlowSpec,
    pub seed: u64,
    pub scheme: Scheme,
}

impl MeasureSampler {
    pub fn uniform(flow: FlowSpec, seed: u64) -> MeasureSampler {
        MeasureSampler {
            flow,
            seed,
            scheme: Scheme::Uniform,
        }
    }

    pub fn haar(flow: FlowSpec, seed: u64) -> MeasureSampler {
        MeasureSampler {
            flow,
            seed,
            scheme: Scheme::Haar {
                y_max: sl2::HAAR_Y_MAX,
            },
        }
    }

    fn check_scheme(&self) -> Result<f64> {
        match (&self.flow, &self.scheme) {
            (FlowSpec::Sl2(_), Scheme::Haar { y_max }) => Ok(*y_max),
            (FlowSpec::Sl2(_), Scheme::Uniform) => Err(CoreError::Config(
                "SL2 flows sample from the Haar scheme, not Uniform".into(),
            )),
            (_, Scheme::Haar { .. }) => {
                if contains_sl2(&self.flow) {
                    Ok(sl2::HAAR_Y_MAX)
                } else {
                    Err(CoreError::Config(
                        "Haar scheme only applies to SL2 flows".into(),
                    ))
                }
            }
            (_, Scheme::Uniform) => {
                if contains_sl2(&self.flow) {
                    Err(CoreError::Config(
                        "flows with SL2 components need the Haar scheme".into(),
                    ))
                } else {
                    Ok(sl2::HAAR_Y_MAX)
                }
            }
        }
    }
}

fn contains_sl2(flow: &FlowSpec) -> bool {
    match flow {
        FlowSpec::Sl2(_) => true,
        FlowSpec::Product(p) => p.components.iter().any(contains_sl2),
        _ => false,
    }
}

fn sample_point(flow: &FlowSpec, rng: &mut CounterRng, y_max: f64) -> PhasePoint {
    match flow {
        FlowSpec::Kronecker(k) => {
            PhasePoint::Torus((0..k.dim).map(|_| rng.uniform()).collect())
        }
        FlowSpec::Suspension(s) => {
            let base = match &s.base {
                BaseMap::Permutation(t) => BasePoint::State(rng.below(t.len() as u64) as usize),
                BaseMap::Rotation(_) => BasePoint::Circle(rng.uniform()),
            };
            PhasePoint::Suspension {
                base,
                fiber: vec![rng.uniform()],
            }
        }
        FlowSpec::MultiSuspension(m) => {
            let d = m.dim();
            let base = match &m.base {
                MultiBase::Finite(maps) => {
                    BasePoint::State(rng.below(maps[0].len() as u64) as usize)
                }
                MultiBase::Rotations(_) => BasePoint::Circle(rng.uniform()),
            };
            PhasePoint::Suspension {
                base,
                fiber: (0..d).map(|_| rng.uniform()).collect(),
            }
        }
        FlowSpec::Sl2(_) => {
            // rejection sampling with this stream
            loop {
                let x = rng.uniform_in(-0.5, 0.5);
                let u = rng.uniform();
                let y_min = 3f64.sqrt() / 2.0;
                let y = 1.0 / (1.0 / y_min - u * (1.0 / y_min - 1.0 / y_max));
                if x * x + y * y >= 1.0 {
                    let theta = rng.uniform_in(0.0, std::f64::consts::PI);
                    let rep = sl2::reduce(&sl2_mat_from(x, y, theta)).expect("sampled point reduces");
                    return PhasePoint::Sl2(rep);
                }
            }
        }
        FlowSpec::Product(p) => PhasePoint::Product(
            p.components
                .iter()
                .map(|c| sample_point(c, rng, y_max))
                .collect(),
        ),
    }
}

fn sl2_mat_from(x: f64, y: f64, theta: f64) -> sl2::Mat {
    let s = y.sqrt();
    let (st, ct) = theta.sin_cos();
    // transpose of n(x) a(y) k(θ)
    let na = [[s, x / s], [0.0, 1.0 / s]];
    let k = [[ct, -st], [st, ct]];
    sl2::transpose(&sl2::mat_mul(&na, &k))
}

/// Draws n points of the flow's invariant measure; deterministic in
/// (seed, index) so parallel and serial runs agree bit-exactly.
pub fn sample_invariant(sampler: &MeasureSampler, n: usize) -> Result<Vec<PhasePoint>> {
    if n == 0 {
        return Err(CoreError::Contract("sample_invariant needs n ≥ 1".into()));
    }
    sampler.flow.validate()?;
    let y_max = sampler.check_scheme()?;
    let flow = sampler.flow.clone();
    let seed = sampler.seed;
    Ok(crate::exec::map_indexed(n, move |i| {
        let mut rng = CounterRng::stream(seed, i as u64);
        sample_point(&flow, &mut rng, y_max)
    }))
}
