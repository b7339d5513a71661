//! Experiment config format: a strict TOML schema (unknown keys rejected)
//! that builds the core plan/flow/observable objects. Flows and
//! observables are declared once with string ids and referenced from
//! plans, which keeps experiment files reviewable and diffable.

use anyhow::{anyhow, bail, Context, Result};
use ergoflow_core::average::{AveragePlan, PlanForm, QuadratureConfig, Rational, Strategy};
use ergoflow_core::flow::FlowSpec;
use ergoflow_core::flows::{
    BaseMap, KroneckerSpec, MultiBase, MultiSuspensionSpec, ProductFlowSpec, Sl2FlowSpec, Sl2Kind,
    SuspensionSpec,
};
use ergoflow_core::observable::{Bump, Observable};
use ergoflow_core::phase::{BasePoint, PhasePoint};
use ergoflow_core::poly::{parse_polynomial, Polynomial};
use ergoflow_core::quad::PanelRule;
use ergoflow_core::C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub quadrature: QuadCfg,
    pub flows: Vec<FlowDef>,
    pub observables: Vec<ObsDef>,
    pub plans: Vec<PlanDef>,
    pub points: PointsDef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputDef>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QuadCfg {
    pub step: f64,
    pub rule: String,
    pub m_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_grid: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowDef {
    pub id: String,
    pub spec: FlowSpecDef,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpecDef {
    Kronecker { alpha: Vec<f64> },
    KroneckerMulti { rows: Vec<Vec<f64>> },
    SuspensionPermutation { table: Vec<usize> },
    SuspensionRotation { angle: f64 },
    MultiSuspension { tables: Vec<Vec<usize>> },
    MultiSuspensionRotations { angles: Vec<f64> },
    Geodesic { speed: f64 },
    Horocycle { speed: f64 },
    Product {
        components: Vec<String>,
        routing: Vec<Vec<f64>>,
        param_dim: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObsDef {
    pub id: String,
    pub expr: ObsExpr,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObsExpr {
    Constant {
        re: f64,
        #[serde(default)]
        im: f64,
    },
    TorusCharacter {
        freq: Vec<i64>,
    },
    FiberCharacter {
        freq: Vec<i64>,
    },
    BaseFunction {
        values: Vec<Vec<f64>>,
    },
    SmoothBump {
        center: Vec<f64>,
        width: f64,
    },
    Product {
        children: Vec<String>,
    },
    Sum {
        terms: Vec<SumTerm>,
    },
    RealPart {
        child: String,
    },
    Component {
        index: usize,
        child: String,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SumTerm {
    pub weight: Vec<f64>,
    pub child: String,
}

/// Polynomial in configs: either a string like "t^3 - 2*t" or the
/// coefficient list [c0, c1, ...].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PolyDef {
    Text(String),
    Coeffs(Vec<f64>),
}

impl PolyDef {
    pub fn build(&self) -> Result<Polynomial> {
        match self {
            PolyDef::Text(s) => Ok(parse_polynomial(s)?),
            PolyDef::Coeffs(c) => Ok(Polynomial::new(c.clone())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanDef {
    pub name: String,
    pub form: String,
    pub flows: Vec<String>,
    pub observables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_poly: Option<PolyDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_rational: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_form: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PointsDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<PointDef>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SamplerDef {
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PointDef {
    Torus { coords: Vec<f64> },
    SuspensionState { state: usize, fiber: Vec<f64> },
    SuspensionCircle { circle: f64, fiber: Vec<f64> },
    Sl2 { x: f64, y: f64, theta: f64 },
    Product { parts: Vec<PointDef> },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimatorDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete_horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump_grid: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputDef {
    pub dir: String,
}

/// Registered oracle checks for `ergoflow oracle-compare`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleDef {
    /// Shift-scale decomposition residual over random (Q, δ, n, t).
    Decomposition {
        max_degree: usize,
        samples: usize,
        tolerance: f64,
    },
    /// Exact suspension-transfer identity on a finite base.
    SuspensionTransfer {
        tables: Vec<Vec<usize>>,
        f_values: Vec<f64>,
        polys: Vec<String>,
        state: usize,
        z: Vec<f64>,
        n: usize,
        tolerance: f64,
    },
    /// Curve tail against the symbolic character limit of a named plan.
    CharacterLimit { plan: String, tolerance: f64 },
    /// Named plan at horizon m against an independent midpoint Riemann sum.
    BruteForceRiemann {
        plan: String,
        m: f64,
        riemann_step: f64,
        tolerance: f64,
    },
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).context("config parse failure")?;
        cfg.check_ids()?;
        Ok(cfg)
    }

    pub fn canonical_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.flows {
            if !seen.insert(&f.id) {
                bail!("duplicate flow id '{}'", f.id);
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.observables {
            if !seen.insert(&o.id) {
                bail!("duplicate observable id '{}'", o.id);
            }
        }
        if !self.plans.is_empty()
            && self.points.sampler.is_none()
            && self.points.explicit.is_none()
        {
            bail!("points need either a sampler or an explicit list");
        }
        Ok(())
    }

    /// Resolves the flow table (handles product references).
    pub fn build_flows(&self) -> Result<BTreeMap<String, FlowSpec>> {
        let mut out: BTreeMap<String, FlowSpec> = BTreeMap::new();
        // two passes so products can reference earlier flows
        for pass in 0..2 {
            for def in &self.flows {
                if out.contains_key(&def.id) {
                    continue;
                }
                let spec = match &def.spec {
                    FlowSpecDef::Kronecker { alpha } => {
                        Some(FlowSpec::Kronecker(KroneckerSpec::new(alpha.clone())))
                    }
                    FlowSpecDef::KroneckerMulti { rows } => {
                        Some(FlowSpec::Kronecker(KroneckerSpec::multi(rows.clone())))
                    }
                    FlowSpecDef::SuspensionPermutation { table } => {
                        Some(FlowSpec::Suspension(SuspensionSpec {
                            base: BaseMap::Permutation(table.clone()),
                        }))
                    }
                    FlowSpecDef::SuspensionRotation { angle } => {
                        Some(FlowSpec::Suspension(SuspensionSpec {
                            base: BaseMap::Rotation(*angle),
                        }))
                    }
                    FlowSpecDef::MultiSuspension { tables } => {
                        Some(FlowSpec::MultiSuspension(MultiSuspensionSpec {
                            base: MultiBase::Finite(tables.clone()),
                        }))
                    }
                    FlowSpecDef::MultiSuspensionRotations { angles } => {
                        Some(FlowSpec::MultiSuspension(MultiSuspensionSpec {
                            base: MultiBase::Rotations(angles.clone()),
                        }))
                    }
                    FlowSpecDef::Geodesic { speed } => Some(FlowSpec::Sl2(Sl2FlowSpec {
                        kind: Sl2Kind::Geodesic,
                        speed: *speed,
                    })),
                    FlowSpecDef::Horocycle { speed } => Some(FlowSpec::Sl2(Sl2FlowSpec {
                        kind: Sl2Kind::Horocycle,
                        speed: *speed,
                    })),
                    FlowSpecDef::Product {
                        components,
                        routing,
                        param_dim,
                    } => {
                        let comps: Option<Vec<FlowSpec>> =
                            components.iter().map(|id| out.get(id).cloned()).collect();
                        match comps {
                            Some(components) => Some(FlowSpec::Product(ProductFlowSpec {
                                components,
                                routing: routing.clone(),
                                param_dim: *param_dim,
                            })),
                            None if pass == 0 => None,
                            None => bail!("product flow '{}' references unknown components", def.id),
                        }
                    }
                };
                if let Some(spec) = spec {
                    spec.validate()
                        .map_err(|e| anyhow!("flow '{}': {e}", def.id))?;
                    out.insert(def.id.clone(), spec);
                }
            }
        }
        Ok(out)
    }

    pub fn build_observables(&self) -> Result<BTreeMap<String, Observable>> {
        let mut out: BTreeMap<String, Observable> = BTreeMap::new();
        // iterate until settled so references resolve in any order
        let mut remaining: Vec<&ObsDef> = self.observables.iter().collect();
        while !remaining.is_empty() {
            let before = remaining.len();
            remaining.retain(|def| match build_obs(&def.expr, &out) {
                Some(o) => {
                    out.insert(def.id.clone(), o);
                    false
                }
                None => true,
            });
            if remaining.len() == before {
                bail!(
                    "unresolvable observable references: {:?}",
                    remaining.iter().map(|d| &d.id).collect::<Vec<_>>()
                );
            }
        }
        Ok(out)
    }

    pub fn build_quadrature(&self) -> Result<QuadratureConfig> {
        let rule = match self.quadrature.rule.as_str() {
            "midpoint" => PanelRule::Midpoint,
            "gauss4" => PanelRule::Gauss4,
            other => bail!("unknown quadrature rule '{other}'"),
        };
        let strategy = match self.quadrature.strategy.as_deref() {
            None | Some("auto") => Strategy::Auto,
            Some("direct") => Strategy::Direct,
            Some(other) => bail!("unknown strategy '{other}'"),
        };
        Ok(QuadratureConfig {
            step: self.quadrature.step,
            rule,
            m_grid: self.quadrature.m_grid.clone(),
            box_grid: self.quadrature.box_grid.clone(),
            strategy,
        })
    }

    pub fn build_plans(&self) -> Result<Vec<(String, AveragePlan)>> {
        let flows = self.build_flows()?;
        let observables = self.build_observables()?;
        let mut out = Vec::with_capacity(self.plans.len());
        for def in &self.plans {
            let plan_flows: Vec<FlowSpec> = def
                .flows
                .iter()
                .map(|id| {
                    flows
                        .get(id)
                        .cloned()
                        .ok_or_else(|| anyhow!("plan '{}': unknown flow '{id}'", def.name))
                })
                .collect::<Result<_>>()?;
            let plan_obs: Vec<Observable> = def
                .observables
                .iter()
                .map(|id| {
                    observables
                        .get(id)
                        .cloned()
                        .ok_or_else(|| anyhow!("plan '{}': unknown observable '{id}'", def.name))
                })
                .collect::<Result<_>>()?;
            let q_poly = || -> Result<Polynomial> {
                def.q_poly
                    .as_ref()
                    .ok_or_else(|| anyhow!("plan '{}': missing q_poly", def.name))?
                    .build()
            };
            let a_rat = || -> Result<Rational> {
                let v = def
                    .a
                    .as_ref()
                    .ok_or_else(|| anyhow!("plan '{}': missing a = [p, q]", def.name))?;
                if v.len() != 2 {
                    bail!("plan '{}': a must be [p, q]", def.name);
                }
                Ok(Rational::new(v[0], v[1])?)
            };
            let form = match def.form.as_str() {
                "thm_a" => PlanForm::ThmA {
                    a: a_rat()?,
                    q_poly: q_poly()?,
                },
                "thm_b" => PlanForm::ThmB {
                    a: a_rat()?,
                    q_poly: q_poly()?,
                    alpha: def
                        .alpha
                        .ok_or_else(|| anyhow!("plan '{}': missing alpha", def.name))?,
                    beta: def
                        .beta
                        .ok_or_else(|| anyhow!("plan '{}': missing beta", def.name))?,
                },
                "thm_c" => PlanForm::ThmC {
                    c: def.c.ok_or_else(|| anyhow!("plan '{}': missing c", def.name))?,
                    linear_form: def
                        .linear_form
                        .clone()
                        .ok_or_else(|| anyhow!("plan '{}': missing linear_form", def.name))?,
                },
                "thm_d1" => PlanForm::ThmD1 {
                    exponents: def
                        .exponents
                        .clone()
                        .ok_or_else(|| anyhow!("plan '{}': missing exponents", def.name))?,
                    beta: def
                        .beta
                        .ok_or_else(|| anyhow!("plan '{}': missing beta", def.name))?,
                    q_poly: q_poly()?,
                },
                "thm_d2" => {
                    let v = def
                        .c_rational
                        .as_ref()
                        .ok_or_else(|| anyhow!("plan '{}': missing c_rational", def.name))?;
                    if v.len() != 2 {
                        bail!("plan '{}': c_rational must be [p, q]", def.name);
                    }
                    PlanForm::ThmD2 {
                        c: Rational::new(v[0], v[1])?,
                        beta: def
                            .beta
                            .ok_or_else(|| anyhow!("plan '{}': missing beta", def.name))?,
                        q_poly: q_poly()?,
                    }
                }
                "single" => PlanForm::Single {
                    q_poly: q_poly()?,
                    exponent: def.exponent.unwrap_or(1.0),
                },
                other => bail!("plan '{}': unknown form '{other}'", def.name),
            };
            let plan = AveragePlan {
                form,
                flows: plan_flows,
                observables: plan_obs,
            };
            plan.validate()
                .map_err(|e| anyhow!("plan '{}': {e}", def.name))?;
            out.push((def.name.clone(), plan));
        }
        Ok(out)
    }

    pub fn build_point(def: &PointDef) -> PhasePoint {
        match def {
            PointDef::Torus { coords } => PhasePoint::Torus(coords.clone()),
            PointDef::SuspensionState { state, fiber } => PhasePoint::Suspension {
                base: BasePoint::State(*state),
                fiber: fiber.clone(),
            },
            PointDef::SuspensionCircle { circle, fiber } => PhasePoint::Suspension {
                base: BasePoint::Circle(*circle),
                fiber: fiber.clone(),
            },
            PointDef::Sl2 { x, y, theta } => {
                let s = y.sqrt();
                let (st, ct) = theta.sin_cos();
                let na = [[s, x / s], [0.0, 1.0 / s]];
                let k = [[ct, -st], [st, ct]];
                let m = ergoflow_core::flows::sl2::transpose(&ergoflow_core::flows::sl2::mat_mul(
                    &na, &k,
                ));
                PhasePoint::Sl2(
                    ergoflow_core::flows::sl2::reduce(&m).expect("config SL2 point reduces"),
                )
            }
            PointDef::Product { parts } => {
                PhasePoint::Product(parts.iter().map(Self::build_point).collect())
            }
        }
    }
}

fn build_obs(expr: &ObsExpr, resolved: &BTreeMap<String, Observable>) -> Option<Observable> {
    Some(match expr {
        ObsExpr::Constant { re, im } => Observable::Constant(C64::new(*re, *im)),
        ObsExpr::TorusCharacter { freq } => Observable::TorusCharacter(freq.clone()),
        ObsExpr::FiberCharacter { freq } => Observable::FiberCharacter(freq.clone()),
        ObsExpr::BaseFunction { values } => Observable::BaseFunction(
            values
                .iter()
                .map(|v| C64::new(v[0], v.get(1).copied().unwrap_or(0.0)))
                .collect(),
        ),
        ObsExpr::SmoothBump { center, width } => Observable::SmoothBump(Bump {
            center: (center[0], center[1], center[2]),
            width: *width,
        }),
        ObsExpr::Product { children } => {
            let ch: Option<Vec<Observable>> =
                children.iter().map(|id| resolved.get(id).cloned()).collect();
            Observable::Product(ch?)
        }
        ObsExpr::Sum { terms } => {
            let ch: Option<Vec<(C64, Observable)>> = terms
                .iter()
                .map(|t| {
                    resolved.get(&t.child).cloned().map(|o| {
                        (
                            C64::new(t.weight[0], t.weight.get(1).copied().unwrap_or(0.0)),
                            o,
                        )
                    })
                })
                .collect();
            Observable::Sum(ch?)
        }
        ObsExpr::RealPart { child } => Observable::RealPart(Box::new(resolved.get(child)?.clone())),
        ObsExpr::Component { index, child } => {
            Observable::Component(*index, Box::new(resolved.get(child)?.clone()))
        }
    })
}
