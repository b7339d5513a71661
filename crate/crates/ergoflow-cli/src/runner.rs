//! Execution of experiment configs: plan curves and reports across the
//! point ensemble, persisted as CSV/JSON plus a run manifest. Outputs are
//! written atomically (temp-then-rename) and runs with identical seeds are
//! bit-identical.

use crate::config::{ExperimentConfig, OracleDef};
use anyhow::{anyhow, Context, Result};
use ergoflow_core::average::{continuous_average, AveragePlan, QuadratureConfig};
use ergoflow_core::diagnostics::{
    diagnose, predict_limit, ConvergenceReport, EstimatorConfig, Verdict,
};
use ergoflow_core::flow::{sample_invariant, FlowSpec, MeasureSampler};
use ergoflow_core::phase::PhasePoint;
use ergoflow_core::poly::{parse_polynomial, shift_scale_decompose, Polynomial};
use ergoflow_core::rng::CounterRng;
use ergoflow_core::C64;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PLAN_ERROR: i32 = 2;
pub const EXIT_CONFIG_ERROR: i32 = 3;

/// One line per stage: (label, seconds).
#[derive(Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub config_seed: u64,
    pub effective_seed: u64,
    pub wall_time: Vec<(String, f64)>,
    /// Relative Haar mass discarded by the SL₂ cusp truncation, when the
    /// run sampled the modular surface.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_bias: Option<f64>,
    pub flags: Vec<String>,
    pub outputs: Vec<String>,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// 17-significant-digit decimal formatting: bit-stable round trips,
/// `.` decimal separator, no locale.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn effective_seed(config_seed: u64) -> u64 {
    match std::env::var("ERGOFLOW_SEED") {
        Ok(s) => s.parse().unwrap_or(config_seed),
        Err(_) => config_seed,
    }
}

fn flow_contains_sl2(flow: &FlowSpec) -> bool {
    match flow {
        FlowSpec::Sl2(_) => true,
        FlowSpec::Product(p) => p.components.iter().any(flow_contains_sl2),
        _ => false,
    }
}

fn plan_points(
    cfg: &ExperimentConfig,
    plan: &AveragePlan,
    seed: u64,
) -> Result<Vec<PhasePoint>> {
    if let Some(explicit) = &cfg.points.explicit {
        return Ok(explicit.iter().map(ExperimentConfig::build_point).collect());
    }
    let sampler_def = cfg.points.sampler.as_ref().expect("validated");
    let flow = plan.flows[0].clone();
    let sampler = if flow_contains_sl2(&flow) {
        MeasureSampler::haar(flow, seed)
    } else {
        MeasureSampler::uniform(flow, seed)
    };
    Ok(sample_invariant(&sampler, sampler_def.count)?)
}

fn estimator_config(cfg: &ExperimentConfig, quad: &QuadratureConfig) -> EstimatorConfig {
    let mut est = EstimatorConfig {
        quad: quad.clone(),
        ..EstimatorConfig::default_config()
    };
    if let Some(e) = &cfg.estimator {
        if let Some(h) = e.discrete_horizon {
            est.discrete_horizon = h;
        }
        if let Some(r) = e.r {
            est.r = r;
        }
        if let Some(b) = e.bump_grid {
            est.bump_grid = b;
        }
    }
    est
}

#[derive(Serialize)]
struct PlanReport {
    plan: String,
    plan_hash: String,
    /// sha256 of the config this run executed; the run manifest in the
    /// same directory carries the full provenance for this hash.
    config_hash: String,
    reports: Vec<ConvergenceReport>,
}

fn curve_csv(reports: &[ConvergenceReport], k: usize) -> String {
    let mut out = String::new();
    let m_cols: String = (1..=k).map(|i| format!("m{i},")).collect();
    let _ = writeln!(out, "point,{m_cols}re,im,err_estimate");
    for (pi, rep) in reports.iter().enumerate() {
        for p in &rep.curve.points {
            let ms: String = p.m.iter().map(|&m| format!("{},", fmt_f64(m))).collect();
            let _ = writeln!(
                out,
                "{pi},{ms}{},{},{}",
                fmt_f64(p.re),
                fmt_f64(p.im),
                fmt_f64(p.err_estimate)
            );
        }
    }
    out
}

fn summary_csv_header() -> &'static str {
    "plan,point,m_max,re,im,predicted_re,predicted_im,residual,residual_tolerance,verdict,flagged\n"
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::ConvergedToPrediction => "converged-to-prediction",
        Verdict::ConvergedElsewhere => "converged-elsewhere",
        Verdict::Unconverged => "unconverged",
    }
}

/// Executes every plan over the ensemble, writing per-plan curve CSVs and
/// report JSONs, a flat summary CSV, and the manifest (last).
pub fn run(config_text: &str, out_dir: &Path, threads: Option<usize>) -> Result<i32> {
    let t_total = Instant::now();
    let cfg = ExperimentConfig::parse(config_text)?;
    let quad = cfg.build_quadrature()?;
    let plans = cfg.build_plans().map_err(|e| anyhow!("{e}")).context("plan build")?;
    quad.validate().map_err(|e| anyhow!("{e}"))?;
    if let Some(n) = threads {
        // worker pool for plan execution and inner parallel loops
        let _ = ergoflow_core_thread_pool(n);
    }
    let seed = effective_seed(cfg.seed);
    let est = estimator_config(&cfg, &quad);

    let mut wall = Vec::new();
    let mut flags = Vec::new();
    let mut outputs = Vec::new();
    let mut summary = String::from(summary_csv_header());
    let mut any_plan_error = false;
    let mut used_sl2 = false;

    // canonical form of the config, for diffing and byte-stable round trips
    let canonical_path = out_dir.join("config.canonical.toml");
    atomic_write(&canonical_path, cfg.canonical_toml()?.as_bytes())?;
    outputs.push(canonical_path.display().to_string());

    for (name, plan) in &plans {
        let t_plan = Instant::now();
        used_sl2 |= plan.flows.iter().any(flow_contains_sl2);
        let result: Result<Vec<ConvergenceReport>> = (|| {
            let points = plan_points(&cfg, plan, seed)?;
            let mut reports = Vec::with_capacity(points.len());
            for x in &points {
                match diagnose(plan, x, &quad, &est) {
                    Ok(rep) => reports.push(rep),
                    Err(ergoflow_core::CoreError::Unsupported(_)) => {
                        // forms without a limit formula still get curves
                        let curve = continuous_average(plan, x, &quad)?;
                        let osc = ergoflow_core::diagnostics::oscillation_profile(
                            &curve,
                            &curve
                                .points
                                .iter()
                                .map(|p| p.m.iter().cloned().fold(f64::INFINITY, f64::min))
                                .collect::<Vec<_>>(),
                        );
                        reports.push(ConvergenceReport {
                            curve,
                            oscillation: osc,
                            predicted: ergoflow_core::diagnostics::PredictedLimit {
                                re: f64::NAN,
                                im: f64::NAN,
                                formula:
                                    ergoflow_core::diagnostics::FormulaTag::ThmBProduct,
                                ingredients: vec![],
                                flagged: true,
                            },
                            residual: f64::NAN,
                            residual_tolerance: f64::NAN,
                            oscillation_tolerance: f64::NAN,
                            verdict: Verdict::Unconverged,
                        });
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(reports)
        })();
        match result {
            Ok(reports) => {
                let k = reports
                    .first()
                    .and_then(|r| r.curve.points.first())
                    .map(|p| p.m.len())
                    .unwrap_or(1);
                let csv_path = out_dir.join(format!("{name}.curve.csv"));
                atomic_write(&csv_path, curve_csv(&reports, k).as_bytes())?;
                outputs.push(csv_path.display().to_string());
                let report = PlanReport {
                    plan: name.clone(),
                    plan_hash: plan.plan_hash(),
                    config_hash: hex_sha256(config_text.as_bytes()),
                    reports,
                };
                let json_path = out_dir.join(format!("{name}.report.json"));
                atomic_write(&json_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
                outputs.push(json_path.display().to_string());
                for (pi, rep) in report.reports.iter().enumerate() {
                    if rep.predicted.flagged {
                        flags.push(format!("{name}[{pi}]: unconverged or missing ingredient"));
                    }
                    let last = rep.curve.points.last();
                    let _ = writeln!(
                        summary,
                        "{name},{pi},{},{},{},{},{},{},{},{},{}",
                        fmt_f64(
                            last.map(|p| p.m.iter().cloned().fold(f64::INFINITY, f64::min))
                                .unwrap_or(f64::NAN)
                        ),
                        fmt_f64(last.map(|p| p.re).unwrap_or(f64::NAN)),
                        fmt_f64(last.map(|p| p.im).unwrap_or(f64::NAN)),
                        fmt_f64(rep.predicted.re),
                        fmt_f64(rep.predicted.im),
                        fmt_f64(rep.residual),
                        fmt_f64(rep.residual_tolerance),
                        verdict_str(rep.verdict),
                        rep.predicted.flagged,
                    );
                }
            }
            Err(e) => {
                any_plan_error = true;
                flags.push(format!("{name}: plan error: {e}"));
                eprintln!("plan '{name}' failed: {e}");
            }
        }
        wall.push((format!("plan:{name}"), t_plan.elapsed().as_secs_f64()));
    }

    let summary_path = out_dir.join("summary.csv");
    atomic_write(&summary_path, summary.as_bytes())?;
    outputs.push(summary_path.display().to_string());

    wall.push(("total".into(), t_total.elapsed().as_secs_f64()));
    let manifest = RunManifest {
        config_hash: hex_sha256(config_text.as_bytes()),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_seed: cfg.seed,
        effective_seed: seed,
        wall_time: wall,
        truncation_bias: used_sl2
            .then(|| ergoflow_core::flows::sl2::haar_truncation_bias(
                ergoflow_core::flows::sl2::HAAR_Y_MAX,
            )),
        flags,
        outputs,
    };
    let manifest_path = out_dir.join("manifest.json");
    atomic_write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    Ok(if any_plan_error { EXIT_PLAN_ERROR } else { EXIT_OK })
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn ergoflow_core_thread_pool(_n: usize) -> Result<()> {
    // rayon's global pool is configured through the environment when the
    // parallel feature is active; setting it here keeps --threads honored
    std::env::set_var("RAYON_NUM_THREADS", _n.to_string());
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle-compare
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OracleOutcome {
    kind: String,
    max_delta: f64,
    tolerance: f64,
    pass: bool,
    detail: String,
}

/// Compares a registered oracle against the engine; exit 0 iff all deltas
/// are within the config tolerance.
pub fn oracle_compare(config_text: &str, out_dir: &Path) -> Result<i32> {
    let cfg = ExperimentConfig::parse(config_text)?;
    let oracle = match &cfg.oracle {
        Some(o) => o.clone(),
        None => {
            eprintln!("no oracle registered in this config");
            return Ok(EXIT_CONFIG_ERROR);
        }
    };
    let outcome = match &oracle {
        OracleDef::Decomposition {
            max_degree,
            samples,
            tolerance,
        } => decomposition_oracle(*max_degree, *samples, *tolerance, cfg.seed)?,
        OracleDef::SuspensionTransfer {
            tables,
            f_values,
            polys,
            state,
            z,
            n,
            tolerance,
        } => {
            let spec = ergoflow_core::flows::MultiSuspensionSpec {
                base: ergoflow_core::flows::MultiBase::Finite(tables.clone()),
            };
            let f: Vec<C64> = f_values.iter().map(|&v| C64::new(v, 0.0)).collect();
            let ps: Vec<Polynomial> = polys
                .iter()
                .map(|s| Ok(parse_polynomial(s)?))
                .collect::<Result<_>>()?;
            let check = ergoflow_core::discrete::suspension_transfer_check(
                &spec, &f, &ps, *state, z, *n,
            )?;
            OracleOutcome {
                kind: "suspension_transfer".into(),
                max_delta: check.residual,
                tolerance: *tolerance,
                pass: check.residual <= *tolerance,
                detail: format!(
                    "lhs={:?} rhs={:?} redraws={}",
                    check.lhs, check.rhs, check.redraws
                ),
            }
        }
        OracleDef::CharacterLimit { plan, tolerance } => {
            let plans = cfg.build_plans()?;
            let (name, plan_obj) = plans
                .iter()
                .find(|(n, _)| n == plan)
                .ok_or_else(|| anyhow!("oracle references unknown plan '{plan}'"))?;
            let quad = cfg.build_quadrature()?;
            let est = estimator_config(&cfg, &quad);
            let points = plan_points(&cfg, plan_obj, effective_seed(cfg.seed))?;
            let mut max_delta = 0.0f64;
            for x in &points {
                let prediction = predict_limit(plan_obj, x, &est)?;
                let curve = continuous_average(plan_obj, x, &quad)?;
                max_delta = max_delta.max((curve.last_value() - prediction.value()).norm());
            }
            OracleOutcome {
                kind: "character_limit".into(),
                max_delta,
                tolerance: *tolerance,
                pass: max_delta <= *tolerance,
                detail: format!("plan {name}, {} points", points.len()),
            }
        }
        OracleDef::BruteForceRiemann {
            plan,
            m,
            riemann_step,
            tolerance,
        } => {
            let plans = cfg.build_plans()?;
            let (_, plan_obj) = plans
                .iter()
                .find(|(n, _)| n == plan)
                .ok_or_else(|| anyhow!("oracle references unknown plan '{plan}'"))?;
            let mut quad = cfg.build_quadrature()?;
            quad.m_grid = vec![*m];
            let points = plan_points(&cfg, plan_obj, effective_seed(cfg.seed))?;
            let x = points
                .first()
                .ok_or_else(|| anyhow!("no points configured"))?;
            let engine = continuous_average(plan_obj, x, &quad)?.last_value();
            let bf = brute_force_average(plan_obj, x, *m, *riemann_step)?;
            let delta = (engine - bf).norm();
            OracleOutcome {
                kind: "brute_force_riemann".into(),
                max_delta: delta,
                tolerance: *tolerance,
                pass: delta <= *tolerance,
                detail: format!("engine={engine:?} riemann={bf:?}"),
            }
        }
    };
    println!(
        "oracle {}: max delta {:.3e} vs tolerance {:.3e} → {}",
        outcome.kind,
        outcome.max_delta,
        outcome.tolerance,
        if outcome.pass { "PASS" } else { "FAIL" }
    );
    println!("  {}", outcome.detail);
    let path = out_dir.join("oracle_report.json");
    atomic_write(&path, serde_json::to_string_pretty(&outcome)?.as_bytes())?;
    Ok(if outcome.pass { EXIT_OK } else { EXIT_PLAN_ERROR })
}

fn decomposition_oracle(
    max_degree: usize,
    samples: usize,
    tolerance: f64,
    seed: u64,
) -> Result<OracleOutcome> {
    let mut rng = CounterRng::stream(seed, 0);
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
        let deg = 2 + (rng.below((max_degree - 1) as u64) as usize);
        let mut coeffs = vec![0.0];
        for _ in 1..=deg {
            coeffs.push(rng.uniform_in(-3.0, 3.0));
        }
        if coeffs[deg] == 0.0 {
            coeffs[deg] = 1.0;
        }
        let q = Polynomial::new(coeffs);
        let delta = rng.uniform_in(1e-3, 1.0);
        let d = shift_scale_decompose(&q, delta)?;
        let n = (rng.below(201) as f64) - 100.0;
        let t = rng.uniform_in(-10.0, 10.0);
        let lhs = q.eval(n * delta + t);
        let rhs = d.eval_rhs(&q, n, t);
        let rel = (lhs - rhs).abs() / (1.0 + lhs.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(OracleOutcome {
        kind: "decomposition".into(),
        max_delta: max_rel,
        tolerance,
        pass: max_rel <= tolerance,
        detail: format!("{samples} random (Q, δ, n, t), deg ≤ {max_degree}"),
    })
}

/// Independent midpoint Riemann sum of a plan's integrand; deliberately
/// naive so it stays an oracle for the engine's quadrature.
fn brute_force_average(
    plan: &AveragePlan,
    x: &PhasePoint,
    m: f64,
    step: f64,
) -> Result<C64> {
    use ergoflow_core::average::PlanForm;
    let steps = (m / step).round() as usize;
    let h = m / steps as f64;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..steps {
        let t = (i as f64 + 0.5) * h;
        let v = match &plan.form {
            PlanForm::ThmA { a, q_poly } => {
                let x1 = plan.flows[0].evolve1(x, t)?;
                let x2 = plan.flows[0].evolve1(x, a.as_f64() * t)?;
                let x3 = plan.flows[1].evolve1(x, q_poly.eval(t))?;
                plan.observables[0].eval(&x1)?
                    * plan.observables[1].eval(&x2)?
                    * plan.observables[2].eval(&x3)?
            }
            PlanForm::ThmB {
                a,
                q_poly,
                alpha,
                beta,
            } => {
                let ta = t.powf(*alpha);
                let x1 = plan.flows[0].evolve1(x, ta)?;
                let x2 = plan.flows[0].evolve1(x, a.as_f64() * ta)?;
                let x3 = plan.flows[1].evolve1(x, q_poly.eval(t.powf(*beta)))?;
                plan.observables[0].eval(&x1)?
                    * plan.observables[1].eval(&x2)?
                    * plan.observables[2].eval(&x3)?
            }
            PlanForm::Single { q_poly, exponent } => {
                let x1 = plan.flows[0].evolve1(x, q_poly.eval(t.powf(*exponent)))?;
                plan.observables[0].eval(&x1)?
            }
            _ => {
                return Err(anyhow!(
                    "brute-force oracle supports thm_a/thm_b/single forms"
                ))
            }
        };
        acc += v * h;
    }
    Ok(acc / m)
}

/// Resolves a config argument: a path on disk, or the name of a bundled
/// fixture.
pub fn resolve_config(arg: &str) -> Result<(String, PathBuf)> {
    let p = Path::new(arg);
    if p.exists() {
        let text = fs::read_to_string(p).with_context(|| format!("reading {arg}"))?;
        return Ok((text, p.to_path_buf()));
    }
    let name = arg.trim_end_matches(".toml");
    if let Some(text) = crate::fixtures::fixture(name) {
        return Ok((text.to_string(), PathBuf::from(format!("fixture:{name}"))));
    }
    anyhow::bail!("config '{arg}' is neither a file nor a bundled fixture")
}
