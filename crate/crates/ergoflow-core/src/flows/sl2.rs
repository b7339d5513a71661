//! Geodesic and horocycle flows on SL₂(ℝ)/SL₂(ℤ).
//!
//! Points are left cosets g·SL₂(ℤ); the flows act by left multiplication
//! with a(ct) = diag(e^{ct}, e^{-ct}) and u(ct) = (1 ct; 0 1). A coset is
//! stored as its canonical fundamental-domain representative: transpose to
//! the Γ\G picture, reduce the base point of the upper half-plane by the
//! classical |Re z| ≤ 1/2, |z| ≥ 1 translate/invert loop, fold the frame
//! angle modulo π (−I ∈ SL₂(ℤ)), and transpose back.
//!
//! Geodesic legs are hyperbolically unstable (errors grow like e^{2t}), so
//! evolve runs the matrix product and reduction in double-double up to
//! |ct| ≈ 30 and falls back to renormalized unit steps beyond; the unit
//! steps keep e^{ct} in range, at the cost of pointwise (not statistical)
//! accuracy, which is all a mixing flow can offer at that depth anyway.

use crate::dd::Dd;
use crate::error::{CoreError, Result};
use crate::observable::Bump;
use crate::phase::Sl2Point;
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Mat = [[f64; 2]; 2];

const REDUCE_CAP: usize = 1000;
const BOUNDARY_EPS: f64 = 1e-9;
/// Longest geodesic exponent handled in one double-double leg.
const DD_LEG: f64 = 30.0;
/// Longest horocycle shear handled in one leg.
const HORO_LEG: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sl2Kind {
    Geodesic,
    Horocycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sl2FlowSpec {
    pub kind: Sl2Kind,
    /// Real speed multiplier c in a(ct) / u(ct).
    pub speed: f64,
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn transpose(m: &Mat) -> Mat {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn det(m: &Mat) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// diag(e^t, e^{-t})
pub fn a_mat(t: f64) -> Mat {
    [[t.exp(), 0.0], [0.0, (-t).exp()]]
}

/// (1 t; 0 1)
pub fn u_mat(t: f64) -> Mat {
    [[1.0, t], [0.0, 1.0]]
}

fn n_mat(x: f64) -> Mat {
    [[1.0, x], [0.0, 1.0]]
}

fn ay_mat(y: f64) -> Mat {
    let s = y.sqrt();
    [[s, 0.0], [0.0, 1.0 / s]]
}

fn k_mat(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

// --- double-double 2x2 helpers -------------------------------------------

type MatDd = [[Dd; 2]; 2];

fn to_dd(m: &Mat) -> MatDd {
    [
        [Dd::from(m[0][0]), Dd::from(m[0][1])],
        [Dd::from(m[1][0]), Dd::from(m[1][1])],
    ]
}

fn from_dd(m: &MatDd) -> Mat {
    [
        [m[0][0].to_f64(), m[0][1].to_f64()],
        [m[1][0].to_f64(), m[1][1].to_f64()],
    ]
}

fn mat_mul_dd(a: &MatDd, b: &MatDd) -> MatDd {
    let e = |i: usize, j: usize| a[i][0].mul(b[0][j]).add(a[i][1].mul(b[1][j]));
    [[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]]
}

fn a_mat_dd(t: f64) -> MatDd {
    let e = Dd::from(t).exp();
    [[e, Dd::ZERO], [Dd::ZERO, e.recip()]]
}

fn u_mat_dd(t: f64) -> MatDd {
    [[Dd::ONE, Dd::from(t)], [Dd::ZERO, Dd::ONE]]
}

// --- fundamental-domain reduction -----------------------------------------

/// Left-reduction data: integer matrix γ with (γh)·i in the fundamental
/// domain. Entries of γ stay exact as f64 integers.
fn reduce_upper_f64(h: &Mat) -> Result<Mat> {
    let (a, b, c, d) = (h[0][0], h[0][1], h[1][0], h[1][1]);
    let dt = det(h);
    let den = c * c + d * d;
    let mut x = (a * c + b * d) / den;
    let mut y = dt / den;
    reduce_loop(&mut x, &mut y)
}

fn reduce_upper_dd(h: &MatDd) -> Result<Mat> {
    let (a, b, c, d) = (h[0][0], h[0][1], h[1][0], h[1][1]);
    let dt = a.mul(d).sub(b.mul(c));
    let den = c.mul(c).add(d.mul(d));
    let mut x = a.mul(c).add(b.mul(d)).div(den);
    let mut y = dt.div(den);
    reduce_loop_dd(&mut x, &mut y)
}

fn reduce_loop(x: &mut f64, y: &mut f64) -> Result<Mat> {
    if !(*y > 0.0) || !x.is_finite() {
        return Err(CoreError::NumericInstability {
            t: f64::NAN,
            what: format!("base point left the upper half plane (x={x}, y={y})"),
        });
    }
    let mut gamma = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..REDUCE_CAP {
        let n = x.round();
        if n != 0.0 {
            *x -= n;
            gamma = mat_mul(&[[1.0, -n], [0.0, 1.0]], &gamma);
        }
        let r2 = *x * *x + *y * *y;
        if r2 < 1.0 - 1e-15 {
            let inv = 1.0 / r2;
            *x = -*x * inv;
            *y *= inv;
            gamma = mat_mul(&[[0.0, -1.0], [1.0, 0.0]], &gamma);
        } else {
            return Ok(gamma);
        }
    }
    Err(CoreError::NumericInstability {
        t: f64::NAN,
        what: "fundamental-domain reduction exceeded its iteration cap".into(),
    })
}

fn reduce_loop_dd(x: &mut Dd, y: &mut Dd) -> Result<Mat> {
    if !(y.hi > 0.0) || !x.hi.is_finite() {
        return Err(CoreError::NumericInstability {
            t: f64::NAN,
            what: "base point left the upper half plane".into(),
        });
    }
    let mut gamma = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..REDUCE_CAP {
        let n = x.to_f64().round();
        if n != 0.0 {
            *x = x.add_f64(-n);
            gamma = mat_mul(&[[1.0, -n], [0.0, 1.0]], &gamma);
        }
        let r2 = x.mul(*x).add(y.mul(*y));
        if r2.to_f64() < 1.0 - 1e-15 {
            let inv = r2.recip();
            *x = x.neg().mul(inv);
            *y = y.mul(inv);
            gamma = mat_mul(&[[0.0, -1.0], [1.0, 0.0]], &gamma);
        } else {
            return Ok(gamma);
        }
    }
    Err(CoreError::NumericInstability {
        t: f64::NAN,
        what: "fundamental-domain reduction exceeded its iteration cap".into(),
    })
}

/// Iwasawa coordinates of a matrix in the Γ\G picture: base point x+iy and
/// frame angle θ folded into [0, π).
fn iwasawa(m: &Mat) -> (f64, f64, f64) {
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let den = c * c + d * d;
    let x = (a * c + b * d) / den;
    let y = det(m) / den;
    let s = y.sqrt();
    // k = a(y)^{-1} n(x)^{-1} m; the bottom row of n(x)^{-1} m is (c, d)
    let k10 = s * c;
    let k00 = (a - x * c) / s;
    let mut theta = k10.atan2(k00);
    if theta < 0.0 {
        theta += PI;
    }
    if theta >= PI {
        theta -= PI;
    }
    (x, y, theta)
}

/// Renormalizes x into [-1/2, 1/2) by unit translations (exact on the coset).
fn recentre(m: &Mat) -> Mat {
    let (x, _, _) = iwasawa(m);
    let n = x.round();
    if n != 0.0 {
        mat_mul(&[[1.0, -n], [0.0, 1.0]], m)
    } else {
        *m
    }
}

fn lex_less(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    let tol = 1e-12;
    if (a.0 - b.0).abs() > tol {
        return a.0 < b.0;
    }
    if (a.1 - b.1).abs() > tol {
        return a.1 < b.1;
    }
    a.2 < b.2
}

/// Canonical representative of the coset in the Γ\G picture, given any
/// matrix `rep` whose base point already lies in (or on the boundary of)
/// the fundamental domain. Resolves boundary ties (|z| = 1, Re z = ±1/2,
/// the elliptic points) by trying the identifying elements and keeping the
/// lexicographically least (x, y, θ).
fn canonical_from(rep: &Mat) -> (f64, f64, f64) {
    let mut best = iwasawa(&recentre(rep));
    let mut frontier = vec![*rep];
    let s_m: Mat = [[0.0, -1.0], [1.0, 0.0]];
    for _ in 0..2 {
        let mut next = Vec::new();
        for m in &frontier {
            let m = recentre(m);
            let (x, y, _) = iwasawa(&m);
            let r2 = x * x + y * y;
            let mut push = |cand: Mat| {
                let cand = recentre(&cand);
                let t = iwasawa(&cand);
                if t.0.abs() <= 0.5 + BOUNDARY_EPS && t.0 * t.0 + t.1 * t.1 >= 1.0 - BOUNDARY_EPS {
                    if lex_less(t, best) {
                        best = t;
                    }
                    next.push(cand);
                }
            };
            if (r2 - 1.0).abs() < BOUNDARY_EPS {
                push(mat_mul(&s_m, &m));
            }
            if (x.abs() - 0.5).abs() < BOUNDARY_EPS {
                let shift = if x > 0.0 { -1.0 } else { 1.0 };
                push(mat_mul(&[[1.0, shift], [0.0, 1.0]], &m));
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    best
}

fn point_from_triple(x: f64, y: f64, theta: f64) -> Sl2Point {
    let rep_h = mat_mul(&mat_mul(&n_mat(x), &ay_mat(y)), &k_mat(theta));
    Sl2Point {
        m: transpose(&rep_h),
        x,
        y,
        theta,
    }
}

/// Reduces g to the canonical fundamental-domain representative of g·SL₂(ℤ).
pub fn reduce(g: &Mat) -> Result<Sl2Point> {
    let d = det(g);
    if !d.is_finite() || d <= 0.0 {
        return Err(CoreError::Contract(format!(
            "SL2 point must have positive finite determinant, got {d}"
        )));
    }
    // renormalize determinant drift
    let scale = 1.0 / d.sqrt();
    let g = [
        [g[0][0] * scale, g[0][1] * scale],
        [g[1][0] * scale, g[1][1] * scale],
    ];
    let h = transpose(&g);
    let gamma = reduce_upper_f64(&h)?;
    let rep = mat_mul(&gamma, &h);
    let (x, y, theta) = canonical_from(&rep);
    Ok(point_from_triple(x, y, theta))
}

fn reduce_dd(g: &MatDd) -> Result<Sl2Point> {
    let h = [
        [g[0][0], g[1][0]],
        [g[0][1], g[1][1]],
    ];
    let gamma = reduce_upper_dd(&h)?;
    let rep = mat_mul_dd(&to_dd(&gamma), &h);
    let rep_f = from_dd(&rep);
    let d = det(&rep_f);
    if !d.is_finite() || d <= 0.0 {
        return Err(CoreError::NumericInstability {
            t: f64::NAN,
            what: "determinant collapsed during reduction".into(),
        });
    }
    let scale = 1.0 / d.sqrt();
    let rep_f = [
        [rep_f[0][0] * scale, rep_f[0][1] * scale],
        [rep_f[1][0] * scale, rep_f[1][1] * scale],
    ];
    let (x, y, theta) = canonical_from(&rep_f);
    Ok(point_from_triple(x, y, theta))
}

/// Flow action: reduce(a(ct)·g) or reduce(u(ct)·g).
pub fn evolve(spec: &Sl2FlowSpec, p: &Sl2Point, t: f64) -> Result<Sl2Point> {
    if !t.is_finite() {
        return Err(CoreError::Input(format!("non-finite flow time {t}")));
    }
    let tau = spec.speed * t;
    match spec.kind {
        Sl2Kind::Geodesic => {
            if tau.abs() <= DD_LEG {
                let m = mat_mul_dd(&a_mat_dd(tau), &to_dd(&p.m));
                reduce_dd(&m).map_err(|e| retag(e, t))
            } else {
                // renormalized unit steps to keep e^{ct} in range
                let mut cur = p.clone();
                let step = tau.signum() * DD_LEG;
                let full = (tau / step).floor() as usize;
                for _ in 0..full {
                    let m = mat_mul_dd(&a_mat_dd(step), &to_dd(&cur.m));
                    cur = reduce_dd(&m).map_err(|e| retag(e, t))?;
                }
                let rem = tau - step * full as f64;
                let m = mat_mul_dd(&a_mat_dd(rem), &to_dd(&cur.m));
                reduce_dd(&m).map_err(|e| retag(e, t))
            }
        }
        Sl2Kind::Horocycle => {
            if tau.abs() <= HORO_LEG {
                let m = mat_mul_dd(&u_mat_dd(tau), &to_dd(&p.m));
                reduce_dd(&m).map_err(|e| retag(e, t))
            } else {
                let mut cur = p.clone();
                let step = tau.signum() * HORO_LEG;
                let full = (tau / step).floor() as usize;
                for _ in 0..full {
                    let m = mat_mul_dd(&u_mat_dd(step), &to_dd(&cur.m));
                    cur = reduce_dd(&m).map_err(|e| retag(e, t))?;
                }
                let rem = tau - step * full as f64;
                let m = mat_mul_dd(&u_mat_dd(rem), &to_dd(&cur.m));
                reduce_dd(&m).map_err(|e| retag(e, t))
            }
        }
    }
}

fn retag(e: CoreError, t: f64) -> CoreError {
    match e {
        CoreError::NumericInstability { what, .. } => CoreError::NumericInstability { t, what },
        other => other,
    }
}

/// Fast f64 stepper for quadrature sweeps: advances the current point by
/// small flow-time increments without the double-double machinery.
#[derive(Clone, Debug)]
pub struct OrbitWalker {
    spec: Sl2FlowSpec,
    pub cur: Sl2Point,
}

impl OrbitWalker {
    pub fn new(spec: Sl2FlowSpec, start: Sl2Point) -> OrbitWalker {
        OrbitWalker { spec, cur: start }
    }

    pub fn advance(&mut self, dt: f64) -> Result<()> {
        let mut tau = self.spec.speed * dt;
        let cap = match self.spec.kind {
            Sl2Kind::Geodesic => 1.0,
            Sl2Kind::Horocycle => 1e3,
        };
        while tau.abs() > cap {
            let step = tau.signum() * cap;
            self.step_f64(step)?;
            tau -= step;
        }
        self.step_f64(tau)
    }

    fn step_f64(&mut self, tau: f64) -> Result<()> {
        let m = match self.spec.kind {
            Sl2Kind::Geodesic => mat_mul(&a_mat(tau), &self.cur.m),
            Sl2Kind::Horocycle => mat_mul(&u_mat(tau), &self.cur.m),
        };
        let h = transpose(&m);
        let gamma = reduce_upper_f64(&h)?;
        let rep = mat_mul(&gamma, &h);
        let d = det(&rep);
        let scale = 1.0 / d.sqrt();
        let (x, y, theta) = iwasawa(&[
            [rep[0][0] * scale, rep[0][1] * scale],
            [rep[1][0] * scale, rep[1][1] * scale],
        ]);
        // no boundary canonicalization here: the walker only feeds
        // observable evaluations, which are Γ-invariant either way
        self.cur = point_from_triple(x, y, theta);
        Ok(())
    }
}

/// Membership predicate for the canonical representatives.
pub fn is_reduced(p: &Sl2Point) -> bool {
    p.x.abs() <= 0.5 + BOUNDARY_EPS
        && p.x * p.x + p.y * p.y >= 1.0 - BOUNDARY_EPS
        && p.y > 0.0
        && (0.0..PI + BOUNDARY_EPS).contains(&p.theta)
        && (p.det() - 1.0).abs() <= 1e-12
}

/// Identity coset.
pub fn identity_point() -> Sl2Point {
    reduce(&[[1.0, 0.0], [0.0, 1.0]]).expect("identity reduces")
}

// --- Haar sampling ---------------------------------------------------------

/// Cusp truncation height for Haar sampling; the discarded hyperbolic mass
/// is (1/y_max) / (π/3) ≈ 9.5e-4 of the total.
pub const HAAR_Y_MAX: f64 = 1e3;

/// Relative Haar mass discarded by the cusp truncation.
pub fn haar_truncation_bias(y_max: f64) -> f64 {
    (1.0 / y_max) / (PI / 3.0)
}

const Y_MIN: f64 = 0.866_025_403_784_438_6; // √3/2

/// One Haar-distributed point, deterministic in (seed, index).
///
/// The base point is drawn from the hyperbolic area measure dx dy / y² on
/// the fundamental domain truncated at y ≤ y_max (y from the exact inverse
/// CDF of the 1/y² marginal, x uniform, rejection on |z| ≥ 1), and the
/// frame angle is an independent uniform on [0, π).
pub fn haar_point(seed: u64, index: u64, y_max: f64) -> Sl2Point {
    let mut rng = CounterRng::stream(seed, index);
    loop {
        let x = rng.uniform_in(-0.5, 0.5);
        let u = rng.uniform();
        let y = 1.0 / (1.0 / Y_MIN - u * (1.0 / Y_MIN - 1.0 / y_max));
        if x * x + y * y >= 1.0 {
            let theta = rng.uniform_in(0.0, PI);
            return point_from_triple(x, y, theta);
        }
    }
}

pub fn haar_sample(seed: u64, n: usize, y_max: f64) -> Vec<Sl2Point> {
    crate::exec::map_indexed(n, |i| haar_point(seed, i as u64, y_max))
}

/// Reference integral of a bump against the truncated, normalized Haar
/// measure, by midpoint grid quadrature over the support box in
/// fundamental-domain coordinates. This is the oracle side of the
/// modular-surface ergodic averages; resolution ~96 gives ≈1e-5 relative
/// accuracy for widths ≥ 0.2.
pub fn bump_reference_integral(bump: &Bump, resolution: usize, y_max: f64) -> f64 {
    let (x0, y0, t0) = bump.center;
    let w = bump.width;
    let vol = PI / 3.0 - 1.0 / y_max;
    let n = resolution;
    let hx = 2.0 * w / n as f64;
    let hy = 2.0 * w / n as f64;
    let ht = 2.0 * w / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let x = x0 - w + (i as f64 + 0.5) * hx;
        if x.abs() > 0.5 {
            continue;
        }
        for j in 0..n {
            let y = y0 - w + (j as f64 + 0.5) * hy;
            if y <= 0.0 || x * x + y * y < 1.0 || y > y_max {
                continue;
            }
            let mut theta_acc = 0.0;
            for l in 0..n {
                let th = t0 - w + (l as f64 + 0.5) * ht;
                theta_acc += bump.eval(x, y, th);
            }
            acc += theta_acc * ht / y.powi(2);
        }
    }
    acc * hx * hy / (vol * PI)
}
