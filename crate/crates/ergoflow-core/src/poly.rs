//! Real-coefficient univariate polynomials with the shift-scale
//! decomposition `Q(nδ+t) = P(n)δˢ + Q(t) + Σᵢ Pᵢ(n) δ^{s-i} tⁱ`
//! that drives every block reduction, plus exact floor orbits
//! `n ↦ ⌊P(n)⌋` with a double-double guard at integer boundaries.

use crate::dd::Dd;
use crate::error::{CoreError, Result};
use std::fmt;

/// Largest magnitude exactly representable as consecutive integers in f64.
const EXACT_INT_RANGE: f64 = 9_007_199_254_740_992.0; // 2^53

/// Kahan-compensated accumulator for coefficient expansion loops.
#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Dense univariate polynomial; `coeffs[i]` multiplies `t^i`.
/// Trailing coefficient is nonzero unless the polynomial is zero.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Polynomial {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Polynomial {
        Polynomial { coeffs: vec![] }
    }

    pub fn constant(c: f64) -> Polynomial {
        Polynomial::new(vec![c])
    }

    /// c · t^k
    pub fn monomial(c: f64, k: usize) -> Polynomial {
        let mut v = vec![0.0; k + 1];
        v[k] = c;
        Polynomial::new(v)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn leading_coeff(&self) -> f64 {
        *self.coeffs.last().unwrap_or(&0.0)
    }

    pub fn constant_term(&self) -> f64 {
        *self.coeffs.first().unwrap_or(&0.0)
    }

    /// Horner evaluation.
    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    /// Horner evaluation in double-double.
    pub fn eval_dd(&self, t: f64) -> Dd {
        let mut acc = Dd::ZERO;
        for &c in self.coeffs.iter().rev() {
            acc = acc.mul_f64(t).add_f64(c);
        }
        acc
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial::zero();
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| i as f64 * c)
                .collect(),
        )
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut v = vec![0.0; n];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = self.coeffs.get(i).copied().unwrap_or(0.0)
                + other.coeffs.get(i).copied().unwrap_or(0.0);
        }
        Polynomial::new(v)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|&x| c * x).collect())
    }

    /// Q(a·t + b), exact in coefficient arithmetic (Kahan-compensated).
    ///
    /// Coefficient of t^j is Σ_{m≥j} q_m · C(m,j) · a^j · b^{m-j}.
    pub fn compose_linear(&self, a: f64, b: f64) -> Polynomial {
        if self.is_zero() {
            return Polynomial::zero();
        }
        let deg = self.degree();
        let binom = binomial_table(deg);
        let mut out = vec![0.0; deg + 1];
        let mut a_pow = 1.0;
        for (j, slot) in out.iter_mut().enumerate() {
            let mut acc = Kahan::default();
            let mut b_pow = 1.0;
            for m in j..=deg {
                acc.add(self.coeffs[m] * binom[m][j] * a_pow * b_pow);
                b_pow *= b;
            }
            *slot = acc.sum;
            a_pow *= a;
        }
        Polynomial::new(out)
    }

    /// Upper bound for max_{[0,M]} |Q'| from coefficient magnitudes.
    pub fn deriv_abs_bound(&self, m_max: f64) -> f64 {
        let m = m_max.abs().max(1e-300);
        let mut bound = 0.0;
        let mut pow = 1.0;
        for (i, &c) in self.coeffs.iter().enumerate().skip(1) {
            bound += (i as f64 * c).abs() * pow;
            pow *= m;
        }
        bound
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0.0 {
                continue;
            }
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
                first = false;
            } else {
                write!(f, " {sign} ")?;
            }
            let a = c.abs();
            match i {
                0 => write!(f, "{a}")?,
                1 if a == 1.0 => write!(f, "t")?,
                1 => write!(f, "{a}*t")?,
                _ if a == 1.0 => write!(f, "t^{i}")?,
                _ => write!(f, "{a}*t^{i}")?,
            }
        }
        Ok(())
    }
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut b = vec![vec![0.0; n + 1]; n + 1];
    for (i, row) in b.iter_mut().enumerate() {
        row[0] = 1.0;
        for j in 1..=i {
            row[j] = if j == i { 1.0 } else { 0.0 };
        }
    }
    for i in 1..=n {
        for j in 1..i {
            b[i][j] = b[i - 1][j - 1] + b[i - 1][j];
        }
    }
    b
}

/// The block decomposition of `Q(nδ + t)` for `Q` with `deg Q = s ≥ 2`
/// and `Q(0) = 0`:
///
/// `Q(nδ+t) = P(n)·δˢ + Q(t) + Σ_{i=1}^{s-1} Pᵢ(n)·δ^{s-i}·tⁱ`
///
/// with `P(0) = 0`, `deg Pᵢ = s - i`, and `lead(P₁) = s·lead(Q)`.
#[derive(Clone, Debug)]
pub struct ShiftScaleDecomposition {
    /// Polynomial in n multiplying δ^s.
    pub p: Polynomial,
    /// `p_i[i-1]` is Pᵢ, multiplying δ^{s-i} tⁱ, for i = 1..s-1.
    pub p_i: Vec<Polynomial>,
    pub delta: f64,
    /// s = deg Q.
    pub s: usize,
}

impl ShiftScaleDecomposition {
    /// Evaluates the right-hand side `P(n)δˢ + Q(t) + Σ Pᵢ(n) δ^{s-i} tⁱ`.
    pub fn eval_rhs(&self, q: &Polynomial, n: f64, t: f64) -> f64 {
        let mut acc = self.p.eval(n) * self.delta.powi(self.s as i32) + q.eval(t);
        let mut t_pow = t;
        for (idx, pi) in self.p_i.iter().enumerate() {
            let i = idx + 1;
            acc += pi.eval(n) * self.delta.powi((self.s - i) as i32) * t_pow;
            t_pow *= t;
        }
        acc
    }
}

/// Decomposes `Q(nδ+t)` per the block identity above.
///
/// Requires `deg Q ≥ 2` (the linear case is the excluded failure mode) and
/// `Q(0) = 0`; callers subtract the constant term first and account for it
/// themselves.
pub fn shift_scale_decompose(q: &Polynomial, delta: f64) -> Result<ShiftScaleDecomposition> {
    let s = q.degree();
    if s < 2 {
        return Err(CoreError::Domain(format!(
            "shift-scale decomposition needs deg Q >= 2, got {s}"
        )));
    }
    if q.constant_term() != 0.0 {
        return Err(CoreError::Domain(
            "shift-scale decomposition needs Q(0) = 0".into(),
        ));
    }
    if !(delta.is_finite() && delta != 0.0) {
        return Err(CoreError::Input(format!("delta must be finite nonzero, got {delta}")));
    }
    let qc = q.coeffs();
    let binom = binomial_table(s);
    // P(n) = Σ_{m=1}^{s} q_m δ^{m-s} n^m
    let mut p = vec![0.0; s + 1];
    for (m, slot) in p.iter_mut().enumerate().skip(1) {
        *slot = qc[m] * delta.powi(m as i32 - s as i32);
    }
    // P_i(n) = Σ_{m=i+1}^{s} q_m C(m,i) δ^{m-s} n^{m-i}
    let mut p_i = Vec::with_capacity(s - 1);
    for i in 1..s {
        let mut coeffs = vec![0.0; s - i + 1];
        for m in (i + 1)..=s {
            coeffs[m - i] = qc[m] * binom[m][i] * delta.powi(m as i32 - s as i32);
        }
        p_i.push(Polynomial::new(coeffs));
    }
    Ok(ShiftScaleDecomposition {
        p: Polynomial::new(p),
        p_i,
        delta,
        s,
    })
}

/// `⌊P(n)⌋` with a double-double guard: when the f64 value sits within
/// 1e-9 of an integer the evaluation is redone in extended precision
/// before flooring, since a misrounded floor changes the whole orbit.
pub fn floor_poly_orbit(p: &Polynomial, n: i64) -> Result<i64> {
    let v = p.eval(n as f64);
    if !v.is_finite() || v.abs() >= EXACT_INT_RANGE {
        return Err(CoreError::Overflow { value: v });
    }
    let nearest = v.round();
    let f = if (v - nearest).abs() < 1e-9 {
        p.eval_dd(n as f64).floor()
    } else {
        v.floor()
    };
    Ok(f as i64)
}

/// Parses either "t^3 - 2*t" style strings; the variable letter is free
/// (t, n, ...), `*` between coefficient and variable is optional.
pub fn parse_polynomial(input: &str) -> Result<Polynomial> {
    let s: String = input.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(CoreError::Input("empty polynomial string".into()));
    }
    let mut terms: Vec<(usize, f64)> = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let mut sign = 1.0;
        while i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            if bytes[i] == b'-' {
                sign = -sign;
            }
            i += 1;
        }
        let start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.' || bytes[i] == b'e'
            || bytes[i] == b'E'
            || (i > start && (bytes[i] == b'+' || bytes[i] == b'-')
                && (bytes[i - 1] == b'e' || bytes[i - 1] == b'E')))
        {
            i += 1;
        }
        let num = &s[start..i];
        let mut coeff = if num.is_empty() {
            1.0
        } else {
            num.parse::<f64>()
                .map_err(|_| CoreError::Input(format!("bad coefficient '{num}' in '{input}'")))?
        };
        coeff *= sign;
        if i < bytes.len() && bytes[i] == b'*' {
            i += 1;
        }
        let mut power = 0usize;
        if i < bytes.len() && bytes[i].is_ascii_alphabetic() {
            i += 1;
            power = 1;
            if i < bytes.len() && bytes[i] == b'^' {
                i += 1;
                let pstart = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                power = s[pstart..i]
                    .parse::<usize>()
                    .map_err(|_| CoreError::Input(format!("bad exponent in '{input}'")))?;
            }
        } else if num.is_empty() {
            return Err(CoreError::Input(format!("dangling term in '{input}'")));
        }
        terms.push((power, coeff));
    }
    let deg = terms.iter().map(|&(p, _)| p).max().unwrap_or(0);
    let mut coeffs = vec![0.0; deg + 1];
    for (p, c) in terms {
        coeffs[p] += c;
    }
    Ok(Polynomial::new(coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn eval_zero_poly_is_zero() {
        assert_eq!(Polynomial::zero().eval(3.7), 0.0);
    }

    #[test]
    fn decompose_t_squared_delta_point_one() {
        // Q = t², δ = 0.1 → P(n) = n², P₁(n) = 2n
        let q = Polynomial::monomial(1.0, 2);
        let d = shift_scale_decompose(&q, 0.1).unwrap();
        assert_eq!(d.p.coeffs(), &[0.0, 0.0, 1.0]);
        assert_eq!(d.p_i.len(), 1);
        assert_eq!(d.p_i[0].coeffs(), &[0.0, 2.0]);
    }

    #[test]
    fn decompose_t_squared_delta_one_is_binomial() {
        // Q(n+t) = n² + t² + 2nt
        let q = Polynomial::monomial(1.0, 2);
        let d = shift_scale_decompose(&q, 1.0).unwrap();
        for &(n, t) in &[(3.0, 0.25), (-2.0, 0.9), (7.0, 0.0)] {
            let lhs = q.eval(n + t);
            let rhs = d.eval_rhs(&q, n, t);
            assert!((lhs - rhs).abs() <= 4e-16 * (1.0 + lhs.abs()), "n={n} t={t}");
        }
    }

    #[test]
    fn decompose_cubic_identity_randomized() {
        let q = Polynomial::new(vec![0.0, 0.0, 1.0, 1.0]); // t³ + t²
        let d = shift_scale_decompose(&q, 0.5).unwrap();
        let mut rng = CounterRng::stream(11, 0);
        for _ in 0..200 {
            let n = (rng.below(201) as f64) - 100.0;
            let t = rng.uniform_in(-5.0, 5.0);
            let lhs = q.eval(n * 0.5 + t);
            let rhs = d.eval_rhs(&q, n, t);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "n={n} t={t}");
        }
    }

    #[test]
    fn leading_coefficient_of_p1_is_s_times_lead_q() {
        for s in 2..=5 {
            let mut coeffs = vec![0.0; s + 1];
            coeffs[s] = 2.5;
            if s >= 3 {
                coeffs[s - 1] = -1.25;
            }
            let q = Polynomial::new(coeffs);
            let d = shift_scale_decompose(&q, 0.37).unwrap();
            assert_eq!(d.p_i[0].leading_coeff(), s as f64 * 2.5);
            for (idx, pi) in d.p_i.iter().enumerate() {
                assert_eq!(pi.degree(), s - (idx + 1));
            }
        }
    }

    #[test]
    fn degree_one_is_rejected() {
        let q = Polynomial::monomial(1.0, 1);
        assert!(matches!(
            shift_scale_decompose(&q, 0.5),
            Err(CoreError::Domain(_))
        ));
    }

    #[test]
    fn compose_linear_scaling_law() {
        let q = Polynomial::monomial(1.0, 2);
        assert_eq!(q.compose_linear(2.0, 0.0).coeffs(), &[0.0, 0.0, 4.0]);
    }

    #[test]
    fn compose_linear_matches_expansion() {
        // (t+1)³ − (t+1) = t³ + 3t² + 2t
        let q = Polynomial::new(vec![0.0, -1.0, 0.0, 1.0]);
        let r = q.compose_linear(1.0, 1.0);
        assert_eq!(r.coeffs(), &[0.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn compose_linear_associativity_in_coefficients() {
        let q = Polynomial::new(vec![0.5, -1.0, 0.25, 2.0, -0.75]);
        let (a, b, c, d) = (1.5, -0.5, 0.25, 2.0);
        let lhs = q.compose_linear(a, b).compose_linear(c, d);
        let rhs = q.compose_linear(a * c, a * d + b);
        for (x, y) in lhs.coeffs().iter().zip(rhs.coeffs()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn floor_orbit_examples() {
        assert_eq!(floor_poly_orbit(&Polynomial::monomial(1.0, 2), 7).unwrap(), 49);
        let sqrt2_t = Polynomial::monomial(2f64.sqrt(), 1);
        assert_eq!(floor_poly_orbit(&sqrt2_t, 5).unwrap(), 7);
        let half_t2 = Polynomial::monomial(0.5, 2);
        assert_eq!(floor_poly_orbit(&half_t2, 3).unwrap(), 4);
    }

    #[test]
    fn floor_orbit_guard_near_integers() {
        // 0.1·n at n = 30: f64 gives 3.0000000000000004; the guard must
        // still floor to 3, matching the exact value 3.
        let p = Polynomial::monomial(0.1, 1);
        assert_eq!(floor_poly_orbit(&p, 30).unwrap(), 3);
        // exact integers stay put
        let q = Polynomial::new(vec![0.0, 0.0, 1.0]);
        assert_eq!(floor_poly_orbit(&q, 1_000_000).unwrap(), 1_000_000_000_000);
    }

    #[test]
    fn floor_orbit_overflow() {
        let p = Polynomial::monomial(1e10, 2);
        assert!(matches!(
            floor_poly_orbit(&p, 1_000_000),
            Err(CoreError::Overflow { .. })
        ));
    }

    #[test]
    fn parse_round_trips() {
        let q = parse_polynomial("t^3 - 2*t").unwrap();
        assert_eq!(q.coeffs(), &[0.0, -2.0, 0.0, 1.0]);
        let q = parse_polynomial("-t^2 + 0.5").unwrap();
        assert_eq!(q.coeffs(), &[0.5, 0.0, -1.0]);
        let q = parse_polynomial("3n").unwrap();
        assert_eq!(q.coeffs(), &[0.0, 3.0]);
        let q = parse_polynomial("1e-3 * t^2").unwrap();
        assert_eq!(q.coeffs(), &[0.0, 0.0, 1e-3]);
        let shown = format!("{}", parse_polynomial("t^3-2*t").unwrap());
        assert_eq!(parse_polynomial(&shown).unwrap().coeffs(), &[0.0, -2.0, 0.0, 1.0]);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_polynomial("").is_err());
        assert!(parse_polynomial("t^").is_err());
        assert!(parse_polynomial("+").is_err());
    }
}
