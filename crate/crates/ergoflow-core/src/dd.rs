//! Minimal double-double arithmetic.
//!
//! Used where plain f64 loses the contest: the floor guard of
//! [`crate::poly::floor_poly_orbit`] near integer boundaries, and the
//! matrix legs of the geodesic flow, whose e^{2t} sensitivity eats ~17
//! digits by |t| ≈ 20.

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    // requires |a| >= |b|
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    /// ln 2 to double-double precision.
    pub const LN2: Dd = Dd {
        hi: 0.6931471805599453,
        lo: 2.3190468138462996e-17,
    };

    #[inline]
    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn add_f64(self, other: f64) -> Dd {
        let (s, e) = two_sum(self.hi, other);
        let e = e + self.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    #[inline]
    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, other: f64) -> Dd {
        let (p, e) = two_prod(self.hi, other);
        let e = e + self.lo * other;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q1));
        let q2 = r.hi / other.hi;
        let r = r.sub(other.mul_f64(q2));
        let q3 = r.hi / other.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add_f64(q3)
    }

    #[inline]
    pub fn recip(self) -> Dd {
        Dd::ONE.div(self)
    }

    pub fn sqrt(self) -> Dd {
        if self.hi == 0.0 {
            return Dd::ZERO;
        }
        let y0 = self.hi.sqrt();
        // one Newton step in dd: y = y0 + (a - y0^2) / (2 y0)
        let y = Dd::from(y0);
        let corr = self.sub(y.mul(y)).div(y.mul_f64(2.0));
        y.add(corr)
    }

    /// exp(self) via argument reduction by ln 2 and a dd Taylor series.
    pub fn exp(self) -> Dd {
        if self.hi.abs() > 650.0 {
            // caller is responsible for renormalizing long flow legs
            return Dd::from(self.hi.exp());
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self.sub(Dd::LN2.mul_f64(k));
        // Taylor for e^r, |r| <= 0.35
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        let mut n = 1.0f64;
        loop {
            term = term.mul(r).div(Dd::from(n));
            sum = sum.add(term);
            if term.hi.abs() < 1e-36 * sum.hi.abs() || n > 40.0 {
                break;
            }
            n += 1.0;
        }
        let scale = (k as i32).min(1023).max(-1022);
        Dd {
            hi: libm_ldexp(sum.hi, scale),
            lo: libm_ldexp(sum.lo, scale),
        }
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            self.neg()
        } else {
            self
        }
    }

    #[inline]
    pub fn floor(self) -> f64 {
        let f = self.hi.floor();
        if self.hi == f {
            // hi is integral: lo decides the side
            if self.lo < 0.0 {
                f - 1.0
            } else {
                f
            }
        } else {
            f
        }
    }

    #[inline]
    pub fn lt(self, other: Dd) -> bool {
        self.hi < other.hi || (self.hi == other.hi && self.lo < other.lo)
    }
}

#[inline]
fn libm_ldexp(x: f64, e: i32) -> f64 {
    x * f64::powi(2.0, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_mul_roundtrip() {
        let a = Dd::from(1.0).div(Dd::from(3.0));
        let b = a.mul_f64(3.0);
        assert!((b.to_f64() - 1.0).abs() < 1e-30);
        assert!((b.hi - 1.0).abs() < 1e-16);
    }

    #[test]
    fn exp_matches_f64_at_low_precision() {
        for &x in &[0.0, 1.0, -1.0, 10.0, 20.0, 40.0, -35.5, 0.001] {
            let e = Dd::from(x).exp();
            let rel = (e.to_f64() - x.exp()).abs() / x.exp();
            assert!(rel < 1e-14, "x={x} rel={rel}");
        }
    }

    #[test]
    fn exp_additivity_beyond_f64() {
        // e^a * e^b == e^(a+b) far beyond f64's ~16 digits
        let a = Dd::from(13.7);
        let b = Dd::from(9.1);
        let lhs = a.exp().mul(b.exp());
        let rhs = a.add(b).exp();
        let rel = lhs.sub(rhs).abs().to_f64() / rhs.to_f64();
        assert!(rel < 1e-28, "rel={rel}");
    }

    #[test]
    fn sqrt_newton() {
        let s = Dd::from(2.0).sqrt();
        let back = s.mul(s).sub(Dd::from(2.0)).abs().to_f64();
        assert!(back < 1e-30);
    }

    #[test]
    fn floor_honors_lo_component() {
        let just_below = Dd::new(5.0, -1e-20);
        assert_eq!(just_below.floor(), 4.0);
        let just_above = Dd::new(5.0, 1e-20);
        assert_eq!(just_above.floor(), 5.0);
        assert_eq!(Dd::from(4.5).floor(), 4.0);
        assert_eq!(Dd::from(-0.5).floor(), -1.0);
    }
}
