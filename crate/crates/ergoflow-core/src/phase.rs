//! Phase points for the concrete flow families and the per-variant metric
//! used by the group-law and identity checks.

use serde::{Deserialize, Serialize};

/// Base coordinate of a suspension: a finite state id or a circle point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BasePoint {
    State(usize),
    Circle(f64),
}

/// A point on the modular surface SL₂(ℝ)/SL₂(ℤ), stored as the canonical
/// fundamental-domain representative together with its Iwasawa coordinates
/// (base point x+iy in the standard fundamental domain, frame angle θ ∈ [0,π)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sl2Point {
    pub m: [[f64; 2]; 2],
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Sl2Point {
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhasePoint {
    /// Coordinates in [0,1)^d.
    Torus(Vec<f64>),
    /// Suspension point: base state plus fiber coordinates in [0,1)^d.
    Suspension { base: BasePoint, fiber: Vec<f64> },
    Sl2(Sl2Point),
    /// Point of a product phase space, one entry per component.
    Product(Vec<PhasePoint>),
}

#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let f = x - x.floor();
    // x slightly below an integer can round to 1.0
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Minimal wrap distance on the unit circle.
#[inline]
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

fn frobenius(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let d = a[i][j] - b[i][j];
            s += d * d;
        }
    }
    s.sqrt()
}

/// Phase-space metric: torus = max wrap distance per coordinate,
/// suspensions compare base exactly plus fiber wrap distance,
/// SL₂ = Frobenius distance of the reduced representatives,
/// products take the max over components.
pub fn distance(a: &PhasePoint, b: &PhasePoint) -> f64 {
    match (a, b) {
        (PhasePoint::Torus(u), PhasePoint::Torus(v)) => {
            if u.len() != v.len() {
                return f64::INFINITY;
            }
            u.iter()
                .zip(v)
                .map(|(&x, &y)| circle_dist(x, y))
                .fold(0.0, f64::max)
        }
        (
            PhasePoint::Suspension { base: ba, fiber: fa },
            PhasePoint::Suspension { base: bb, fiber: fb },
        ) => {
            let base_d = match (ba, bb) {
                (BasePoint::State(x), BasePoint::State(y)) => {
                    if x == y {
                        0.0
                    } else {
                        1.0
                    }
                }
                (BasePoint::Circle(x), BasePoint::Circle(y)) => circle_dist(*x, *y),
                _ => f64::INFINITY,
            };
            let fiber_d = fa
                .iter()
                .zip(fb)
                .map(|(&x, &y)| circle_dist(x, y))
                .fold(0.0, f64::max);
            base_d.max(fiber_d)
        }
        (PhasePoint::Sl2(p), PhasePoint::Sl2(q)) => frobenius(&p.m, &q.m),
        (PhasePoint::Product(u), PhasePoint::Product(v)) => {
            if u.len() != v.len() {
                return f64::INFINITY;
            }
            u.iter()
                .zip(v)
                .map(|(x, y)| distance(x, y))
                .fold(0.0, f64::max)
        }
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_distance_honors_the_seam() {
        assert!((circle_dist(0.95, 0.05) - 0.1).abs() < 1e-15);
        assert_eq!(circle_dist(0.25, 0.25), 0.0);
    }

    #[test]
    fn wrap_unit_stays_in_range() {
        for &x in &[-1.5, -1e-18, 0.0, 0.999999, 5.25, 1.0 - 1e-17] {
            let w = wrap_unit(x);
            assert!((0.0..1.0).contains(&w), "x={x} w={w}");
        }
    }

    #[test]
    fn mismatched_variants_are_infinitely_far() {
        let a = PhasePoint::Torus(vec![0.1]);
        let b = PhasePoint::Suspension {
            base: BasePoint::State(0),
            fiber: vec![0.1],
        };
        assert_eq!(distance(&a, &b), f64::INFINITY);
    }
}
