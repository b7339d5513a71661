//! Numerical laboratory for continuous-time polynomial ergodic averages.
//!
//! The crate builds concrete measure-preserving flows (torus translations,
//! suspensions over discrete maps, geodesic/horocycle flows on the modular
//! surface, products of these), evaluates multiple ergodic averages of the
//! form `(1/M) ∫₀^M f₁(T^{t^α}x) f₂(T^{at^α}x) g(S^{Q(t^β)}x) dt` and their
//! box/multi-flow variants, and checks the computed curves against predicted
//! limits and exact finite-system oracles.
//!
//! Layout:
//! - [`poly`] — exact real-coefficient polynomial algebra, including the
//!   shift-scale decomposition `Q(nδ+t) = P(n)δˢ + Q(t) + Σ Pᵢ(n)δ^{s-i}tⁱ`.
//! - [`phase`], [`observable`], [`flow`] — phase points, observable trees,
//!   and the flow contract (`evolve`, invariant-measure sampling).
//! - [`flows`] — the concrete flow families.
//! - [`quad`], [`average`] — composite Gauss/midpoint panels, an
//!   oscillatory-phase integrator, and the theorem-form average plans.
//! - [`discrete`] — discrete-time averages and exact finite-system oracles.
//! - [`diagnostics`] — convergence reports, predicted limits, maximal-function
//!   ensemble statistics.
//! - [`exec`] — deterministic (bit-stable) parallel evaluation helpers; the
//!   `parallel` feature switches between rayon and a sequential fallback.

pub mod average;
pub mod dd;
pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod exec;
pub mod flow;
pub mod flows;
pub mod observable;
pub mod phase;
pub mod poly;
pub mod quad;
pub mod rng;

pub use error::CoreError;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
