//! Conserved variables of the Chaplygin form of the Gauss-Codazzi system.
//!
//! The scaled second fundamental form `(L, M, N) / k` is carried as the pair
//! `(rho, m) = (L/k, -M/k)`; `N/k = (m^2 - 1)/rho` follows from the Gauss
//! equation. In these variables the system reads
//!
//! ```text
//! rho_t + m_x                 = R(rho, m, t)
//! m_t   + ((m^2 - 1)/rho)_x   = S(rho, m, t)
//! ```
//!
//! with Riemann invariants `w = (m + 1)/rho`, `z = (m - 1)/rho`, which are
//! also the two characteristic speeds.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{MetricError, MetricProfile, MetricSample};

/// Absolute tolerance used by invariant checks on rational state formulas.
pub const STATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("density must be positive and finite, got rho = {rho}")]
    NonPositiveDensity { rho: f64 },
    #[error("non-finite state component (rho = {rho}, m = {m})")]
    NonFinite { rho: f64, m: f64 },
    #[error("Riemann invariants must satisfy w > z, got w = {w}, z = {z}")]
    Degenerate { w: f64, z: f64 },
}

/// Conserved pair `(rho, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub rho: f64,
    pub m: f64,
}

/// Riemann invariants `(w, z)`; `w - z = 2/rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    pub w: f64,
    pub z: f64,
}

/// Source rates `(R, S)` of the inhomogeneous system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceValue {
    pub r: f64,
    pub s: f64,
}

/// Value of the convex entropy pair `(eta, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyValue {
    pub eta: f64,
    pub q: f64,
}

impl State {
    pub const fn new(rho: f64, m: f64) -> Self {
        Self { rho, m }
    }

    /// Checks `rho > 0` and finiteness.
    pub fn validate(&self) -> Result<(), StateError> {
        if !self.rho.is_finite() || !self.m.is_finite() {
            return Err(StateError::NonFinite {
                rho: self.rho,
                m: self.m,
            });
        }
        if self.rho <= 0.0 {
            return Err(StateError::NonPositiveDensity { rho: self.rho });
        }
        Ok(())
    }

    pub fn invariants(&self) -> Result<Invariants, StateError> {
        self.validate()?;
        Ok(Invariants {
            w: (self.m + 1.0) / self.rho,
            z: (self.m - 1.0) / self.rho,
        })
    }

    /// Physical flux `(m, (m^2 - 1)/rho)`.
    pub fn flux(&self) -> Result<(f64, f64), StateError> {
        self.validate()?;
        Ok((self.m, (self.m * self.m - 1.0) / self.rho))
    }

    /// Characteristic speeds `(lambda_1, lambda_2) = (z, w)`.
    pub fn eigenvalues(&self) -> Result<(f64, f64), StateError> {
        let iv = self.invariants()?;
        Ok((iv.z, iv.w))
    }

    /// Convex entropy `eta = (m^2 + 1)/(2 rho)` and its flux.
    ///
    /// The flux is the one compatible with `grad(eta) . Df = grad(q)` for the
    /// flux above, `q = (m^3 - m)/(2 rho^2)`.
    pub fn entropy(&self) -> Result<EntropyValue, StateError> {
        self.validate()?;
        let (rho, m) = (self.rho, self.m);
        Ok(EntropyValue {
            eta: (m * m + 1.0) / (2.0 * rho),
            q: (m * m * m - m) / (2.0 * rho * rho),
        })
    }

    /// Euclidean norm in the `(rho, m)` plane.
    pub fn norm(&self) -> f64 {
        self.rho.hypot(self.m)
    }

    /// `|d rho| + |d m|`, the pointwise integrand of L1 errors.
    pub fn l1_distance(&self, other: &State) -> f64 {
        (self.rho - other.rho).abs() + (self.m - other.m).abs()
    }
}

impl Add for State {
    type Output = State;
    fn add(self, rhs: State) -> State {
        State::new(self.rho + rhs.rho, self.m + rhs.m)
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, rhs: State) -> State {
        State::new(self.rho - rhs.rho, self.m - rhs.m)
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, rhs: f64) -> State {
        State::new(self.rho * rhs, self.m * rhs)
    }
}

impl Invariants {
    pub const fn new(w: f64, z: f64) -> Self {
        Self { w, z }
    }

    /// Inverse map: `rho = 2/(w - z)`, `m = (w + z)/(w - z)`.
    pub fn to_state(&self) -> Result<State, StateError> {
        if !self.w.is_finite() || !self.z.is_finite() || self.w <= self.z {
            return Err(StateError::Degenerate {
                w: self.w,
                z: self.z,
            });
        }
        let gap = self.w - self.z;
        Ok(State::new(2.0 / gap, (self.w + self.z) / gap))
    }
}

impl SourceValue {
    pub const ZERO: SourceValue = SourceValue { r: 0.0, s: 0.0 };

    pub fn as_state(&self) -> State {
        State::new(self.r, self.s)
    }
}

pub fn invariants_from_state(u: State) -> Result<Invariants, StateError> {
    u.invariants()
}

pub fn state_from_invariants(iv: Invariants) -> Result<State, StateError> {
    iv.to_state()
}

/// Source rates for a metric depending on `t` only.
///
/// `R = -rho k'/k + ((m^2 - 1)/rho) B B'` and `S = -2 m (B'/B + k'/(2k))`.
pub fn source_at(u: State, g: &MetricSample) -> Result<SourceValue, StateError> {
    u.validate()?;
    let (rho, m) = (u.rho, u.m);
    let kt = g.dk / g.k;
    let bt = g.db / g.b;
    Ok(SourceValue {
        r: -rho * kt + (m * m - 1.0) / rho * g.b * g.db,
        s: -2.0 * m * (bt + 0.5 * kt),
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Source rates at time `t` of the given profile.
pub fn source(u: State, t: f64, metric: &MetricProfile) -> Result<SourceValue, SourceError> {
    let g = metric.eval(t)?;
    Ok(source_at(u, &g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sample(b: f64, db: f64, k: f64, dk: f64) -> MetricSample {
        MetricSample { b, db, k, dk }
    }

    #[test]
    fn invariants_of_simple_states() {
        let iv = State::new(1.0, 0.0).invariants().unwrap();
        assert_eq!((iv.w, iv.z), (1.0, -1.0));
        let iv = State::new(2.0, 1.0).invariants().unwrap();
        assert_eq!((iv.w, iv.z), (1.0, 0.0));
    }

    #[test]
    fn state_from_simple_invariants() {
        assert_eq!(
            Invariants::new(1.0, -1.0).to_state().unwrap(),
            State::new(1.0, 0.0)
        );
        let u = Invariants::new(0.5, -1.0).to_state().unwrap();
        assert_abs_diff_eq!(u.rho, 4.0 / 3.0, epsilon = STATE_TOL);
        assert_abs_diff_eq!(u.m, -1.0 / 3.0, epsilon = STATE_TOL);
        assert_eq!(
            Invariants::new(1.0, 0.0).to_state().unwrap(),
            State::new(2.0, 1.0)
        );
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            State::new(0.0, 0.3).invariants(),
            Err(StateError::NonPositiveDensity { .. })
        ));
        assert!(matches!(
            State::new(-1.0, 0.3).flux(),
            Err(StateError::NonPositiveDensity { .. })
        ));
        assert!(matches!(
            State::new(f64::NAN, 0.3).entropy(),
            Err(StateError::NonFinite { .. })
        ));
        assert!(matches!(
            Invariants::new(-1.0, -1.0).to_state(),
            Err(StateError::Degenerate { .. })
        ));
        assert!(Invariants::new(-2.0, -1.0).to_state().is_err());
    }

    #[test]
    fn flux_values() {
        assert_eq!(State::new(1.0, 0.0).flux().unwrap(), (0.0, -1.0));
        assert_eq!(State::new(2.0, 1.0).flux().unwrap(), (1.0, 0.0));
        let (f1, f2) = State::new(4.0 / 3.0, -1.0 / 3.0).flux().unwrap();
        assert_abs_diff_eq!(f1, -1.0 / 3.0, epsilon = STATE_TOL);
        assert_abs_diff_eq!(f2, -2.0 / 3.0, epsilon = STATE_TOL);
    }

    #[test]
    fn eigenvalue_values() {
        assert_eq!(State::new(1.0, 0.0).eigenvalues().unwrap(), (-1.0, 1.0));
        assert_eq!(State::new(2.0, 1.0).eigenvalues().unwrap(), (0.0, 1.0));
    }

    #[test]
    fn entropy_values() {
        let e = State::new(1.0, 0.0).entropy().unwrap();
        assert_eq!((e.eta, e.q), (0.5, 0.0));
        let e = State::new(2.0, 1.0).entropy().unwrap();
        assert_eq!((e.eta, e.q), (0.5, 0.0));
        let e = State::new(1.0, -1.0).entropy().unwrap();
        assert_eq!((e.eta, e.q), (1.0, 0.0));
    }

    #[test]
    fn entropy_flux_is_compatible_with_flux() {
        // grad(eta) . Df = grad(q), checked by central differences.
        let eps = 1e-6;
        for &(rho, m) in &[(1.0, 0.0), (0.7, 0.4), (2.5, -0.9), (1.3, 1.7)] {
            let u = State::new(rho, m);
            let d = |f: &dyn Fn(State) -> f64, du: State| {
                (f(u + du * eps) - f(u - du * eps)) / (2.0 * eps)
            };
            let eta = |v: State| v.entropy().unwrap().eta;
            let q = |v: State| v.entropy().unwrap().q;
            let f1 = |v: State| v.flux().unwrap().0;
            let f2 = |v: State| v.flux().unwrap().1;
            let er = State::new(1.0, 0.0);
            let em = State::new(0.0, 1.0);
            let (eta_r, eta_m) = (d(&eta, er), d(&eta, em));
            let lhs_r = eta_r * d(&f1, er) + eta_m * d(&f2, er);
            let lhs_m = eta_r * d(&f1, em) + eta_m * d(&f2, em);
            assert_abs_diff_eq!(lhs_r, d(&q, er), epsilon = 1e-7);
            assert_abs_diff_eq!(lhs_m, d(&q, em), epsilon = 1e-7);
        }
    }

    #[test]
    fn entropy_hessian_is_positive_definite() {
        for i in 1..=20 {
            for j in -20..=20 {
                let rho = 0.1 * i as f64;
                let m = 0.15 * j as f64;
                let h11 = (m * m + 1.0) / rho.powi(3);
                let h12 = -m / rho.powi(2);
                let h22 = 1.0 / rho;
                let det = h11 * h22 - h12 * h12;
                assert!(h11 + h22 > 0.0);
                assert_abs_diff_eq!(det, 1.0 / rho.powi(4), epsilon = 1e-9 * det.abs());
                assert!(det > 0.0);
            }
        }
    }

    #[test]
    fn source_with_exponential_curvature() {
        // k = e^t, B = 1: k'/k = 1, B' = 0.
        let g = sample(1.0, 0.0, 1.0, 1.0);
        let s = source_at(State::new(1.0, 0.0), &g).unwrap();
        assert_abs_diff_eq!(s.r, -1.0, epsilon = STATE_TOL);
        assert_abs_diff_eq!(s.s, 0.0, epsilon = STATE_TOL);
    }

    #[test]
    fn source_with_decreasing_b() {
        // B = 1, B' = -1, k'/k = 2: S vanishes, R = -2 + (-1)(1)(-1) = -1.
        let g = sample(1.0, -1.0, 1.0, 2.0);
        let s = source_at(State::new(1.0, 0.0), &g).unwrap();
        assert_abs_diff_eq!(s.s, 0.0, epsilon = STATE_TOL);
        assert_abs_diff_eq!(s.r, -1.0, epsilon = STATE_TOL);
    }

    #[test]
    fn source_vanishes_for_flat_profile() {
        let g = sample(1.7, 0.0, 0.3, 0.0);
        for &(rho, m) in &[(1.0, 0.0), (0.2, 3.0), (5.0, -0.7)] {
            assert_eq!(
                source_at(State::new(rho, m), &g).unwrap(),
                SourceValue::ZERO
            );
        }
    }

    proptest! {
        #[test]
        fn roundtrip_through_invariants(rho in 1e-3f64..1e3, m in -1e2f64..1e2) {
            let u = State::new(rho, m);
            let back = u.invariants().unwrap().to_state().unwrap();
            prop_assert!((back.rho - rho).abs() <= 1e-10 * rho.max(1.0));
            prop_assert!((back.m - m).abs() <= 1e-10 * m.abs().max(1.0));
        }

        #[test]
        fn invariant_gap_is_two_over_rho(rho in 1e-2f64..1e2, m in -10f64..10.0) {
            let iv = State::new(rho, m).invariants().unwrap();
            prop_assert!(iv.w > iv.z);
            prop_assert!(((iv.w - iv.z) - 2.0 / rho).abs() <= STATE_TOL * (1.0 + m.abs() / rho));
        }

        #[test]
        fn eigenvalues_are_invariants(rho in 1e-2f64..1e2, m in -10f64..10.0) {
            let u = State::new(rho, m);
            let iv = u.invariants().unwrap();
            prop_assert_eq!(u.eigenvalues().unwrap(), (iv.z, iv.w));
        }

        #[test]
        fn subsonic_momentum_iff_opposite_invariants(rho in 1e-2f64..1e2, m in -3f64..3.0) {
            let iv = State::new(rho, m).invariants().unwrap();
            prop_assert_eq!(m.abs() <= 1.0, iv.w * iv.z <= 0.0);
        }

        #[test]
        fn entropy_lower_bound(rho in 1e-2f64..1e2, m in -10f64..10.0) {
            let e = State::new(rho, m).entropy().unwrap();
            prop_assert!(e.eta >= 1.0 / (2.0 * rho) - STATE_TOL);
        }
    }
}
