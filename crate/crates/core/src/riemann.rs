//! Exact solutions of the homogeneous Chaplygin system.
//!
//! Both characteristic fields are linearly degenerate, so every Riemann
//! problem is resolved by two contact discontinuities: the 1-contact moves
//! with speed `z_left` and keeps `z` continuous, the 2-contact moves with
//! speed `w_right` and keeps `w` continuous. For general data the system
//! decouples in the Lagrangian coordinates `(s, xi)` into two transport
//! equations, which gives the closed-form [`LagrangeTransform`] oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initial::InitialData;
use crate::state::{Invariants, State, StateError};

/// Tolerance of invariant-region membership tests.
pub const REGION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiemannError {
    #[error("vacuum: w_right = {w_right} <= z_left = {z_left}")]
    Vacuum { w_right: f64, z_left: f64 },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("initial data violates inf w0 > sup z0 (inf w0 = {inf_w}, sup z0 = {sup_z})")]
    Hypothesis { inf_w: f64, sup_z: f64 },
    #[error("point (t = {t}, x = {x}) is outside the domain of determinacy [{lo}, {hi}]")]
    OutOfDomain { t: f64, x: f64, lo: f64, hi: f64 },
    #[error("invalid transform parameters: {0}")]
    Parameter(String),
}

/// Two-contact solution of a Riemann problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiemannFan {
    pub left: State,
    pub middle: State,
    pub right: State,
    /// Speed of the 1-contact, `z(left)`.
    pub speed1: f64,
    /// Speed of the 2-contact, `w(right)`.
    pub speed2: f64,
}

pub fn solve_riemann(left: State, right: State) -> Result<RiemannFan, RiemannError> {
    let l = left.invariants()?;
    let r = right.invariants()?;
    if r.w <= l.z {
        return Err(RiemannError::Vacuum {
            w_right: r.w,
            z_left: l.z,
        });
    }
    let middle = Invariants::new(r.w, l.z).to_state()?;
    Ok(RiemannFan {
        left,
        middle,
        right,
        speed1: l.z,
        speed2: r.w,
    })
}

impl RiemannFan {
    /// State at similarity coordinate `xi = x/t`; on a wave the state to its
    /// right is returned.
    pub fn sample(&self, xi: f64) -> State {
        if xi < self.speed1 {
            self.left
        } else if xi < self.speed2 {
            self.middle
        } else {
            self.right
        }
    }

    /// The three constant states in order.
    pub fn states(&self) -> [State; 3] {
        [self.left, self.middle, self.right]
    }

    /// Lengths of the three constant pieces inside `(-half, half)` around the
    /// interface after time `tau`.
    pub fn piece_widths(&self, half: f64, tau: f64) -> [f64; 3] {
        [
            half + self.speed1 * tau,
            (self.speed2 - self.speed1) * tau,
            half - self.speed2 * tau,
        ]
    }
}

pub fn sample_fan(fan: &RiemannFan, xi: f64) -> State {
    fan.sample(xi)
}

/// True iff every state has `0 <= w <= w_max` and `z_min <= z <= 0`.
pub fn check_invariant_region(states: &[State], w_max: f64, z_min: f64) -> bool {
    states.iter().all(|u| match u.invariants() {
        Ok(iv) => {
            iv.w >= -REGION_TOL
                && iv.w <= w_max + REGION_TOL
                && iv.z <= REGION_TOL
                && iv.z >= z_min - REGION_TOL
        }
        Err(_) => false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// Values are constant on each interval.
    Step,
    /// Values are linear between nodes.
    Linear,
}

/// Lagrangian description of the exact solution for given initial data.
///
/// `Y0(x) = int 2/(w0 - z0) dx = int rho0 dx`, `X0 = Y0^{-1}`, and
/// `X(t, xi) = xa + CW(xi + t)/2 - CZ(xi - t)/2` with `CW`, `CZ` the
/// primitives of `w0(X0(.))`, `z0(X0(.))` from `xi_0`.
#[derive(Debug, Clone)]
pub struct LagrangeTransform {
    xi: Vec<f64>,
    x0: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    cw: Vec<f64>,
    cz: Vec<f64>,
    shape: Shape,
}

impl LagrangeTransform {
    /// Builds the transform of `data` restricted to `[xa, xb]`.
    ///
    /// Jumps of piecewise data are kept as exact nodes; smooth data is
    /// sampled with spacing at most `resolution`.
    pub fn build(
        data: &InitialData,
        xa: f64,
        xb: f64,
        resolution: f64,
    ) -> Result<Self, RiemannError> {
        if !(xb > xa) || !(resolution > 0.0) {
            return Err(RiemannError::Parameter(format!(
                "need xa < xb and resolution > 0 (xa = {xa}, xb = {xb}, resolution = {resolution})"
            )));
        }
        let n = ((xb - xa) / resolution).ceil() as usize;
        let mut xs: Vec<f64> = (0..=n)
            .map(|i| xa + (xb - xa) * i as f64 / n as f64)
            .collect();
        xs.extend(data.breaks().iter().copied().filter(|&b| b > xa && b < xb));
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));

        let shape = if data.is_piecewise() {
            Shape::Step
        } else {
            Shape::Linear
        };
        // Invariants at nodes (Linear) or on intervals (Step).
        let values: Vec<State> = match shape {
            Shape::Step => xs
                .windows(2)
                .map(|p| data.state_at(0.5 * (p[0] + p[1])))
                .collect(),
            Shape::Linear => xs.iter().map(|&x| data.state_at(x)).collect(),
        };
        let inv: Vec<Invariants> = values
            .iter()
            .map(|u| u.invariants())
            .collect::<Result<_, _>>()?;
        let inf_w = inv.iter().map(|v| v.w).fold(f64::INFINITY, f64::min);
        let sup_z = inv.iter().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
        if !(inf_w > sup_z) {
            return Err(RiemannError::Hypothesis { inf_w, sup_z });
        }

        let mut xi = Vec::with_capacity(xs.len());
        xi.push(0.0);
        for (i, p) in xs.windows(2).enumerate() {
            let dx = p[1] - p[0];
            let mass = match shape {
                Shape::Step => values[i].rho * dx,
                Shape::Linear => {
                    let mid = data.state_at(0.5 * (p[0] + p[1])).rho;
                    dx / 6.0 * (values[i].rho + 4.0 * mid + values[i + 1].rho)
                }
            };
            xi.push(xi[i] + mass);
        }
        let w: Vec<f64> = inv.iter().map(|v| v.w).collect();
        let z: Vec<f64> = inv.iter().map(|v| v.z).collect();
        let cw = primitive(&xi, &w, shape);
        let cz = primitive(&xi, &z, shape);
        Ok(Self {
            xi,
            x0: xs,
            w,
            z,
            cw,
            cz,
            shape,
        })
    }

    pub fn xi_grid(&self) -> &[f64] {
        &self.xi
    }

    /// `X0(xi)` by linear interpolation between nodes.
    pub fn x0_at(&self, xi: f64) -> f64 {
        let i = self.interval(xi);
        let s = (xi - self.xi[i]) / (self.xi[i + 1] - self.xi[i]);
        self.x0[i] + s * (self.x0[i + 1] - self.x0[i])
    }

    /// `Y0(x)`, the inverse of [`Self::x0_at`].
    pub fn y0_at(&self, x: f64) -> f64 {
        let i = self
            .x0
            .partition_point(|&v| v <= x)
            .clamp(1, self.x0.len() - 1)
            - 1;
        let s = (x - self.x0[i]) / (self.x0[i + 1] - self.x0[i]);
        self.xi[i] + s * (self.xi[i + 1] - self.xi[i])
    }

    fn interval(&self, s: f64) -> usize {
        self.xi
            .partition_point(|&v| v <= s)
            .clamp(1, self.xi.len() - 1)
            - 1
    }

    fn value(&self, vals: &[f64], s: f64) -> f64 {
        let i = self.interval(s);
        match self.shape {
            Shape::Step => vals[i],
            Shape::Linear => {
                let f = (s - self.xi[i]) / (self.xi[i + 1] - self.xi[i]);
                vals[i] + f * (vals[i + 1] - vals[i])
            }
        }
    }

    fn integral(&self, vals: &[f64], prim: &[f64], s: f64) -> f64 {
        let i = self.interval(s);
        let d = s - self.xi[i];
        match self.shape {
            Shape::Step => prim[i] + vals[i] * d,
            Shape::Linear => {
                let len = self.xi[i + 1] - self.xi[i];
                prim[i] + vals[i] * d + (vals[i + 1] - vals[i]) * d * d / (2.0 * len)
            }
        }
    }

    /// Eulerian position of the Lagrangian label `xi` at time `t`.
    pub fn position(&self, t: f64, xi: f64) -> f64 {
        self.x0[0] + 0.5 * self.integral(&self.w, &self.cw, xi + t)
            - 0.5 * self.integral(&self.z, &self.cz, xi - t)
    }

    /// Interval of `x` on which the solution at time `t` is determined.
    pub fn determinacy(&self, t: f64) -> Option<(f64, f64)> {
        let (lo, hi) = (self.xi[0] + t, self.xi[self.xi.len() - 1] - t);
        (lo < hi).then(|| (self.position(t, lo), self.position(t, hi)))
    }

    /// Riemann invariants of the exact entropy solution at `(t, x)`.
    pub fn exact_solution(&self, t: f64, x: f64) -> Result<Invariants, RiemannError> {
        let Some((xlo, xhi)) = self.determinacy(t) else {
            return Err(RiemannError::OutOfDomain {
                t,
                x,
                lo: f64::NAN,
                hi: f64::NAN,
            });
        };
        if !(x >= xlo && x <= xhi) {
            return Err(RiemannError::OutOfDomain {
                t,
                x,
                lo: xlo,
                hi: xhi,
            });
        }
        let (mut lo, mut hi) = (self.xi[0] + t, self.xi[self.xi.len() - 1] - t);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.position(t, mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let label = lo;
        Ok(Invariants::new(
            self.value(&self.w, label + t),
            self.value(&self.z, label - t),
        ))
    }

    pub fn exact_state(&self, t: f64, x: f64) -> Result<State, RiemannError> {
        Ok(self.exact_solution(t, x)?.to_state()?)
    }
}

fn primitive(xi: &[f64], vals: &[f64], shape: Shape) -> Vec<f64> {
    let mut out = Vec::with_capacity(xi.len());
    out.push(0.0);
    for i in 0..xi.len() - 1 {
        let len = xi[i + 1] - xi[i];
        let area = match shape {
            Shape::Step => vals[i] * len,
            Shape::Linear => 0.5 * (vals[i] + vals[i + 1]) * len,
        };
        out.push(out[i] + area);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn u(rho: f64, m: f64) -> State {
        State::new(rho, m)
    }

    #[test]
    fn identical_states_give_trivial_fan() {
        let fan = solve_riemann(u(1.0, 0.0), u(1.0, 0.0)).unwrap();
        assert_eq!(fan.middle, u(1.0, 0.0));
        assert_eq!((fan.speed1, fan.speed2), (-1.0, 1.0));
    }

    #[test]
    fn two_contact_example() {
        let fan = solve_riemann(u(1.0, 0.0), u(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(fan.middle.rho, 4.0 / 3.0, epsilon = TOL);
        assert_abs_diff_eq!(fan.middle.m, -1.0 / 3.0, epsilon = TOL);
        assert_eq!((fan.speed1, fan.speed2), (-1.0, 0.5));

        let mid = fan.sample(0.0);
        assert_abs_diff_eq!(mid.rho, 4.0 / 3.0, epsilon = TOL);
        assert_eq!(fan.sample(-10.0), u(1.0, 0.0));
        assert_eq!(fan.sample(10.0), u(2.0, 0.0));
        // tie-break: right of the wave
        assert_eq!(fan.sample(-1.0), fan.middle);
        assert_eq!(fan.sample(0.5), fan.right);
    }

    #[test]
    fn only_second_wave_has_strength() {
        let fan = solve_riemann(u(2.0, 1.0), u(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(fan.middle.rho, 2.0, epsilon = TOL);
        assert_abs_diff_eq!(fan.middle.m, 1.0, epsilon = TOL);
        assert_eq!((fan.speed1, fan.speed2), (0.0, 1.0));
    }

    #[test]
    fn vacuum_is_reported() {
        // z_left = 1, w_right = 0.5
        let left = Invariants::new(2.0, 1.0).to_state().unwrap();
        let right = Invariants::new(0.5, -1.0).to_state().unwrap();
        assert!(matches!(
            solve_riemann(left, right),
            Err(RiemannError::Vacuum { .. })
        ));
    }

    #[test]
    fn region_membership() {
        assert!(check_invariant_region(&[u(1.0, 0.0)], 1.0, -1.0));
        assert!(!check_invariant_region(&[u(1.0, 0.0)], 0.9, -1.0));
        assert!(!check_invariant_region(&[u(1.0, 1.5)], 10.0, -10.0));
        assert!(!check_invariant_region(&[u(-1.0, 0.0)], 10.0, -10.0));
    }

    fn region_state() -> impl Strategy<Value = State> {
        (0.0f64..2.0, -2.0f64..0.0)
            .prop_filter("non-degenerate", |(w, z)| w - z > 1e-3)
            .prop_map(|(w, z)| Invariants::new(w, z).to_state().unwrap())
    }

    proptest! {
        #[test]
        fn wave_curve_identities(left in region_state(), right in region_state()) {
            let fan = solve_riemann(left, right).unwrap();
            let (l, m, r) = (
                left.invariants().unwrap(),
                fan.middle.invariants().unwrap(),
                right.invariants().unwrap(),
            );
            prop_assert!((m.z - l.z).abs() <= 1e-12 * (1.0 + l.z.abs()));
            prop_assert!((m.w - r.w).abs() <= 1e-12 * (1.0 + r.w.abs()));
            prop_assert!(fan.speed1 <= fan.speed2);
            prop_assert!(fan.middle.rho > 0.0);
            // linear degeneracy
            let (l1, _) = fan.middle.eigenvalues().unwrap();
            let (_, l2) = fan.middle.eigenvalues().unwrap();
            prop_assert!((l1 - fan.speed1).abs() <= 1e-12 * (1.0 + l1.abs()));
            prop_assert!((l2 - fan.speed2).abs() <= 1e-12 * (1.0 + l2.abs()));
        }

        #[test]
        fn fan_stays_in_rectangle(left in region_state(), right in region_state()) {
            let fan = solve_riemann(left, right).unwrap();
            let ivs = [left.invariants().unwrap(), right.invariants().unwrap()];
            let w_max = ivs.iter().map(|v| v.w).fold(0.0, f64::max);
            let z_min = ivs.iter().map(|v| v.z).fold(0.0, f64::min);
            prop_assert!(check_invariant_region(&fan.states(), w_max, z_min));
        }

        #[test]
        fn averages_of_fan_stay_in_rectangle(
            left in region_state(),
            right in region_state(),
            a in -3.0f64..0.0,
            len in 0.1f64..6.0,
        ) {
            let fan = solve_riemann(left, right).unwrap();
            let ivs = [left.invariants().unwrap(), right.invariants().unwrap()];
            let (wmin, wmax) = (ivs[0].w.min(ivs[1].w), ivs[0].w.max(ivs[1].w));
            let (zmin, zmax) = (ivs[0].z.min(ivs[1].z), ivs[0].z.max(ivs[1].z));
            // trapezoid rule over the sampled fan at t = 1
            let n = 2000;
            let dx = len / n as f64;
            let mut acc = State::new(0.0, 0.0);
            for i in 0..=n {
                let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
                acc = acc + fan.sample(a + i as f64 * dx) * (wgt * dx);
            }
            let avg = (acc * (1.0 / len)).invariants().unwrap();
            prop_assert!(avg.w >= wmin - 1e-10 && avg.w <= wmax + 1e-10);
            prop_assert!(avg.z >= zmin - 1e-10 && avg.z <= zmax + 1e-10);
        }
    }

    #[test]
    fn transform_of_constant_data_is_identity() {
        let d = InitialData::constant(u(1.0, 0.0));
        let tr = LagrangeTransform::build(&d, -2.0, 2.0, 1e-2).unwrap();
        for &x in &[-1.5, -0.3, 0.0, 1.2] {
            assert_abs_diff_eq!(tr.y0_at(x), x + 2.0, epsilon = 1e-12);
        }
        let iv = tr.exact_solution(0.5, 0.1).unwrap();
        assert_eq!((iv.w, iv.z), (1.0, -1.0));
        assert_abs_diff_eq!(tr.position(0.5, 2.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_scales_with_density() {
        let d = InitialData::constant(Invariants::new(0.5, -0.5).to_state().unwrap());
        let tr = LagrangeTransform::build(&d, 0.0, 1.0, 1e-2).unwrap();
        assert_abs_diff_eq!(tr.y0_at(0.4), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.x0_at(1.2), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn transform_of_step_data_is_piecewise_linear() {
        let d = InitialData::riemann(u(1.0, 0.0), u(2.0, 0.0), 0.25);
        let tr = LagrangeTransform::build(&d, 0.0, 1.0, 0.1).unwrap();
        // slopes rho0 = 1 then 2
        assert_abs_diff_eq!(tr.y0_at(0.25), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.y0_at(0.75), 0.25 + 2.0 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.y0_at(1.0), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn hypothesis_is_checked() {
        let d = InitialData::riemann(
            Invariants::new(0.2, -1.0).to_state().unwrap(),
            Invariants::new(1.0, 0.5).to_state().unwrap(),
            0.0,
        );
        assert!(matches!(
            LagrangeTransform::build(&d, -1.0, 1.0, 1e-2),
            Err(RiemannError::Hypothesis { .. })
        ));
    }

    #[test]
    fn exact_solution_matches_riemann_fan() {
        use proptest::test_runner::{RngAlgorithm, TestRng};
        let cases = [
            (u(1.0, 0.0), u(2.0, 0.0)),
            (u(2.0, 1.0), u(1.0, 0.0)),
            (
                Invariants::new(1.0, -0.2).to_state().unwrap(),
                Invariants::new(0.1, -1.0).to_state().unwrap(),
            ),
        ];
        let mut rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
        let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        for (left, right) in cases {
            let d = InitialData::riemann(left, right, 0.0);
            let tr = LagrangeTransform::build(&d, -4.0, 4.0, 1e-4).unwrap();
            let fan = solve_riemann(left, right).unwrap();
            let mut checked = 0;
            while checked < 1000 {
                let t = 0.05 + 0.95 * unit();
                let x = -1.5 + 3.0 * unit();
                let xi = x / t;
                if (xi - fan.speed1).abs() * t < 1e-6 || (xi - fan.speed2).abs() * t < 1e-6 {
                    continue;
                }
                let got = tr.exact_solution(t, x).unwrap();
                let want = fan.sample(xi).invariants().unwrap();
                assert!(
                    (got.w - want.w).abs() <= 1e-8 && (got.z - want.z).abs() <= 1e-8,
                    "t={t} x={x}: {got:?} vs {want:?}"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn exact_solution_preserves_signs() {
        let d = InitialData::analytic("bump", (-1.0, 1.0), |x| {
            let c = (1.0 - x * x).max(0.0).powi(3);
            Invariants::new(0.1 + 0.8 * c, -0.9 + 0.7 * c)
                .to_state()
                .unwrap()
        });
        let tr = LagrangeTransform::build(&d, -3.0, 3.0, 1e-3).unwrap();
        for i in 0..200 {
            let t = 0.01 + 0.005 * i as f64;
            let x = -1.2 + 0.012 * i as f64;
            let iv = tr.exact_solution(t, x).unwrap();
            assert!(iv.w >= 0.0 && iv.z <= 0.0);
        }
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let d = InitialData::constant(u(1.0, 0.0));
        let tr = LagrangeTransform::build(&d, -1.0, 1.0, 1e-2).unwrap();
        assert!(matches!(
            tr.exact_solution(0.5, 0.9),
            Err(RiemannError::OutOfDomain { .. })
        ));
        assert!(tr.exact_solution(1.5, 0.0).is_err());
    }
}
