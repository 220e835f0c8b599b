//! Run audits: entropy production, invariant region, wave separation,
//! fundamental-form bounds, weak residuals and convergence studies.
//!
//! Audits are [`StripSink`]s so that a run can be checked without storing
//! its strips.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initial::InitialData;
use crate::metric::{MetricProfile, MetricSample};
use crate::riemann::{LagrangeTransform, RiemannError};
use crate::scheme::{
    self, BoundsLedger, GridConfig, SchemeError, SchemeParams, StepView, StripSink, StripState,
};
use crate::state::{source_at, State};

/// Slack on invariant-region bounds.
pub const REGION_SLACK: f64 = 1e-9;
/// Slack on sign conditions and `|m| <= 1`.
pub const SIGN_SLACK: f64 = 1e-12;
/// Slack on entropy production.
pub const ENTROPY_SLACK: f64 = 1e-10;
/// Bound on the Gauss identity residual.
pub const GAUSS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Oracle(#[from] RiemannError),
    #[error("test function support {support:?} leaves the stored domain [{lo}, {hi}]")]
    Support {
        support: (f64, f64),
        lo: f64,
        hi: f64,
    },
    #[error("study needs at least {need} levels, got {got}")]
    Levels { need: usize, got: usize },
}

/// Entropy production `sigma [eta] - [q]` across a contact of speed `sigma`
/// from `left` to `right`.
pub fn contact_production(left: State, right: State, sigma: f64) -> f64 {
    let (l, r) = (left.entropy(), right.entropy());
    match (l, r) {
        (Ok(l), Ok(r)) => sigma * (r.eta - l.eta) - (r.q - l.q),
        _ => f64::NAN,
    }
}

/// `int eta(u0) dx` over `[lo, hi]`.
pub fn initial_entropy(data: &InitialData, lo: f64, hi: f64) -> f64 {
    let eta = |u: State| u.entropy().map(|e| e.eta).unwrap_or(f64::INFINITY);
    match data {
        InitialData::Piecewise { breaks, .. } => {
            let mut edges = vec![lo];
            edges.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
            edges.push(hi);
            edges
                .windows(2)
                .map(|p| eta(data.state_at(0.5 * (p[0] + p[1]))) * (p[1] - p[0]))
                .sum()
        }
        InitialData::Analytic { .. } => {
            let n = 4096;
            let dx = (hi - lo) / n as f64;
            (0..n)
                .map(|i| {
                    let x = lo + i as f64 * dx;
                    dx / 6.0
                        * (eta(data.state_at(x))
                            + 4.0 * eta(data.state_at(x + 0.5 * dx))
                            + eta(data.state_at(x + dx)))
                })
                .sum()
        }
    }
}

/// Per-strip entropy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub n: usize,
    /// `int eta dx` over the cell averages of strip `n`.
    pub total_eta: f64,
    /// Time-integrated production of all contacts of the step into `n`.
    pub production_sum: f64,
    /// Accumulated `sum int |U_j - U(x, nh - 0)|^2 dx` up to strip `n`.
    pub qv_sum: f64,
}

/// Entropy audit over all contacts of a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EntropyAudit {
    pub records: Vec<EntropyRecord>,
    pub contacts: u64,
    pub min_production: f64,
    pub violations: u64,
    pub qv_sum: f64,
}

impl EntropyAudit {
    pub fn new() -> Self {
        Self {
            min_production: f64::INFINITY,
            ..Default::default()
        }
    }

    fn total_eta(strip: &StripState, l: f64) -> f64 {
        strip
            .averages
            .iter()
            .map(|u| u.entropy().map(|e| e.eta).unwrap_or(f64::NAN) * 2.0 * l)
            .sum()
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl StripSink for EntropyAudit {
    fn begin(&mut self, grid: &GridConfig, initial: &StripState, _ledger: &BoundsLedger) {
        self.records.push(EntropyRecord {
            n: initial.n,
            total_eta: Self::total_eta(initial, grid.l),
            production_sum: 0.0,
            qv_sum: 0.0,
        });
    }

    fn step(&mut self, v: &StepView<'_>) {
        let (l, h) = (v.grid.l, v.grid.h);
        let mut production = 0.0;
        for (cell, avg) in v.cells.iter().zip(&v.next.averages) {
            let f = &cell.fan;
            for (a, b, sigma) in [(f.left, f.middle, f.speed1), (f.middle, f.right, f.speed2)] {
                let p = contact_production(a, b, sigma);
                self.contacts += 1;
                self.min_production = self.min_production.min(p);
                if !(p >= -ENTROPY_SLACK) {
                    self.violations += 1;
                }
                production += p * h;
            }
            for (w, u) in cell.widths.iter().zip(&cell.corrected) {
                let d = *avg - *u;
                self.qv_sum += w * (d.rho * d.rho + d.m * d.m);
            }
        }
        self.records.push(EntropyRecord {
            n: v.next.n,
            total_eta: Self::total_eta(v.next, l),
            production_sum: production,
            qv_sum: self.qv_sum,
        });
    }
}

/// Invariant-region audit of every cell of every strip.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegionAudit {
    pub cells_checked: u64,
    pub upper_violations: u64,
    pub sign_violations: u64,
    pub floor_violations: u64,
    pub momentum_violations: u64,
    pub max_w: f64,
    pub min_z: f64,
    /// Smallest `min(floored invariant) - delta0 (1 - A h)^n` over strips.
    pub min_floor_margin: f64,
    pub max_abs_m: f64,
}

impl RegionAudit {
    pub fn new() -> Self {
        Self {
            max_w: f64::NEG_INFINITY,
            min_z: f64::INFINITY,
            min_floor_margin: f64::INFINITY,
            ..Default::default()
        }
    }

    pub fn violations(&self) -> u64 {
        self.upper_violations
            + self.sign_violations
            + self.floor_violations
            + self.momentum_violations
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    fn check(&mut self, strip: &StripState, ledger: &BoundsLedger) {
        let floor = ledger.floor_at(strip.n);
        let mut floored_min = f64::INFINITY;
        for u in &strip.averages {
            self.cells_checked += 1;
            let Ok(iv) = u.invariants() else {
                self.sign_violations += 1;
                continue;
            };
            self.max_w = self.max_w.max(iv.w);
            self.min_z = self.min_z.min(iv.z);
            self.max_abs_m = self.max_abs_m.max(u.m.abs());
            if iv.w > ledger.p_t + REGION_SLACK || iv.z < -ledger.p_t - REGION_SLACK {
                self.upper_violations += 1;
            }
            if iv.w < -SIGN_SLACK || iv.z > SIGN_SLACK {
                self.sign_violations += 1;
            }
            if u.m.abs() > 1.0 + SIGN_SLACK {
                self.momentum_violations += 1;
            }
            floored_min = floored_min.min(ledger.floored(&iv));
        }
        if floored_min < floor - REGION_SLACK {
            self.floor_violations += 1;
        }
        self.min_floor_margin = self.min_floor_margin.min(floored_min - floor);
    }
}

impl StripSink for RegionAudit {
    fn begin(&mut self, _grid: &GridConfig, initial: &StripState, ledger: &BoundsLedger) {
        self.check(initial, ledger);
    }

    fn step(&mut self, v: &StepView<'_>) {
        self.check(v.next, v.ledger);
    }
}

/// `d0` of one step against the analytic floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationRecord {
    pub n: usize,
    pub d0_min: f64,
    pub delta_bound: f64,
}

/// `d0 = (1/2l) min(l + lambda1 h, (lambda2 - lambda1) h, l - lambda2 h)`.
pub fn separation_ratio(speed1: f64, speed2: f64, l: f64, h: f64) -> f64 {
    (l + speed1 * h)
        .min((speed2 - speed1) * h)
        .min(l - speed2 * h)
        / (2.0 * l)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SeparationAudit {
    pub records: Vec<SeparationRecord>,
    pub violations: u64,
}

impl SeparationAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn d0_min(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.d0_min)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl StripSink for SeparationAudit {
    fn step(&mut self, v: &StepView<'_>) {
        let (l, h) = (v.grid.l, v.grid.h);
        let d0_min = v
            .cells
            .iter()
            .map(|c| separation_ratio(c.fan.speed1, c.fan.speed2, l, h))
            .fold(f64::INFINITY, f64::min);
        let delta_bound = v.ledger.separation_floor(l);
        if d0_min < delta_bound - REGION_SLACK {
            self.violations += 1;
        }
        self.records.push(SeparationRecord {
            n: v.prev.n,
            d0_min,
            delta_bound,
        });
    }
}

/// `(L, M, N) = k (rho, -m, (m^2 - 1)/rho)`.
pub fn fundamental_forms(u: State, k: f64) -> (f64, f64, f64) {
    (k * u.rho, -k * u.m, k * (u.m * u.m - 1.0) / u.rho)
}

/// `L N - M^2 + k^2`.
pub fn gauss_residual(forms: (f64, f64, f64), k: f64) -> f64 {
    let (l, m, n) = forms;
    l * n - m * m + k * k
}

/// Sup norms of the fundamental forms and the Gauss identity residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormsAudit {
    pub max_l: f64,
    pub max_m: f64,
    pub max_n: f64,
    pub max_gauss_residual: f64,
    pub k_max: f64,
    pub cells: u64,
}

impl Default for FormsAudit {
    fn default() -> Self {
        Self::new()
    }
}

impl FormsAudit {
    pub fn new() -> Self {
        Self {
            max_l: 0.0,
            max_m: 0.0,
            max_n: 0.0,
            max_gauss_residual: 0.0,
            k_max: 0.0,
            cells: 0,
        }
    }

    fn absorb(&mut self, strip: &StripState, k: f64) {
        self.k_max = self.k_max.max(k);
        for &u in &strip.averages {
            let f = fundamental_forms(u, k);
            self.max_l = self.max_l.max(f.0.abs());
            self.max_m = self.max_m.max(f.1.abs());
            self.max_n = self.max_n.max(f.2.abs());
            self.max_gauss_residual = self.max_gauss_residual.max(gauss_residual(f, k).abs());
            self.cells += 1;
        }
    }

    fn k_at(metric: Option<&MetricProfile>, t: f64) -> f64 {
        metric.and_then(|m| m.eval(t).ok()).map_or(1.0, |g| g.k)
    }
}

/// Forms audit bound to a metric; `k = 1` without one.
pub struct FormsSink<'a> {
    pub metric: Option<&'a MetricProfile>,
    pub audit: FormsAudit,
}

impl<'a> FormsSink<'a> {
    pub fn new(metric: Option<&'a MetricProfile>) -> Self {
        Self {
            metric,
            audit: FormsAudit::new(),
        }
    }
}

impl StripSink for FormsSink<'_> {
    fn begin(&mut self, _grid: &GridConfig, initial: &StripState, _ledger: &BoundsLedger) {
        let k = FormsAudit::k_at(self.metric, initial.t_base);
        self.audit.absorb(initial, k);
    }

    fn step(&mut self, v: &StepView<'_>) {
        let k = FormsAudit::k_at(self.metric, v.next.t_base.min(v.grid.horizon));
        self.audit.absorb(v.next, k);
    }
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        q * q * q
    }
}

fn bump_prime(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        -6.0 * s * q * q
    }
}

/// `int_{-1}^{s} bump`.
fn bump_integral(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    let s2 = s * s;
    s * (1.0 - s2 * (1.0 - s2 * (0.6 - s2 / 7.0))) + 16.0 / 35.0
}

/// `amplitude * b((x - xc)/rx) * b((t - tc)/rt)` with `b(s) = (1 - s^2)^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpTest {
    pub id: String,
    pub x_center: f64,
    pub x_radius: f64,
    pub t_center: f64,
    pub t_radius: f64,
    pub amplitude: f64,
}

impl BumpTest {
    pub fn x_support(&self) -> (f64, f64) {
        (self.x_center - self.x_radius, self.x_center + self.x_radius)
    }

    pub fn t_support(&self) -> (f64, f64) {
        (self.t_center - self.t_radius, self.t_center + self.t_radius)
    }

    fn space(&self, x: f64) -> f64 {
        bump((x - self.x_center) / self.x_radius)
    }

    fn space_integral(&self, a: f64, b: f64) -> f64 {
        let s = |x: f64| (x - self.x_center) / self.x_radius;
        self.x_radius * (bump_integral(s(b)) - bump_integral(s(a)))
    }

    fn time(&self, t: f64) -> f64 {
        self.amplitude * bump((t - self.t_center) / self.t_radius)
    }

    fn time_prime(&self, t: f64) -> f64 {
        self.amplitude * bump_prime((t - self.t_center) / self.t_radius) / self.t_radius
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude * factor,
            ..self.clone()
        }
    }

    /// Five bumps centred on `x_center`, sized for a domain of half-width
    /// `x_scale` and horizon `horizon`.
    pub fn family(x_center: f64, x_scale: f64, horizon: f64) -> Vec<BumpTest> {
        let mk = |id: &str, dx: f64, rx: f64, tc: f64, rt: f64| BumpTest {
            id: id.into(),
            x_center: x_center + dx * x_scale,
            x_radius: rx * x_scale,
            t_center: tc * horizon,
            t_radius: rt * horizon,
            amplitude: 1.0,
        };
        vec![
            mk("centre", 0.0, 0.5, 0.5, 0.4),
            mk("wide", 0.0, 0.9, 0.5, 0.45),
            mk("left", -0.4, 0.35, 0.4, 0.3),
            mk("right", 0.4, 0.35, 0.6, 0.3),
            mk("initial", 0.1, 0.6, 0.0, 0.6),
        ]
    }
}

/// Weak-form residual of one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub id: String,
    pub l: f64,
    /// Residual of the `rho` equation.
    pub rho: f64,
    /// Residual of the `m` equation.
    pub m: f64,
    /// `|rho| + |m|`.
    pub value: f64,
}

/// `int u0(x) b((x - xc)/rx) dx`.
fn initial_moment(data: &InitialData, test: &BumpTest) -> State {
    let (a, b) = test.x_support();
    match data {
        InitialData::Piecewise { breaks, .. } => {
            let mut edges = vec![a];
            edges.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
            edges.push(b);
            edges.windows(2).fold(State::new(0.0, 0.0), |acc, p| {
                acc + data.state_at(0.5 * (p[0] + p[1])) * test.space_integral(p[0], p[1])
            })
        }
        InitialData::Analytic { .. } => {
            // composite Simpson; the integrand is smooth
            let n = 2048;
            let dx = (b - a) / n as f64;
            let f = |x: f64| data.state_at(x) * test.space(x);
            (0..n).fold(State::new(0.0, 0.0), |acc, i| {
                let x = a + i as f64 * dx;
                acc + (f(x) + f(x + 0.5 * dx) * 4.0 + f(x + dx)) * (dx / 6.0)
            })
        }
    }
}

// 4-point Gauss-Legendre on [-1, 1].
const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Accumulates `int int (U phi_t + f(U) phi_x + H phi) + int U0 phi(., 0)`
/// for a set of bump test functions.
///
/// The approximate solution is piecewise constant in `x` inside each strip,
/// so the `x` integrals are exact; in `t` each strip is split at the test
/// support and integrated by 4-point Gauss quadrature.
pub struct WeakResidualSink<'a> {
    tests: Vec<BumpTest>,
    metric: Option<&'a MetricProfile>,
    acc: Vec<State>,
    l: f64,
    error: Option<DiagnosticsError>,
}

impl<'a> WeakResidualSink<'a> {
    pub fn new(
        tests: Vec<BumpTest>,
        data: &InitialData,
        metric: Option<&'a MetricProfile>,
    ) -> Self {
        let acc = tests
            .iter()
            .map(|t| initial_moment(data, t) * t.time(0.0))
            .collect();
        Self {
            tests,
            metric,
            acc,
            l: f64::NAN,
            error: None,
        }
    }

    pub fn finish(self) -> Result<Vec<WeakResidual>, DiagnosticsError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Ok(self
            .tests
            .into_iter()
            .zip(self.acc)
            .map(|(t, r)| WeakResidual {
                id: t.id,
                l: self.l,
                rho: r.rho,
                m: r.m,
                value: r.rho.abs() + r.m.abs(),
            })
            .collect())
    }
}

impl StripSink for WeakResidualSink<'_> {
    fn begin(&mut self, grid: &GridConfig, initial: &StripState, _ledger: &BoundsLedger) {
        self.l = grid.l;
        let (lo, hi) = (
            (initial.j_first - 1) as f64 * grid.l,
            (initial.j_of(initial.len() - 1) + 1) as f64 * grid.l,
        );
        for t in &self.tests {
            let (a, b) = t.x_support();
            if a < lo || b > hi || t.t_support().1 > grid.horizon {
                self.error = Some(DiagnosticsError::Support {
                    support: (a, b),
                    lo,
                    hi,
                });
            }
        }
    }

    fn step(&mut self, v: &StepView<'_>) {
        if self.error.is_some() {
            return;
        }
        let (l, h) = (v.grid.l, v.grid.h);
        let t0 = v.prev.t_base;
        for (test, acc) in self.tests.iter().zip(self.acc.iter_mut()) {
            let (ta, tb) = test.t_support();
            let (lo, hi) = (ta.max(t0), tb.min(t0 + h));
            if !(hi > lo) {
                continue;
            }
            let (xa, xb) = test.x_support();
            for &(node, weight) in &GL4 {
                let t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * node;
                let wt = 0.5 * (hi - lo) * weight;
                let tau = t - t0;
                let g: Option<MetricSample> = self.metric.and_then(|m| m.eval(t).ok());
                let (c, dc) = (test.time(t), test.time_prime(t));
                for cell in v.cells {
                    let centre = cell.j as f64 * l;
                    if centre + l <= xa || centre - l >= xb {
                        continue;
                    }
                    let f = &cell.fan;
                    let edges = [
                        centre - l,
                        centre + f.speed1 * tau,
                        centre + f.speed2 * tau,
                        centre + l,
                    ];
                    for (p, u_r) in f.states().into_iter().enumerate() {
                        let (x1, x2) = (edges[p].max(xa), edges[p + 1].min(xb));
                        if !(x2 > x1) {
                            continue;
                        }
                        let src = |u: State| {
                            g.as_ref()
                                .and_then(|g| source_at(u, g).ok())
                                .map_or(State::new(0.0, 0.0), |s| s.as_state())
                        };
                        let u = u_r + src(u_r) * tau;
                        let Ok(flux) = u.flux() else { continue };
                        let ia = test.space_integral(x1, x2);
                        let da = test.space(x2) - test.space(x1);
                        let term = u * (dc * ia)
                            + State::new(flux.0, flux.1) * (c * da)
                            + src(u) * (c * ia);
                        *acc = *acc + term * wt;
                    }
                }
            }
        }
    }
}

/// Least-squares slope of `log2(value)` against `log2(l)`.
pub fn log2_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(l, v)| (l.log2(), v.max(f64::MIN_POSITIVE).log2()))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `int |a(x) - b(x)| dx` over `[lo, hi]` for two piecewise-constant strips.
pub fn l1_between(a: &StripState, la: f64, b: &StripState, lb: f64, lo: f64, hi: f64) -> f64 {
    let mut edges: Vec<f64> = Vec::new();
    let mut push_edges = |s: &StripState, l: f64| {
        for i in 0..=s.len() {
            let x = (s.j_first - 1 + 2 * i as i64) as f64 * l;
            if x > lo && x < hi {
                edges.push(x);
            }
        }
    };
    push_edges(a, la);
    push_edges(b, lb);
    edges.push(lo);
    edges.push(hi);
    edges.sort_by(f64::total_cmp);
    edges
        .windows(2)
        .filter(|p| p[1] > p[0])
        .map(|p| {
            let mid = 0.5 * (p[0] + p[1]);
            match (a.average_at(mid, la), b.average_at(mid, lb)) {
                (Some(u), Some(v)) => u.l1_distance(&v) * (p[1] - p[0]),
                _ => f64::NAN,
            }
        })
        .sum()
}

/// `int |U(x) - exact(T, x)| dx` over `[lo, hi]` with `samples` midpoint
/// samples per cell.
pub fn l1_against_oracle(
    strip: &StripState,
    l: f64,
    oracle: &LagrangeTransform,
    t: f64,
    lo: f64,
    hi: f64,
    samples: usize,
) -> Result<f64, DiagnosticsError> {
    let mut err = 0.0;
    for (j, u) in strip.cells() {
        let (a, b) = (((j - 1) as f64 * l).max(lo), ((j + 1) as f64 * l).min(hi));
        if !(b > a) {
            continue;
        }
        let dx = (b - a) / samples as f64;
        for s in 0..samples {
            let x = a + (s as f64 + 0.5) * dx;
            let exact = oracle.exact_state(t, x)?;
            err += u.l1_distance(&exact) * dx;
        }
    }
    Ok(err)
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub l: f64,
    pub h: f64,
    pub strips: usize,
    pub cells: usize,
    pub error: f64,
    /// `log2(e_k / e_{k+1})` against the next level.
    pub order: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    ExactOracle,
    FinestGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub reference: Reference,
    pub window: (f64, f64),
    pub levels: Vec<ConvergenceLevel>,
}

impl ConvergenceTable {
    pub fn orders(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|l| l.order).collect()
    }

    /// Errors strictly decrease (or all vanish).
    pub fn monotone(&self) -> bool {
        let errs: Vec<f64> = self
            .levels
            .iter()
            .map(|l| l.error)
            .filter(|e| e.is_finite())
            .collect();
        errs.iter().all(|&e| e == 0.0) || errs.windows(2).all(|p| p[1] < p[0])
    }
}

fn order_between(a: f64, b: f64) -> Option<f64> {
    (a > 0.0 && b > 0.0).then(|| (a / b).log2())
}

/// Runs `data` at `l_k = params.l * 2^-k` for `k < levels` and measures the
/// `L1` error at `t = T` on `window`.
///
/// Without a metric the exact oracle is the reference; with one, the finest
/// level is, and it carries no error entry of its own.
pub fn convergence_study(
    data: &InitialData,
    metric: Option<&MetricProfile>,
    params: &SchemeParams,
    levels: usize,
    window: (f64, f64),
) -> Result<ConvergenceTable, DiagnosticsError> {
    let need = if metric.is_some() { 3 } else { 2 };
    if levels < need {
        return Err(DiagnosticsError::Levels { need, got: levels });
    }
    let mut finals = Vec::with_capacity(levels);
    for k in 0..levels {
        let p = SchemeParams {
            l: params.l / 2f64.powi(k as i32),
            ..*params
        };
        let start = std::time::Instant::now();
        let s = scheme::setup(data, metric, &p)?;
        let out = scheme::run(s.initial, &s.grid, metric, s.ledger, &mut [])?;
        finals.push((s.grid, out.final_strip, start.elapsed().as_secs_f64()));
    }

    let (reference, errors): (Reference, Vec<f64>) = match metric {
        None => {
            let pad = 2.0 * params.half_width + 4.0;
            let res = (finals.last().map_or(params.l, |f| f.0.l) / 8.0).min(1e-3);
            let oracle = LagrangeTransform::build(
                data,
                -params.half_width - pad,
                params.half_width + pad,
                res,
            )?;
            let errs = finals
                .iter()
                .map(|(g, s, _)| {
                    l1_against_oracle(s, g.l, &oracle, params.horizon, window.0, window.1, 32)
                })
                .collect::<Result<_, _>>()?;
            (Reference::ExactOracle, errs)
        }
        Some(_) => {
            let (gf, sf, _) = finals.last().expect("levels checked");
            let mut errs: Vec<f64> = finals[..levels - 1]
                .iter()
                .map(|(g, s, _)| l1_between(s, g.l, sf, gf.l, window.0, window.1))
                .collect();
            errs.push(f64::NAN);
            (Reference::FinestGrid, errs)
        }
    };

    let levels_out = finals
        .iter()
        .enumerate()
        .map(|(k, (g, s, secs))| ConvergenceLevel {
            l: g.l,
            h: g.h,
            strips: g.steps,
            cells: s.len(),
            error: errors[k],
            order: errors
                .get(k + 1)
                .and_then(|&next| order_between(errors[k], next)),
            seconds: *secs,
        })
        .collect();
    Ok(ConvergenceTable {
        reference,
        window,
        levels: levels_out,
    })
}

/// Measurements of one mesh level fed to [`framework_audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkLevel {
    pub l: f64,
    pub forms: FormsAudit,
    pub qv_sum: f64,
    pub p_t: f64,
    pub floor: f64,
    pub weak_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkReport {
    /// Uniform `L^inf` bounds `|M| <= k_max`, `L <= 2 k_max / floor`,
    /// `|N| <= k_max P_T` at every level.
    pub w1: bool,
    /// Quadratic variation at most twice the coarsest level's.
    pub w2: bool,
    /// Gauss identity and weak-residual decay.
    pub w3: bool,
    pub gauss_residual_max: f64,
    pub residual_slope: f64,
    pub qv_sums: Vec<f64>,
}

pub fn framework_audit(levels: &[FrameworkLevel]) -> Result<FrameworkReport, DiagnosticsError> {
    if levels.len() < 3 {
        return Err(DiagnosticsError::Levels {
            need: 3,
            got: levels.len(),
        });
    }
    let tol = 1e-9;
    let w1 = levels.iter().all(|lv| {
        let k = lv.forms.k_max;
        lv.forms.max_m <= k * (1.0 + tol)
            && lv.forms.max_l <= 2.0 * k / lv.floor * (1.0 + tol)
            && lv.forms.max_n <= k * lv.p_t * (1.0 + tol)
    });
    let coarse = levels[0].qv_sum;
    let w2 = levels.iter().all(|lv| lv.qv_sum <= 2.0 * coarse);
    let gauss_residual_max = levels
        .iter()
        .map(|lv| lv.forms.max_gauss_residual)
        .fold(0.0, f64::max);
    let residual_slope = log2_slope(
        &levels
            .iter()
            .map(|lv| (lv.l, lv.weak_residual))
            .collect::<Vec<_>>(),
    );
    Ok(FrameworkReport {
        w1,
        w2,
        w3: gauss_residual_max <= GAUSS_TOL && residual_slope >= 0.4,
        gauss_residual_max,
        residual_slope,
        qv_sums: levels.iter().map(|lv| lv.qv_sum).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::paper_example_profile;
    use crate::riemann::solve_riemann;
    use crate::scheme::{setup, DEFAULT_LAMBDA};
    use crate::state::Invariants;
    use approx::assert_abs_diff_eq;

    fn params(l: f64, horizon: f64, half_width: f64) -> SchemeParams {
        SchemeParams {
            l,
            horizon,
            lambda: DEFAULT_LAMBDA,
            half_width,
            declared: None,
        }
    }

    #[test]
    fn production_of_single_contact() {
        // sigma = -1 between (1, 0) and (4/3, -1/3):
        // eta: 1/2 -> (1/9 + 1)/(8/3) = 5/12; q: 0 -> (-1/27 + 1/3)/(32/9) = 1/12
        let l = State::new(1.0, 0.0);
        let m = State::new(4.0 / 3.0, -1.0 / 3.0);
        let p = contact_production(l, m, -1.0);
        assert_abs_diff_eq!(p, -(5.0 / 12.0 - 0.5) - 1.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bump_antiderivative() {
        assert_abs_diff_eq!(bump_integral(-1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bump_integral(1.0), 32.0 / 35.0, epsilon = 1e-15);
        let n = 20_000;
        let mut acc = 0.0;
        for i in 0..n {
            let s = -1.0 + (i as f64 + 0.5) * (1.3 / n as f64);
            acc += bump(s) * 1.3 / n as f64;
        }
        assert_abs_diff_eq!(acc, bump_integral(0.3), epsilon = 1e-8);
        let d = 1e-6;
        assert_abs_diff_eq!(
            bump_prime(0.4),
            (bump(0.4 + d) - bump(0.4 - d)) / (2.0 * d),
            epsilon = 1e-8
        );
    }

    #[test]
    fn separation_example() {
        assert_abs_diff_eq!(separation_ratio(-1.0, 0.5, 1.0, 0.4), 0.3, epsilon = 1e-15);
        let r = separation_ratio(-1.0, 1.0, 1.0, 0.2);
        assert_abs_diff_eq!(r, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn forms_examples() {
        let f = fundamental_forms(State::new(1.0, 0.0), 1.0);
        assert_eq!(f, (1.0, 0.0, -1.0));
        assert_eq!(gauss_residual(f, 1.0), 0.0);
        let f = fundamental_forms(State::new(2.0, 1.0), 2.0);
        assert_eq!(f, (4.0, -2.0, 0.0));
        assert_eq!(gauss_residual(f, 2.0), 0.0);
    }

    fn audited_run(
        data: &InitialData,
        metric: Option<&MetricProfile>,
        p: &SchemeParams,
        tests: Vec<BumpTest>,
    ) -> (
        EntropyAudit,
        RegionAudit,
        SeparationAudit,
        FormsAudit,
        Vec<WeakResidual>,
    ) {
        let s = setup(data, metric, p).unwrap();
        let mut entropy = EntropyAudit::new();
        let mut region = RegionAudit::new();
        let mut sep = SeparationAudit::new();
        let mut forms = FormsSink::new(metric);
        let mut weak = WeakResidualSink::new(tests, data, metric);
        scheme::run(
            s.initial,
            &s.grid,
            metric,
            s.ledger,
            &mut [&mut entropy, &mut region, &mut sep, &mut forms, &mut weak],
        )
        .unwrap();
        (entropy, region, sep, forms.audit, weak.finish().unwrap())
    }

    #[test]
    fn constant_run_is_clean() {
        let data = InitialData::constant(State::new(1.0, 0.0));
        let tests = BumpTest::family(0.0, 1.0, 0.5);
        let (entropy, region, sep, forms, weak) =
            audited_run(&data, None, &params(0.05, 0.5, 2.0), tests);
        assert!(entropy.records.iter().all(|r| r.production_sum == 0.0));
        assert_eq!(entropy.qv_sum, 0.0);
        assert!(region.passed() && sep.passed());
        assert_eq!(forms.max_gauss_residual, 0.0);
        for r in weak {
            assert!(r.value <= 1e-8, "{r:?}");
        }
    }

    #[test]
    fn residual_is_linear_in_test_function() {
        let data = InitialData::riemann(State::new(1.0, 0.0), State::new(2.0, 0.0), 0.0);
        let metric = paper_example_profile(0.5, 1e-3).unwrap();
        let base = BumpTest::family(0.0, 1.0, 0.5);
        let scaled: Vec<BumpTest> = base.iter().map(|t| t.scaled(-2.5)).collect();
        let p = params(0.05, 0.5, 2.0);
        let (.., a) = audited_run(&data, Some(&metric), &p, base);
        let (.., b) = audited_run(&data, Some(&metric), &p, scaled);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(y.rho, -2.5 * x.rho, epsilon = 1e-13 * (1.0 + x.rho.abs()));
            assert_abs_diff_eq!(y.m, -2.5 * x.m, epsilon = 1e-13 * (1.0 + x.m.abs()));
        }
    }

    #[test]
    fn support_outside_domain_is_reported() {
        let data = InitialData::constant(State::new(1.0, 0.0));
        let s = setup(&data, None, &params(0.1, 0.5, 1.0)).unwrap();
        let far = BumpTest {
            id: "far".into(),
            x_center: 5.0,
            x_radius: 1.0,
            t_center: 0.25,
            t_radius: 0.2,
            amplitude: 1.0,
        };
        let mut weak = WeakResidualSink::new(vec![far], &data, None);
        scheme::run(s.initial, &s.grid, None, s.ledger, &mut [&mut weak]).unwrap();
        assert!(matches!(
            weak.finish(),
            Err(DiagnosticsError::Support { .. })
        ));
    }

    #[test]
    fn sourced_run_keeps_bounds() {
        let data = InitialData::riemann(
            Invariants::new(0.3, -0.2).to_state().unwrap(),
            Invariants::new(1.0, -0.9).to_state().unwrap(),
            0.0,
        );
        let metric = paper_example_profile(0.5, 1e-3).unwrap();
        let (entropy, region, sep, forms, _) =
            audited_run(&data, Some(&metric), &params(0.04, 0.5, 2.0), Vec::new());
        assert!(entropy.passed(), "{}", entropy.min_production);
        assert!(region.passed(), "{region:?}");
        assert!(sep.passed());
        assert!(forms.max_gauss_residual <= GAUSS_TOL);
        assert!(entropy.qv_sum > 0.0);
    }

    #[test]
    fn constant_data_converges_exactly() {
        let data = InitialData::constant(State::new(1.0, 0.0));
        let table = convergence_study(&data, None, &params(0.1, 0.3, 1.0), 3, (-0.5, 0.5)).unwrap();
        assert!(table.levels.iter().all(|l| l.error == 0.0));
        assert!(table.monotone());
    }

    #[test]
    fn l1_between_piecewise_strips() {
        let a = StripState {
            n: 0,
            t_base: 0.0,
            j_first: -1,
            averages: vec![State::new(1.0, 0.0), State::new(2.0, 0.0)],
        };
        let b = StripState {
            n: 0,
            t_base: 0.0,
            j_first: 0,
            averages: vec![State::new(1.5, 0.0)],
        };
        // a on (-2, 0) = 1, (0, 2) = 2; b on (-1, 1) = 1.5
        assert_abs_diff_eq!(
            l1_between(&a, 1.0, &b, 1.0, -1.0, 1.0),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn riemann_oracle_error_decreases() {
        let data = InitialData::riemann(State::new(1.0, 0.0), State::new(2.0, 0.0), 0.0);
        let table =
            convergence_study(&data, None, &params(0.04, 0.5, 2.0), 3, (-1.0, 1.0)).unwrap();
        assert!(table.monotone(), "{table:?}");
        assert!(table.orders().iter().all(|&o| o >= 0.4), "{table:?}");
        let fan = solve_riemann(State::new(1.0, 0.0), State::new(2.0, 0.0)).unwrap();
        assert!(fan.speed1 < 0.0);
    }
}
