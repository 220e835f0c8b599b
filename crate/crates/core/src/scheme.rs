//! Fractional-step staggered Lax-Friedrichs scheme.
//!
//! Strip `n` holds cell averages `U_j` for `j + n` even, cell `j` covering
//! `((j-1) l, (j+1) l)`. One step solves the Riemann problem at every `j l`
//! with `j + n` odd between `U_{j-1}` and `U_{j+1}`, adds the source
//! increment `h H(U, t)` to each constant piece of the fan at the end of the
//! strip, and averages the result over the new cell centred on the fan.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initial::InitialData;
use crate::metric::{MetricError, MetricProfile, MetricSample};
use crate::riemann::{solve_riemann, RiemannError, RiemannFan};
use crate::state::{source_at, Invariants, State, StateError};

/// Safety factor on the CFL ratio: `l / (2h) >= CFL_SAFETY * P_T`.
pub const CFL_SAFETY: f64 = 1.05;

/// Default upper cap on `l / (2h)`.
pub const DEFAULT_LAMBDA: f64 = 1000.0;

/// Admissible range of the source guard `D`.
pub const GUARD_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("invalid grid configuration: {0}")]
    Config(String),
    #[error("initial data violates the invariant-region hypothesis ({detail}); offending x: {offending:?}")]
    Hypothesis { detail: String, offending: Vec<f64> },
    #[error("time step h = {h} exceeds the source-guard bound h0 = {h0}")]
    StepAboveGuard { h: f64, h0: f64 },
    #[error("CFL violated at strip {n}, j = {j}: fan piece width {width} < 0")]
    Cfl { n: usize, j: i64, width: f64 },
    #[error("source guard D = {d} outside [1/2, 3/2] at strip {n}, j = {j}")]
    Guard { n: usize, j: i64, d: f64 },
    #[error("vacuum at strip {n}, j = {j}: w_right = {w_right} <= z_left = {z_left}")]
    Vacuum {
        n: usize,
        j: i64,
        w_right: f64,
        z_left: f64,
    },
    #[error("invalid state at strip {n}, j = {j}: {source}")]
    State {
        n: usize,
        j: i64,
        source: StateError,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl SchemeError {
    /// Whether the error arose while advancing (as opposed to during setup).
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            SchemeError::StepAboveGuard { .. }
                | SchemeError::Cfl { .. }
                | SchemeError::Guard { .. }
                | SchemeError::Vacuum { .. }
                | SchemeError::State { .. }
        )
    }
}

/// Which invariant the data keeps away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `delta0 <= w <= P0`, `-P0 <= z <= 0`.
    W,
    /// `0 <= w <= P0`, `-P0 <= z <= -delta0`.
    Z,
}

/// Bounds the initial data satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub branch: Branch,
    pub delta0: f64,
    pub p0: f64,
}

/// Checks the invariant-region hypothesis on `[lo, hi]`.
///
/// With `declared = Some((delta0, p0))` the data must satisfy the declared
/// bounds on one of the two branches; otherwise the tightest bounds are
/// derived from the data.
pub fn check_hypothesis(
    data: &InitialData,
    lo: f64,
    hi: f64,
    declared: Option<(f64, f64)>,
) -> Result<Hypothesis, SchemeError> {
    let scan = data
        .scan_invariants(lo, hi)
        .map_err(|e| SchemeError::Hypothesis {
            detail: e.to_string(),
            offending: Vec::new(),
        })?;
    let offending = |bad: &dyn Fn(f64, f64) -> bool| -> Vec<f64> {
        scan.iter()
            .filter(|(_, iv)| bad(iv.w, iv.z))
            .map(|(x, _)| *x)
            .take(16)
            .collect()
    };

    if let Some((delta0, p0)) = declared {
        if !(delta0 > 0.0 && p0 >= delta0 && p0.is_finite()) {
            return Err(SchemeError::Config(format!(
                "declared bounds need 0 < delta0 <= P0 (delta0 = {delta0}, P0 = {p0})"
            )));
        }
        let bad_w = |w: f64, z: f64| !(w >= delta0 && w <= p0 && z >= -p0 && z <= 0.0);
        let bad_z = |w: f64, z: f64| !(w >= 0.0 && w <= p0 && z >= -p0 && z <= -delta0);
        let off_w = offending(&bad_w);
        if off_w.is_empty() {
            return Ok(Hypothesis {
                branch: Branch::W,
                delta0,
                p0,
            });
        }
        if offending(&bad_z).is_empty() {
            return Ok(Hypothesis {
                branch: Branch::Z,
                delta0,
                p0,
            });
        }
        return Err(SchemeError::Hypothesis {
            detail: format!("need {delta0} <= w <= {p0} and {} <= z <= 0", -p0),
            offending: off_w,
        });
    }

    let off = offending(&|w, z| w < 0.0 || z > 0.0);
    if !off.is_empty() {
        return Err(SchemeError::Hypothesis {
            detail: "need w >= 0 and z <= 0".into(),
            offending: off,
        });
    }
    let w_min = scan.iter().map(|p| p.1.w).fold(f64::INFINITY, f64::min);
    let w_max = scan.iter().map(|p| p.1.w).fold(f64::NEG_INFINITY, f64::max);
    let z_min = scan.iter().map(|p| p.1.z).fold(f64::INFINITY, f64::min);
    let z_max = scan.iter().map(|p| p.1.z).fold(f64::NEG_INFINITY, f64::max);
    let p0 = w_max.max(-z_min);
    if w_min > 0.0 && w_min >= -z_max {
        Ok(Hypothesis {
            branch: Branch::W,
            delta0: w_min,
            p0,
        })
    } else if -z_max > 0.0 {
        Ok(Hypothesis {
            branch: Branch::Z,
            delta0: -z_max,
            p0,
        })
    } else {
        Err(SchemeError::Hypothesis {
            detail: "need inf w > 0 or sup z < 0".into(),
            offending: offending(&|w, z| w <= 0.0 && z >= 0.0),
        })
    }
}

/// A priori bound `P(T) = P0 k(T)^2 / k(0)^2`.
pub fn speed_bound(p0: f64, metric: Option<&MetricProfile>) -> f64 {
    match metric {
        None => p0,
        Some(m) => {
            let s = m.samples();
            let (k0, kt) = (s[0].k, s[s.len() - 1].k);
            p0 * kt * kt / (k0 * k0)
        }
    }
}

/// Largest step keeping both source guards below 1/2 on the box
/// `0 <= w <= 2 P_T`, `-2 P_T <= z <= 0`; capped at the horizon.
pub fn select_h0(metric: Option<&MetricProfile>, p_t: f64) -> f64 {
    let Some(metric) = metric else {
        return f64::INFINITY;
    };
    let wz = 4.0 * p_t * p_t;
    let mut h0 = metric.horizon();
    for g in metric.samples() {
        let bb = (g.b * g.db).abs();
        let c1 = (g.dk / g.k).abs() + wz * bb;
        let c2 = 2.0 * (g.db / g.b).abs() + wz * bb;
        if c1 > 0.0 {
            h0 = h0.min(0.5 / c1);
        }
        if c2 > 0.0 {
            h0 = h0.min(0.25 / c2);
        }
    }
    h0
}

/// Space-time mesh of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub l: f64,
    pub h: f64,
    pub lambda: f64,
    pub horizon: f64,
    /// Truncation half-width `X = half_cells * l`.
    pub half_width: f64,
    /// Even number `J` with cells `j = -J..=J` on even strips.
    pub half_cells: i64,
    pub h0: f64,
    pub steps: usize,
}

impl GridConfig {
    /// `h = min(h0, l / (2 * 1.05 * P_T))`, shrunk so that it divides `T`.
    pub fn derive(
        l: f64,
        horizon: f64,
        lambda: f64,
        half_width: f64,
        p_t: f64,
        h0: f64,
    ) -> Result<Self, SchemeError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(l) || !positive(horizon) || !positive(half_width) || !positive(p_t) {
            return Err(SchemeError::Config(format!(
                "l, T, X and P_T must be positive and finite (l = {l}, T = {horizon}, X = {half_width}, P_T = {p_t})"
            )));
        }
        if !(lambda > 0.0) || !(h0 > 0.0) {
            return Err(SchemeError::Config(format!(
                "Lambda and h0 must be positive (Lambda = {lambda}, h0 = {h0})"
            )));
        }
        let h0 = h0.min(horizon);
        let target = h0.min(l / (2.0 * CFL_SAFETY * p_t));
        let steps = (horizon / target).ceil().max(1.0) as usize;
        let h = horizon / steps as f64;
        let half_cells = {
            let j = (half_width / l).ceil() as i64;
            j + (j & 1)
        };
        let grid = Self {
            l,
            h,
            lambda,
            horizon,
            half_width: half_cells as f64 * l,
            half_cells,
            h0,
            steps,
        };
        let ratio = grid.cfl_ratio();
        if !(p_t < ratio) {
            return Err(SchemeError::Config(format!(
                "CFL needs P_T < l/(2h): P_T = {p_t}, l/(2h) = {ratio}"
            )));
        }
        if ratio > lambda {
            return Err(SchemeError::Config(format!(
                "l/(2h) = {ratio} exceeds Lambda = {lambda}; the source guard forces h0 = {h0}, increase Lambda or l"
            )));
        }
        Ok(grid)
    }

    /// Same mesh with a forced time step, bypassing the `h0` bound.
    pub fn with_forced_step(self, h: f64) -> Self {
        let steps = (self.horizon / h).round().max(1.0) as usize;
        Self { h, steps, ..self }
    }

    pub fn cfl_ratio(&self) -> f64 {
        self.l / (2.0 * self.h)
    }

    /// Number of cells on even strips.
    pub fn cells(&self) -> usize {
        self.half_cells as usize + 1
    }
}

/// Cell averages at the start of strip `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripState {
    pub n: usize,
    pub t_base: f64,
    /// Index of `averages[0]`; indices advance by 2.
    pub j_first: i64,
    pub averages: Vec<State>,
}

impl StripState {
    pub fn j_of(&self, i: usize) -> i64 {
        self.j_first + 2 * i as i64
    }

    pub fn x_of(&self, i: usize, l: f64) -> f64 {
        self.j_of(i) as f64 * l
    }

    pub fn len(&self) -> usize {
        self.averages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.averages.is_empty()
    }

    /// `(j, average)` pairs.
    pub fn cells(&self) -> impl Iterator<Item = (i64, State)> + '_ {
        self.averages
            .iter()
            .enumerate()
            .map(move |(i, u)| (self.j_of(i), *u))
    }

    /// Average of the cell containing `x`, if any.
    pub fn average_at(&self, x: f64, l: f64) -> Option<State> {
        let pos = (x / l - (self.j_first as f64 - 1.0)) / 2.0;
        if pos < 0.0 {
            return None;
        }
        self.averages.get(pos.floor() as usize).copied()
    }
}

/// Cell averages of `data` on strip 0; data beyond `[-X, X]` is replaced by
/// its value at the nearest endpoint.
pub fn initialize(data: &InitialData, grid: &GridConfig) -> StripState {
    let (l, x) = (grid.l, grid.half_width);
    let edge_lo = data.state_at(-x);
    let edge_hi = data.state_at(x.next_down());
    let averages = (-grid.half_cells..=grid.half_cells)
        .step_by(2)
        .map(|j| {
            let (a, b) = ((j - 1) as f64 * l, (j + 1) as f64 * l);
            let (ia, ib) = (a.max(-x), b.min(x));
            let mut acc = data.average(ia, ib) * (ib - ia);
            acc = acc + edge_lo * (ia - a) + edge_hi * (b - ib);
            acc * (1.0 / (b - a))
        })
        .collect();
    StripState {
        n: 0,
        t_base: 0.0,
        j_first: -grid.half_cells,
        averages,
    }
}

/// Invariant-region bounds maintained along a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsLedger {
    pub p0: f64,
    pub delta0: f64,
    pub branch: Branch,
    pub p_t: f64,
    pub h: f64,
    pub horizon: f64,
    pub h0: f64,
    /// Running max of `|2B'/B + B B' w z| / D` over evaluated pieces.
    pub a_t: f64,
    /// `delta0 * exp(-A_T T)`.
    pub floor: f64,
    /// `delta0 * (1 - A_T h)^{N}` with `N = T/h`.
    pub floor_discrete: f64,
    pub steps_taken: usize,
    pub guard_evaluations: u64,
    pub guard_min: f64,
    pub guard_max: f64,
}

impl BoundsLedger {
    pub fn new(hyp: Hypothesis, p_t: f64, grid: &GridConfig) -> Self {
        let mut ledger = Self {
            p0: hyp.p0,
            delta0: hyp.delta0,
            branch: hyp.branch,
            p_t,
            h: grid.h,
            horizon: grid.horizon,
            h0: grid.h0,
            a_t: 0.0,
            floor: hyp.delta0,
            floor_discrete: hyp.delta0,
            steps_taken: 0,
            guard_evaluations: 0,
            guard_min: f64::INFINITY,
            guard_max: f64::NEG_INFINITY,
        };
        ledger.refresh();
        ledger
    }

    fn refresh(&mut self) {
        let steps = (self.horizon / self.h).round();
        self.floor = self.delta0 * (-self.a_t * self.horizon).exp();
        self.floor_discrete = self.delta0 * (1.0 - self.a_t * self.h).max(0.0).powf(steps);
    }

    /// Lower bound `delta0 (1 - A_T h)^n` after `n` strips.
    pub fn floor_at(&self, n: usize) -> f64 {
        self.delta0 * (1.0 - self.a_t * self.h).max(0.0).powi(n as i32)
    }

    /// The invariant bounded below by the floor: `w` or `-z`.
    pub fn floored(&self, iv: &Invariants) -> f64 {
        match self.branch {
            Branch::W => iv.w,
            Branch::Z => -iv.z,
        }
    }

    /// `min{1/2 - P_T h/(2l), floor h/(2l)}`.
    pub fn separation_floor(&self, l: f64) -> f64 {
        let r = self.h / (2.0 * l);
        (0.5 - self.p_t * r).min(self.floor_discrete * r)
    }
}

/// One Riemann problem of a step and the source-corrected fan pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub j: i64,
    pub fan: RiemannFan,
    /// Lengths of the three fan pieces inside the new cell at strip end.
    pub widths: [f64; 3],
    /// `U_p + h H(U_p, t_end)` for each piece.
    pub corrected: [State; 3],
    /// Guard values `D` for each piece.
    pub guard: [f64; 3],
}

/// Snapshot handed to sinks after each step.
pub struct StepView<'a> {
    pub grid: &'a GridConfig,
    pub metric: Option<&'a MetricProfile>,
    pub prev: &'a StripState,
    pub cells: &'a [CellRecord],
    pub next: &'a StripState,
    pub ledger: &'a BoundsLedger,
}

/// Streaming consumer of run output.
pub trait StripSink {
    fn begin(&mut self, _grid: &GridConfig, _initial: &StripState, _ledger: &BoundsLedger) {}
    fn step(&mut self, view: &StepView<'_>);
}

/// Source and the quantities the bounds depend on, for one piece.
struct Correction {
    state: State,
    guard: f64,
    growth: f64,
}

fn correct(u: State, g: Option<&MetricSample>, h: f64) -> Result<Correction, StateError> {
    let Some(g) = g else {
        return Ok(Correction {
            state: u,
            guard: 1.0,
            growth: 0.0,
        });
    };
    let src = source_at(u, g)?;
    let iv = u.invariants()?;
    let guard = 1.0 + h * src.r / u.rho;
    let coeff = 2.0 * g.db / g.b + g.b * g.db * iv.w * iv.z;
    Ok(Correction {
        state: u + src.as_state() * h,
        guard,
        growth: coeff.abs() / guard,
    })
}

/// Advances strip `s` by one time step.
pub fn advance_strip(
    s: &StripState,
    grid: &GridConfig,
    metric: Option<&MetricProfile>,
    ledger: &mut BoundsLedger,
) -> Result<(StripState, Vec<CellRecord>), SchemeError> {
    if grid.h > grid.h0 * (1.0 + 1e-12) {
        return Err(SchemeError::StepAboveGuard {
            h: grid.h,
            h0: grid.h0,
        });
    }
    let n = s.n;
    let (l, h) = (grid.l, grid.h);
    let t_end = ((n + 1) as f64 * h).min(grid.horizon);
    let sample = metric.map(|m| m.eval(t_end)).transpose()?;

    // Even strips grow by one ghost-fed cell on each side, odd strips shrink.
    let expand = s.j_first == -grid.half_cells;
    let first = *s.averages.first().expect("empty strip");
    let last = *s.averages.last().expect("empty strip");
    let count = if expand { s.len() + 1 } else { s.len() - 1 };
    let j_first = if expand { s.j_first - 1 } else { s.j_first + 1 };

    let mut averages = Vec::with_capacity(count);
    let mut cells = Vec::with_capacity(count);
    for k in 0..count {
        let j = j_first + 2 * k as i64;
        let (left, right) = if expand {
            (
                if k == 0 { first } else { s.averages[k - 1] },
                if k == count - 1 { last } else { s.averages[k] },
            )
        } else {
            (s.averages[k], s.averages[k + 1])
        };
        let fan = solve_riemann(left, right).map_err(|e| match e {
            RiemannError::Vacuum { w_right, z_left } => SchemeError::Vacuum {
                n,
                j,
                w_right,
                z_left,
            },
            RiemannError::State(source) => SchemeError::State { n, j, source },
            other => SchemeError::Config(other.to_string()),
        })?;
        let widths = fan.piece_widths(l, h);
        if let Some(&width) = widths.iter().find(|&&w| w < 0.0) {
            return Err(SchemeError::Cfl { n, j, width });
        }
        let mut corrected = [State::new(0.0, 0.0); 3];
        let mut guard = [1.0; 3];
        let mut acc = State::new(0.0, 0.0);
        for (p, u) in fan.states().into_iter().enumerate() {
            let c = correct(u, sample.as_ref(), h).map_err(|source| SchemeError::State {
                n,
                j,
                source,
            })?;
            ledger.guard_evaluations += 1;
            ledger.guard_min = ledger.guard_min.min(c.guard);
            ledger.guard_max = ledger.guard_max.max(c.guard);
            if !(c.guard >= GUARD_RANGE.0 && c.guard <= GUARD_RANGE.1) {
                return Err(SchemeError::Guard { n, j, d: c.guard });
            }
            ledger.a_t = ledger.a_t.max(c.growth);
            corrected[p] = c.state;
            guard[p] = c.guard;
            acc = acc + c.state * widths[p];
        }
        let avg = acc * (1.0 / (2.0 * l));
        avg.validate().map_err(|source| SchemeError::State {
            n: n + 1,
            j,
            source,
        })?;
        averages.push(avg);
        cells.push(CellRecord {
            j,
            fan,
            widths,
            corrected,
            guard,
        });
    }
    ledger.steps_taken = n + 1;
    ledger.refresh();
    Ok((
        StripState {
            n: n + 1,
            t_base: (n + 1) as f64 * h,
            j_first,
            averages,
        },
        cells,
    ))
}

/// Final strip and bounds of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_strip: StripState,
    pub ledger: BoundsLedger,
}

/// Advances `grid.steps` strips, feeding every step to the sinks.
pub fn run(
    initial: StripState,
    grid: &GridConfig,
    metric: Option<&MetricProfile>,
    mut ledger: BoundsLedger,
    sinks: &mut [&mut dyn StripSink],
) -> Result<RunOutcome, SchemeError> {
    if grid.h > grid.h0 * (1.0 + 1e-12) {
        return Err(SchemeError::StepAboveGuard {
            h: grid.h,
            h0: grid.h0,
        });
    }
    for sink in sinks.iter_mut() {
        sink.begin(grid, &initial, &ledger);
    }
    let mut strip = initial;
    for _ in 0..grid.steps {
        let (next, cells) = advance_strip(&strip, grid, metric, &mut ledger)?;
        let view = StepView {
            grid,
            metric,
            prev: &strip,
            cells: &cells,
            next: &next,
            ledger: &ledger,
        };
        for sink in sinks.iter_mut() {
            sink.step(&view);
        }
        strip = next;
    }
    Ok(RunOutcome {
        final_strip: strip,
        ledger,
    })
}

/// Mesh, bounds and strip 0 for given data and metric.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: GridConfig,
    pub ledger: BoundsLedger,
    pub initial: StripState,
    pub hypothesis: Hypothesis,
}

/// Parameters fixed by the user; `h` is always derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub l: f64,
    pub horizon: f64,
    pub lambda: f64,
    pub half_width: f64,
    /// Declared `(delta0, P0)`; derived from the data when absent.
    pub declared: Option<(f64, f64)>,
}

pub fn setup(
    data: &InitialData,
    metric: Option<&MetricProfile>,
    params: &SchemeParams,
) -> Result<Setup, SchemeError> {
    if let Some(m) = metric {
        if (m.horizon() - params.horizon).abs() > 1e-12 * params.horizon.max(1.0) {
            return Err(SchemeError::Config(format!(
                "metric horizon {} differs from T = {}",
                m.horizon(),
                params.horizon
            )));
        }
    }
    let hypothesis =
        check_hypothesis(data, -params.half_width, params.half_width, params.declared)?;
    let p_t = speed_bound(hypothesis.p0, metric);
    let h0 = select_h0(metric, p_t).min(params.horizon);
    let grid = GridConfig::derive(
        params.l,
        params.horizon,
        params.lambda,
        params.half_width,
        p_t,
        h0,
    )?;
    let initial = initialize(data, &grid);
    let ledger = BoundsLedger::new(hypothesis, p_t, &grid);
    Ok(Setup {
        grid,
        ledger,
        initial,
        hypothesis,
    })
}
