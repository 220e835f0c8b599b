//! Surface reconstruction from the second fundamental form.
//!
//! In geodesic coordinates `ds^2 = dy^2 + B(y)^2 dx^2` the nonzero
//! Christoffel symbols are `G^2_11 = -B B'` and `G^1_12 = B'/B`, and with
//! `h_ij = B (L, M, N)` the Gauss-Weingarten system reads
//!
//! ```text
//! r_xx = -B B' r_y + h11 n        n_x = -(h11/B^2) r_x - h12 r_y
//! r_xy = (B'/B) r_x + h12 n       n_y = -(h12/B^2) r_x - h22 r_y
//! r_yy = h22 n
//! ```
//!
//! The frame `(r, r_x, r_y, n)` is integrated with RK4 along grid lines and
//! re-orthonormalized against the first fundamental form after every step.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::MetricProfile;
use crate::scheme::{BoundsLedger, GridConfig, StepView, StripSink, StripState};
use crate::state::State;

/// Smallest admissible frame determinant.
pub const FRAME_DET_MIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ImmersionError {
    #[error("frame degenerate (det = {det}) at x = {x}, y = {y}")]
    Degenerate { x: f64, y: f64, det: f64 },
    #[error("forms unavailable at x = {x}, y = {y}")]
    Domain { x: f64, y: f64 },
    #[error("invalid reconstruction grid: {0}")]
    Grid(String),
    #[error("Gauss identity fails: max |LN - M^2 + k^2| = {0}")]
    Gauss(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("quality report: {0}")]
    Json(#[from] serde_json::Error),
}

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn axpy(a: f64, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn scale(a: f64, x: Vec3) -> Vec3 {
    [a * x[0], a * x[1], a * x[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Coefficients of the Gauss-Weingarten system on a region of the
/// `(x, y)` plane.
pub trait FormsField {
    /// `(L, M, N)` at `(x, y)`.
    fn forms(&self, x: f64, y: f64) -> Result<[f64; 3], ImmersionError>;
    /// `(B, B')` at `y`.
    fn metric(&self, y: f64) -> Result<(f64, f64), ImmersionError>;
    /// Curvature scale `k` at `y`.
    fn curvature(&self, y: f64) -> Result<f64, ImmersionError>;
}

fn metric_at(p: &MetricProfile, y: f64) -> Result<(f64, f64, f64), ImmersionError> {
    let g = p
        .eval_y(y)
        .map_err(|_| ImmersionError::Domain { x: f64::NAN, y })?;
    Ok((g.b, g.db, g.k))
}

/// Exact `x`-independent forms on a metric: `M = c/B^2`,
/// `L = sqrt(C - c^2/B^2 - B'^2)`, `N = (M^2 - k^2)/L`.
///
/// They satisfy the Gauss and both Codazzi equations identically.
#[derive(Debug, Clone)]
pub struct ProfileForms {
    pub metric: MetricProfile,
    pub c: f64,
    pub energy: f64,
}

impl ProfileForms {
    /// Chooses `C` so that `L >= 1` on the whole profile.
    pub fn new(metric: MetricProfile, c: f64) -> Self {
        let max_db2 = metric
            .samples()
            .iter()
            .map(|s| s.db * s.db)
            .fold(0.0, f64::max);
        let energy = 1.0 + c * c + max_db2;
        Self { metric, c, energy }
    }
}

impl FormsField for ProfileForms {
    fn forms(&self, _x: f64, y: f64) -> Result<[f64; 3], ImmersionError> {
        let (b, db, k) = metric_at(&self.metric, y)?;
        let m = self.c / (b * b);
        let l = (self.energy - m * m * b * b - db * db).sqrt();
        Ok([l, m, (m * m - k * k) / l])
    }

    fn metric(&self, y: f64) -> Result<(f64, f64), ImmersionError> {
        let (b, db, _) = metric_at(&self.metric, y)?;
        Ok((b, db))
    }

    fn curvature(&self, y: f64) -> Result<f64, ImmersionError> {
        Ok(metric_at(&self.metric, y)?.2)
    }
}

/// Scheme output sampled on a uniform `(x, t)` grid.
#[derive(Debug, Clone)]
pub struct FundamentalForms {
    pub metric: MetricProfile,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `rows[i][k]` is the state at `(xs[k], ts[i])`.
    pub rows: Vec<Vec<State>>,
}

impl FundamentalForms {
    fn k_at(&self, t: f64) -> f64 {
        self.metric.eval(t).map_or(f64::NAN, |g| g.k)
    }

    /// `max |L N - M^2 + k^2|` over the samples.
    pub fn gauss_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (t, row) in self.ts.iter().zip(&self.rows) {
            let k = self.k_at(*t);
            for u in row {
                let (l, m, n) = (k * u.rho, -k * u.m, k * (u.m * u.m - 1.0) / u.rho);
                worst = worst.max((l * n - m * m + k * k).abs());
            }
        }
        worst
    }

    /// Box filter of `width` samples in `x` and in `t` applied to
    /// `(rho, m)`; the Gauss relation is restored when `N` is evaluated.
    pub fn mollified(&self, width: usize) -> Self {
        let half = (width / 2) as isize;
        let box1 = |vals: &[State]| -> Vec<State> {
            let n = vals.len() as isize;
            (0..n)
                .map(|i| {
                    let (a, b) = ((i - half).max(0), (i + half).min(n - 1));
                    let sum = (a..=b).fold(State::new(0.0, 0.0), |acc, k| acc + vals[k as usize]);
                    sum * (1.0 / (b - a + 1) as f64)
                })
                .collect()
        };
        let rows: Vec<Vec<State>> = self.rows.iter().map(|r| box1(r)).collect();
        let nx = self.xs.len();
        let mut out = rows.clone();
        for k in 0..nx {
            let col: Vec<State> = rows.iter().map(|r| r[k]).collect();
            for (i, u) in box1(&col).into_iter().enumerate() {
                out[i][k] = u;
            }
        }
        Self {
            rows: out,
            ..self.clone()
        }
    }

    fn state_at(&self, x: f64, t: f64) -> Option<State> {
        let locate = |grid: &[f64], v: f64| -> Option<(usize, f64)> {
            let (lo, hi) = (grid[0], grid[grid.len() - 1]);
            let slack = 1e-9 * (hi - lo).abs().max(1.0);
            if !(v >= lo - slack && v <= hi + slack) {
                return None;
            }
            if grid.len() == 1 {
                return Some((0, 0.0));
            }
            let i = grid.partition_point(|&g| g <= v).clamp(1, grid.len() - 1) - 1;
            Some((i, ((v - grid[i]) / (grid[i + 1] - grid[i])).clamp(0.0, 1.0)))
        };
        let (i, ft) = locate(&self.ts, t)?;
        let (k, fx) = locate(&self.xs, x)?;
        let i1 = (i + 1).min(self.ts.len() - 1);
        let k1 = (k + 1).min(self.xs.len() - 1);
        let lerp = |a: State, b: State, f: f64| a * (1.0 - f) + b * f;
        let lo = lerp(self.rows[i][k], self.rows[i][k1], fx);
        let hi = lerp(self.rows[i1][k], self.rows[i1][k1], fx);
        Some(lerp(lo, hi, ft))
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn y_range(&self) -> (f64, f64) {
        let h = self.metric.horizon();
        (self.ts[0] - h, self.ts[self.ts.len() - 1] - h)
    }
}

impl FormsField for FundamentalForms {
    fn forms(&self, x: f64, y: f64) -> Result<[f64; 3], ImmersionError> {
        let t = y + self.metric.horizon();
        let u = self.state_at(x, t).ok_or(ImmersionError::Domain { x, y })?;
        let k = self.k_at(t);
        Ok([k * u.rho, -k * u.m, k * (u.m * u.m - 1.0) / u.rho])
    }

    fn metric(&self, y: f64) -> Result<(f64, f64), ImmersionError> {
        let (b, db, _) = metric_at(&self.metric, y)?;
        Ok((b, db))
    }

    fn curvature(&self, y: f64) -> Result<f64, ImmersionError> {
        Ok(metric_at(&self.metric, y)?.2)
    }
}

/// Sink recording strip averages on a uniform `x` grid every `stride`
/// strips (and at the first and last strip).
pub struct FormsSampler {
    xs: Vec<f64>,
    stride: usize,
    l: f64,
    steps: usize,
    ts: Vec<f64>,
    rows: Vec<Vec<State>>,
}

impl FormsSampler {
    pub fn new(x_range: (f64, f64), nx: usize, stride: usize) -> Self {
        let nx = nx.max(2);
        let xs = (0..nx)
            .map(|i| x_range.0 + (x_range.1 - x_range.0) * i as f64 / (nx - 1) as f64)
            .collect();
        Self {
            xs,
            stride: stride.max(1),
            l: f64::NAN,
            steps: 0,
            ts: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn sample(&mut self, strip: &StripState, t: f64) {
        let row = self
            .xs
            .iter()
            .map(|&x| {
                strip
                    .average_at(x, self.l)
                    .unwrap_or(State::new(f64::NAN, f64::NAN))
            })
            .collect();
        self.ts.push(t);
        self.rows.push(row);
    }

    pub fn finish(self, metric: MetricProfile) -> Result<FundamentalForms, ImmersionError> {
        let bad = self.rows.iter().zip(&self.ts).find_map(|(r, t)| {
            r.iter()
                .zip(&self.xs)
                .find(|(u, _)| !u.rho.is_finite())
                .map(|(_, x)| (*x, *t))
        });
        if let Some((x, t)) = bad {
            return Err(ImmersionError::Domain {
                x,
                y: t - metric.horizon(),
            });
        }
        Ok(FundamentalForms {
            metric,
            xs: self.xs,
            ts: self.ts,
            rows: self.rows,
        })
    }
}

impl StripSink for FormsSampler {
    fn begin(&mut self, grid: &GridConfig, initial: &StripState, _ledger: &BoundsLedger) {
        self.l = grid.l;
        self.steps = grid.steps;
        self.sample(initial, 0.0);
    }

    fn step(&mut self, v: &StepView<'_>) {
        let n = v.next.n;
        if n.is_multiple_of(self.stride) || n == self.steps {
            self.sample(v.next, v.next.t_base.min(v.grid.horizon));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marching {
    /// Spine along `y` at the base column, then rows along `x`.
    YThenX,
    /// Spine along `x` at the base row, then columns along `y`.
    XThenY,
}

/// Vertex grid and base point of a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Index of the base vertex.
    pub base: (usize, usize),
    /// RK4 steps per grid spacing.
    pub substeps: usize,
    pub marching: Marching,
}

impl ReconstructionGrid {
    fn x(&self, i: usize) -> f64 {
        self.x_range.0 + (self.x_range.1 - self.x_range.0) * i as f64 / (self.nx - 1) as f64
    }

    fn y(&self, j: usize) -> f64 {
        self.y_range.0 + (self.y_range.1 - self.y_range.0) * j as f64 / (self.ny - 1) as f64
    }

    fn validate(&self) -> Result<(), ImmersionError> {
        if self.nx < 2 || self.ny < 2 || self.substeps == 0 {
            return Err(ImmersionError::Grid(
                "need nx, ny >= 2 and substeps >= 1".into(),
            ));
        }
        if !(self.x_range.1 > self.x_range.0 && self.y_range.1 > self.y_range.0) {
            return Err(ImmersionError::Grid("ranges must be increasing".into()));
        }
        if self.base.0 >= self.nx || self.base.1 >= self.ny {
            return Err(ImmersionError::Grid("base vertex outside the grid".into()));
        }
        Ok(())
    }
}

/// Largest deviations of the frame from the target first fundamental form
/// seen before re-orthonormalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameDrift {
    /// `|<r_x, r_x> - B^2| / B^2`.
    pub rx_rx: f64,
    /// `|<r_x, r_y>| / B`.
    pub rx_ry: f64,
    /// `|<r_y, r_y> - 1|`.
    pub ry_ry: f64,
    /// `||n| - 1|` and the normal's tangential components.
    pub normal: f64,
}

impl FrameDrift {
    pub fn max(&self) -> f64 {
        self.rx_rx.max(self.rx_ry).max(self.ry_ry).max(self.normal)
    }

    fn absorb(&mut self, f: &Frame, b: f64) {
        self.rx_rx = self.rx_rx.max((dot(f.rx, f.rx) - b * b).abs() / (b * b));
        self.rx_ry = self.rx_ry.max(dot(f.rx, f.ry).abs() / b);
        self.ry_ry = self.ry_ry.max((dot(f.ry, f.ry) - 1.0).abs());
        let tangential = (dot(f.n, f.rx) / b).abs().max(dot(f.n, f.ry).abs());
        self.normal = self.normal.max((norm(f.n) - 1.0).abs()).max(tangential);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frame {
    r: Vec3,
    rx: Vec3,
    ry: Vec3,
    n: Vec3,
}

impl Frame {
    fn add(&self, a: f64, d: &Frame) -> Frame {
        Frame {
            r: axpy(a, d.r, self.r),
            rx: axpy(a, d.rx, self.rx),
            ry: axpy(a, d.ry, self.ry),
            n: axpy(a, d.n, self.n),
        }
    }

    fn det(&self, b: f64) -> f64 {
        dot(cross(scale(1.0 / b, self.rx), self.ry), self.n)
    }

    /// Gram-Schmidt against `|r_y| = 1`, `r_x . r_y = 0`, `|r_x| = B`.
    fn renormalize(&mut self, b: f64) {
        let ry = scale(1.0 / norm(self.ry), self.ry);
        let rx = axpy(-dot(self.rx, ry), ry, self.rx);
        let rx = scale(b / norm(rx), rx);
        let n = cross(rx, ry);
        let n = scale(1.0 / norm(n), n);
        // keep orientation of the integrated normal
        let n = if dot(n, self.n) < 0.0 {
            scale(-1.0, n)
        } else {
            n
        };
        self.rx = rx;
        self.ry = ry;
        self.n = n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    X,
    Y,
}

fn derivative(
    field: &dyn FormsField,
    dir: Direction,
    x: f64,
    y: f64,
    f: &Frame,
) -> Result<Frame, ImmersionError> {
    let (b, db) = field.metric(y)?;
    let [l, m, n] = field.forms(x, y)?;
    let (h11, h12, h22) = (l * b, m * b, n * b);
    Ok(match dir {
        Direction::X => Frame {
            r: f.rx,
            rx: axpy(h11, f.n, scale(-b * db, f.ry)),
            ry: axpy(h12, f.n, scale(db / b, f.rx)),
            n: axpy(-h12, f.ry, scale(-h11 / (b * b), f.rx)),
        },
        Direction::Y => Frame {
            r: f.ry,
            rx: axpy(h12, f.n, scale(db / b, f.rx)),
            ry: scale(h22, f.n),
            n: axpy(-h22, f.ry, scale(-h12 / (b * b), f.rx)),
        },
    })
}

/// One RK4 step of length `ds` in direction `dir` from `(x, y)`.
fn rk4_step(
    field: &dyn FormsField,
    dir: Direction,
    x: f64,
    y: f64,
    ds: f64,
    f: &Frame,
) -> Result<Frame, ImmersionError> {
    let at = |s: f64| match dir {
        Direction::X => (x + s, y),
        Direction::Y => (x, y + s),
    };
    let (x1, y1) = at(0.5 * ds);
    let (x2, y2) = at(ds);
    let k1 = derivative(field, dir, x, y, f)?;
    let k2 = derivative(field, dir, x1, y1, &f.add(0.5 * ds, &k1))?;
    let k3 = derivative(field, dir, x1, y1, &f.add(0.5 * ds, &k2))?;
    let k4 = derivative(field, dir, x2, y2, &f.add(ds, &k3))?;
    Ok(f.add(ds / 6.0, &k1)
        .add(ds / 3.0, &k2)
        .add(ds / 3.0, &k3)
        .add(ds / 6.0, &k4))
}

/// Integrates from `(x, y)` over `length` along `dir` in `substeps` steps.
#[allow(clippy::too_many_arguments)]
fn march(
    field: &dyn FormsField,
    dir: Direction,
    x: f64,
    y: f64,
    length: f64,
    substeps: usize,
    start: &Frame,
    drift: &mut FrameDrift,
) -> Result<Frame, ImmersionError> {
    let ds = length / substeps as f64;
    let mut f = *start;
    for s in 0..substeps {
        let off = s as f64 * ds;
        let (sx, sy) = match dir {
            Direction::X => (x + off, y),
            Direction::Y => (x, y + off),
        };
        f = rk4_step(field, dir, sx, sy, ds, &f)?;
        let (ex, ey) = match dir {
            Direction::X => (sx + ds, sy),
            Direction::Y => (sx, sy + ds),
        };
        let (b, _) = field.metric(ey)?;
        drift.absorb(&f, b);
        let det = f.det(b);
        if !(det.abs() >= FRAME_DET_MIN) {
            return Err(ImmersionError::Degenerate { x: ex, y: ey, det });
        }
        f.renormalize(b);
    }
    Ok(f)
}

/// Reconstructed surface on the vertex grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    pub grid: ReconstructionGrid,
    /// Row-major, `index = j * nx + i` for vertex `(x_i, y_j)`.
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub tangents_x: Vec<Vec3>,
    pub tangents_y: Vec<Vec3>,
    pub drift: FrameDrift,
}

impl SurfaceMesh {
    pub fn vertex(&self, i: usize, j: usize) -> Vec3 {
        self.positions[j * self.grid.nx + i]
    }

    /// Largest first-fundamental-form residual at the vertices, computed
    /// from the stored tangents.
    pub fn vertex_metric_residual(&self, field: &dyn FormsField) -> Result<f64, ImmersionError> {
        let mut worst: f64 = 0.0;
        for j in 0..self.grid.ny {
            let (b, _) = field.metric(self.grid.y(j))?;
            for i in 0..self.grid.nx {
                let k = j * self.grid.nx + i;
                let (rx, ry) = (self.tangents_x[k], self.tangents_y[k]);
                worst = worst
                    .max((dot(rx, rx) - b * b).abs())
                    .max(dot(rx, ry).abs())
                    .max((dot(ry, ry) - 1.0).abs());
            }
        }
        Ok(worst)
    }
}

/// Integrates the Gauss-Weingarten system over `grid` from the frame
/// `r = 0`, `r_x = (B, 0, 0)`, `r_y = (0, 1, 0)`, `n = (0, 0, 1)` at the
/// base vertex.
pub fn reconstruct(
    field: &dyn FormsField,
    grid: &ReconstructionGrid,
) -> Result<SurfaceMesh, ImmersionError> {
    grid.validate()?;
    let (nx, ny) = (grid.nx, grid.ny);
    let (i0, j0) = grid.base;
    let (b0, _) = field.metric(grid.y(j0))?;
    let start = Frame {
        r: [0.0; 3],
        rx: [b0, 0.0, 0.0],
        ry: [0.0, 1.0, 0.0],
        n: [0.0, 0.0, 1.0],
    };
    let mut frames: Vec<Option<Frame>> = vec![None; nx * ny];
    let mut drift = FrameDrift::default();
    let sub = grid.substeps;

    // Walks from index `from` to each end of a line, filling `set`.
    let mut line = |count: usize,
                    from: usize,
                    origin: Frame,
                    dir: Direction,
                    coord: &dyn Fn(usize) -> (f64, f64),
                    frames: &mut Vec<Option<Frame>>,
                    index: &dyn Fn(usize) -> usize|
     -> Result<(), ImmersionError> {
        frames[index(from)] = Some(origin);
        let forward = (from..count - 1).map(|a| (a, a + 1));
        let backward = (1..=from).rev().map(|a| (a, a - 1));
        for pairs in [forward.collect::<Vec<_>>(), backward.collect()] {
            let mut f = origin;
            for (src, dst) in pairs {
                let (x, y) = coord(src);
                let (xd, yd) = coord(dst);
                let length = match dir {
                    Direction::X => xd - x,
                    Direction::Y => yd - y,
                };
                f = march(field, dir, x, y, length, sub, &f, &mut drift)?;
                frames[index(dst)] = Some(f);
            }
        }
        Ok(())
    };

    match grid.marching {
        Marching::YThenX => {
            line(
                ny,
                j0,
                start,
                Direction::Y,
                &|j| (grid.x(i0), grid.y(j)),
                &mut frames,
                &|j| j * nx + i0,
            )?;
            for j in 0..ny {
                let origin = frames[j * nx + i0].expect("spine filled");
                line(
                    nx,
                    i0,
                    origin,
                    Direction::X,
                    &|i| (grid.x(i), grid.y(j)),
                    &mut frames,
                    &|i| j * nx + i,
                )?;
            }
        }
        Marching::XThenY => {
            line(
                nx,
                i0,
                start,
                Direction::X,
                &|i| (grid.x(i), grid.y(j0)),
                &mut frames,
                &|i| j0 * nx + i,
            )?;
            for i in 0..nx {
                let origin = frames[j0 * nx + i].expect("spine filled");
                line(
                    ny,
                    j0,
                    origin,
                    Direction::Y,
                    &|j| (grid.x(i), grid.y(j)),
                    &mut frames,
                    &|j| j * nx + i,
                )?;
            }
        }
    }

    let frames: Vec<Frame> = frames
        .into_iter()
        .map(|f| f.expect("grid filled"))
        .collect();
    Ok(SurfaceMesh {
        grid: *grid,
        positions: frames.iter().map(|f| f.r).collect(),
        normals: frames.iter().map(|f| f.n).collect(),
        tangents_x: frames.iter().map(|f| f.rx).collect(),
        tangents_y: frames.iter().map(|f| f.ry).collect(),
        drift,
    })
}

/// `max |r_a - r_b|` over vertices of two meshes on the same grid.
pub fn marching_discrepancy(a: &SurfaceMesh, b: &SurfaceMesh) -> f64 {
    a.positions
        .iter()
        .zip(&b.positions)
        .map(|(p, q)| norm(sub(*p, *q)))
        .fold(0.0, f64::max)
}

fn triangles(nx: usize, ny: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let (b, c, d) = (a + 1, a + nx + 1, a + nx);
            out.push([a, b, c]);
            out.push([a, c, d]);
        }
    }
    out
}

/// Angle-defect curvature `(2 pi - sum of angles) / (area / 3)` at every
/// interior vertex, row-major over interior indices.
pub fn angle_defect_curvature(mesh: &SurfaceMesh) -> Vec<f64> {
    let (nx, ny) = (mesh.grid.nx, mesh.grid.ny);
    let p = &mesh.positions;
    let mut angle = vec![0.0; nx * ny];
    let mut area = vec![0.0; nx * ny];
    for t in triangles(nx, ny) {
        let tri_area = 0.5 * norm(cross(sub(p[t[1]], p[t[0]]), sub(p[t[2]], p[t[0]])));
        for k in 0..3 {
            let (v, a, b) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let (e1, e2) = (sub(p[a], p[v]), sub(p[b], p[v]));
            angle[v] += norm(cross(e1, e2)).atan2(dot(e1, e2));
            area[v] += tri_area;
        }
    }
    let mut out = Vec::with_capacity((nx - 2) * (ny - 2));
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let v = j * nx + i;
            out.push((2.0 * std::f64::consts::PI - angle[v]) / (area[v] / 3.0));
        }
    }
    out
}

/// Sidecar quality metrics of an exported mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshQuality {
    pub vertices: usize,
    pub faces: usize,
    pub substeps: usize,
    pub marching: Marching,
    pub drift: FrameDrift,
    pub vertex_metric_residual: f64,
    pub negative_curvature_fraction: f64,
    pub curvature_relative_error_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marching_discrepancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_gauss_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollified_gauss_residual: Option<f64>,
    pub base_frame: String,
}

/// Quality metrics of `mesh` built from `field`.
pub fn assess(mesh: &SurfaceMesh, field: &dyn FormsField) -> Result<MeshQuality, ImmersionError> {
    let curv = angle_defect_curvature(mesh);
    let (nx, ny) = (mesh.grid.nx, mesh.grid.ny);
    let mut rel = 0.0;
    let mut k = 0;
    for j in 1..ny - 1 {
        let target = -field.curvature(mesh.grid.y(j))?.powi(2);
        for _ in 1..nx - 1 {
            rel += ((curv[k] - target) / target).abs();
            k += 1;
        }
    }
    let negative = curv.iter().filter(|&&c| c < 0.0).count();
    Ok(MeshQuality {
        vertices: nx * ny,
        faces: 2 * (nx - 1) * (ny - 1),
        substeps: mesh.grid.substeps,
        marching: mesh.grid.marching,
        drift: mesh.drift,
        vertex_metric_residual: mesh.vertex_metric_residual(field)?,
        negative_curvature_fraction: negative as f64 / curv.len().max(1) as f64,
        curvature_relative_error_mean: rel / curv.len().max(1) as f64,
        marching_discrepancy: None,
        raw_gauss_residual: None,
        mollified_gauss_residual: None,
        base_frame: "r_x = (B, 0, 0), r_y = (0, 1, 0), n = (0, 0, 1) at the base vertex".into(),
    })
}

/// Writes `<stem>.obj` and `<stem>.quality.json` into `dir`.
pub fn export_mesh(
    mesh: &SurfaceMesh,
    quality: &MeshQuality,
    dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf), ImmersionError> {
    let mut obj = String::new();
    let _ = writeln!(
        obj,
        "# {} vertices, {} x {} grid",
        mesh.positions.len(),
        mesh.grid.nx,
        mesh.grid.ny
    );
    for p in &mesh.positions {
        let _ = writeln!(obj, "v {:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
    }
    for n in &mesh.normals {
        let s = 1.0 / norm(*n);
        let _ = writeln!(obj, "vn {:.8e} {:.8e} {:.8e}", n[0] * s, n[1] * s, n[2] * s);
    }
    for t in triangles(mesh.grid.nx, mesh.grid.ny) {
        let (a, b, c) = (t[0] + 1, t[1] + 1, t[2] + 1);
        let _ = writeln!(obj, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    fs::create_dir_all(dir)?;
    let obj_path = dir.join(format!("{stem}.obj"));
    let json_path = dir.join(format!("{stem}.quality.json"));
    fs::write(&obj_path, obj)?;
    fs::write(&json_path, serde_json::to_string_pretty(quality)? + "\n")?;
    Ok((obj_path, json_path))
}

/// Vertices, normals and faces read back from an OBJ file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjData {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

pub fn read_obj(path: &Path) -> Result<ObjData, ImmersionError> {
    let text = fs::read_to_string(path)?;
    let bad = |line: &str| {
        ImmersionError::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad OBJ line: {line}"),
        ))
    };
    let mut out = ObjData::default();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let tag = parts.next();
        let rest: Vec<&str> = parts.collect();
        let triple = |f: &dyn Fn(&str) -> Option<f64>| -> Option<Vec3> {
            (rest.len() == 3).then_some(())?;
            Some([f(rest[0])?, f(rest[1])?, f(rest[2])?])
        };
        let num = |s: &str| s.parse::<f64>().ok();
        match tag {
            Some("v") => out.vertices.push(triple(&num).ok_or_else(|| bad(line))?),
            Some("vn") => out.normals.push(triple(&num).ok_or_else(|| bad(line))?),
            Some("f") => {
                let idx = |s: &str| s.split('/').next().and_then(|v| v.parse::<f64>().ok());
                let t = triple(&idx).ok_or_else(|| bad(line))?;
                out.faces
                    .push([t[0] as usize - 1, t[1] as usize - 1, t[2] as usize - 1]);
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::constant_a_profile;

    fn synthetic() -> ProfileForms {
        ProfileForms::new(constant_a_profile(-3.0, 1.0, 1.0, 1e-3).unwrap(), 0.4)
    }

    fn grid(n: usize, substeps: usize, marching: Marching) -> ReconstructionGrid {
        ReconstructionGrid {
            x_range: (0.0, 1.0),
            y_range: (-1.0, 0.0),
            nx: n,
            ny: n,
            base: (0, n - 1),
            substeps,
            marching,
        }
    }

    #[test]
    fn synthetic_forms_satisfy_gauss_and_codazzi() {
        let f = synthetic();
        let d = 1e-5;
        for i in 1..10 {
            let y = -0.1 * i as f64;
            let [l, m, n] = f.forms(0.0, y).unwrap();
            let (b, db) = f.metric(y).unwrap();
            let k = f.curvature(y).unwrap();
            assert!((l * n - m * m + k * k).abs() < 1e-12);
            assert!(l >= 1.0 - 1e-12);
            let dl =
                (f.forms(0.0, y + d).unwrap()[0] - f.forms(0.0, y - d).unwrap()[0]) / (2.0 * d);
            let dm =
                (f.forms(0.0, y + d).unwrap()[1] - f.forms(0.0, y - d).unwrap()[1]) / (2.0 * d);
            assert!(
                (dl - b * db * n).abs() < 1e-6,
                "L_y = {dl}, B B' N = {}",
                b * db * n
            );
            assert!((dm + 2.0 * db / b * m).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_frame_on_a_cylinder_like_profile() {
        // B = 1, k = 1, L = 1, M = 0, N = -1: the frame stays orthonormal
        struct Saddle;
        impl FormsField for Saddle {
            fn forms(&self, _: f64, _: f64) -> Result<[f64; 3], ImmersionError> {
                Ok([1.0, 0.0, -1.0])
            }
            fn metric(&self, _: f64) -> Result<(f64, f64), ImmersionError> {
                Ok((1.0, 0.0))
            }
            fn curvature(&self, _: f64) -> Result<f64, ImmersionError> {
                Ok(1.0)
            }
        }
        let mesh = reconstruct(&Saddle, &grid(9, 4, Marching::YThenX)).unwrap();
        assert!(mesh.drift.max() < 1e-6);
        // r(x, 0) traces a unit circle through the base vertex
        let p = mesh.vertex(8, 8);
        let (x, z) = (p[0], p[2]);
        assert!(
            (x - 1f64.sin()).abs() < 1e-6 && (z - (1.0 - 1f64.cos())).abs() < 1e-6,
            "{p:?}"
        );
    }

    #[test]
    fn drift_shrinks_with_substeps() {
        let f = synthetic();
        let drifts: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&s| {
                reconstruct(&f, &grid(11, s, Marching::YThenX))
                    .unwrap()
                    .drift
                    .max()
            })
            .collect();
        assert!(drifts[0] > drifts[1] && drifts[1] > drifts[2], "{drifts:?}");
        assert!(drifts[0] / drifts[1] >= 8.0, "{drifts:?}");
    }

    #[test]
    fn marching_orders_agree_for_compatible_forms() {
        let f = synthetic();
        let a = reconstruct(&f, &grid(11, 8, Marching::YThenX)).unwrap();
        let b = reconstruct(&f, &grid(11, 8, Marching::XThenY)).unwrap();
        assert!(marching_discrepancy(&a, &b) < 1e-6);
    }

    #[test]
    fn angle_defect_is_negative() {
        let f = synthetic();
        let mesh = reconstruct(&f, &grid(41, 2, Marching::YThenX)).unwrap();
        let q = assess(&mesh, &f).unwrap();
        assert!(q.negative_curvature_fraction >= 0.95, "{q:?}");
        assert!(q.curvature_relative_error_mean < 0.2, "{q:?}");
    }

    #[test]
    fn obj_roundtrip() {
        let f = synthetic();
        let mesh = reconstruct(&f, &grid(6, 2, Marching::YThenX)).unwrap();
        let q = assess(&mesh, &f).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (obj, json) = export_mesh(&mesh, &q, dir.path(), "surface").unwrap();
        let back = read_obj(&obj).unwrap();
        assert_eq!(back.vertices.len(), 36);
        assert_eq!(back.faces.len(), 50);
        for (p, r) in mesh.positions.iter().zip(&back.vertices) {
            for c in 0..3 {
                assert!((p[c] - r[c]).abs() <= 1e-8 * p[c].abs());
            }
        }
        assert!(back.normals.iter().all(|n| (norm(*n) - 1.0).abs() < 1e-6));
        let parsed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(parsed["vertices"], 36);
    }

    #[test]
    fn degenerate_grid_is_rejected() {
        let f = synthetic();
        let mut g = grid(5, 1, Marching::YThenX);
        g.base = (7, 0);
        assert!(matches!(reconstruct(&f, &g), Err(ImmersionError::Grid(_))));
    }
}
