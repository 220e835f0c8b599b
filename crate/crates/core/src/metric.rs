//! Metric profiles `ds^2 = dy^2 + B(y)^2 dx^2` with Gauss curvature `-k(y)^2`.
//!
//! `B` solves `B'' = k^2 B` with `B(0) = 1`, `B'(0) = 0` on `y in [-T, 0]`.
//! Profiles are stored in the evolution variable `t = y + T`, so `t = T`
//! is the geodesic `y = 0` and derivatives in `t` and `y` coincide.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the admissibility inequalities.
pub const TOL_ADM: f64 = 1e-10;

/// Smallest metric sampling step.
pub const DT_METRIC_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("curvature must be positive, got k = {k} at y = {y}")]
    NonPositiveCurvature { y: f64, k: f64 },
    #[error("metric coefficient B must be positive, got B = {b} at t = {t}")]
    NonPositiveB { t: f64, b: f64 },
    #[error("non-finite metric sample at t = {t}")]
    NonFinite { t: f64 },
    #[error("integration broke down at y = {y}")]
    Integration { y: f64 },
    #[error("t = {t} outside metric domain [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("curvature table: {0}")]
    Table(String),
}

/// Metric coefficients and their `t`-derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub b: f64,
    pub db: f64,
    pub k: f64,
    pub dk: f64,
}

impl MetricSample {
    /// `d/dt ln(B^2 k) = 2B'/B + k'/k`.
    pub fn log_derivative(&self) -> f64 {
        2.0 * self.db / self.b + self.dk / self.k
    }

    /// `a = (k'/k)(B/B')`, undefined where `B' = 0`.
    pub fn a_ratio(&self) -> Option<f64> {
        if self.db.abs() < 1e-12 {
            None
        } else {
            Some(self.dk / self.k * self.b / self.db)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    PaperExample,
    ConstantA { a: f64, k0: f64 },
    UserK { source: String },
    Synthetic { label: String },
}

/// Uniformly sampled `(B, B', k, k')` on `t in [0, T]`.
///
/// Between samples values come from cubic Hermite interpolation of the stored
/// values and derivatives; the returned derivatives are the derivatives of
/// that interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricProfile {
    horizon: f64,
    dt: f64,
    samples: Vec<MetricSample>,
    provenance: Provenance,
}

impl MetricProfile {
    /// Builds a profile from samples at `t_i = i * T / (len - 1)`.
    pub fn from_samples(
        horizon: f64,
        samples: Vec<MetricSample>,
        provenance: Provenance,
    ) -> Result<Self, MetricError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MetricError::Parameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if samples.len() < 2 {
            return Err(MetricError::Parameter(
                "a profile needs at least two samples".into(),
            ));
        }
        let dt = horizon / (samples.len() - 1) as f64;
        for (i, s) in samples.iter().enumerate() {
            let t = i as f64 * dt;
            if ![s.b, s.db, s.k, s.dk].iter().all(|v| v.is_finite()) {
                return Err(MetricError::NonFinite { t });
            }
            if s.b <= 0.0 {
                return Err(MetricError::NonPositiveB { t, b: s.b });
            }
            if s.k <= 0.0 {
                return Err(MetricError::NonPositiveCurvature {
                    y: t - horizon,
                    k: s.k,
                });
            }
        }
        Ok(Self {
            horizon,
            dt,
            samples,
            provenance,
        })
    }

    /// Samples a closed-form profile given as a function of `t`.
    pub fn from_fn(
        horizon: f64,
        dt: f64,
        f: impl Fn(f64) -> MetricSample,
        provenance: Provenance,
    ) -> Result<Self, MetricError> {
        let n = step_count(horizon, dt)?;
        let step = horizon / n as f64;
        let samples = (0..=n).map(|i| f(i as f64 * step)).collect();
        Self::from_samples(horizon, samples, provenance)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.samples
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        if i + 1 == self.samples.len() {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn eval(&self, t: f64) -> Result<MetricSample, MetricError> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(MetricError::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let t = t.clamp(0.0, self.horizon);
        let last = self.samples.len() - 1;
        let i = ((t / self.dt).floor() as usize).min(last - 1);
        let s = (t - i as f64 * self.dt) / self.dt;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let (bv, bd) = hermite(s, self.dt, a.b, a.db, b.b, b.db);
        let (kv, kd) = hermite(s, self.dt, a.k, a.dk, b.k, b.dk);
        Ok(MetricSample {
            b: bv,
            db: bd,
            k: kv,
            dk: kd,
        })
    }

    /// Evaluates at the geodesic coordinate `y = t - T`.
    pub fn eval_y(&self, y: f64) -> Result<MetricSample, MetricError> {
        self.eval(y + self.horizon)
    }

    /// Maximum of `k` over the samples.
    pub fn k_max(&self) -> f64 {
        self.samples.iter().map(|s| s.k).fold(f64::MIN, f64::max)
    }

    /// True when `B'` and `k'` vanish at every sample, so the source is zero.
    pub fn is_flat(&self) -> bool {
        self.samples.iter().all(|s| s.db == 0.0 && s.dk == 0.0)
    }
}

/// Cubic Hermite value and derivative on a unit-normalized interval.
fn hermite(s: f64, dt: f64, p0: f64, d0: f64, p1: f64, d1: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * p0 + h10 * dt * d0 + h01 * p1 + h11 * dt * d1;
    let g00 = 6.0 * s2 - 6.0 * s;
    let g10 = 3.0 * s2 - 4.0 * s + 1.0;
    let g01 = -6.0 * s2 + 6.0 * s;
    let g11 = 3.0 * s2 - 2.0 * s;
    let deriv = (g00 * p0 + g01 * p1) / dt + g10 * d0 + g11 * d1;
    (value, deriv)
}

fn step_count(horizon: f64, dt: f64) -> Result<usize, MetricError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(MetricError::Parameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MetricError::Parameter(format!(
            "step must be positive, got {dt}"
        )));
    }
    Ok(((horizon / dt).ceil() as usize).max(1))
}

/// Classical RK4 for `B'' = g(y, B)` from `y = 0` down to `y = -T`.
///
/// Returns `(B, B')` at `y_i = -T + i * T / n` for `i = 0..=n`.
fn integrate_backward(
    horizon: f64,
    dt: f64,
    rhs: impl Fn(f64, f64) -> f64,
) -> Result<Vec<(f64, f64)>, MetricError> {
    let n = step_count(horizon, dt)?;
    let h = -horizon / n as f64;
    let mut out = vec![(0.0, 0.0); n + 1];
    let (mut b, mut v) = (1.0_f64, 0.0_f64);
    out[n] = (b, v);
    for i in (0..n).rev() {
        let y = (i + 1) as f64 * (horizon / n as f64) - horizon;
        let k1b = v;
        let k1v = rhs(y, b);
        let k2b = v + 0.5 * h * k1v;
        let k2v = rhs(y + 0.5 * h, b + 0.5 * h * k1b);
        let k3b = v + 0.5 * h * k2v;
        let k3v = rhs(y + 0.5 * h, b + 0.5 * h * k2b);
        let k4b = v + h * k3v;
        let k4v = rhs(y + h, b + h * k3b);
        b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(b.is_finite() && v.is_finite()) || b <= 0.0 {
            return Err(MetricError::Integration { y: y + h });
        }
        out[i] = (b, v);
    }
    Ok(out)
}

/// Integrates `B'' = k^2 B` for a curvature given on `[-T, 0]`.
///
/// `k'` is taken by central differences of `k`.
pub fn solve_b_from_k(
    k: impl Fn(f64) -> f64,
    horizon: f64,
    dt: f64,
    provenance: Provenance,
) -> Result<MetricProfile, MetricError> {
    let n = step_count(horizon, dt)?;
    let step = horizon / n as f64;
    for i in 0..=n {
        let y = i as f64 * step - horizon;
        let kv = k(y);
        if !(kv > 0.0 && kv.is_finite()) {
            return Err(MetricError::NonPositiveCurvature { y, k: kv });
        }
    }
    let bs = integrate_backward(horizon, dt, |y, b| {
        let kv = k(y);
        kv * kv * b
    })?;
    let eps = 1e-6 * horizon.max(1.0);
    let dk = |y: f64| {
        let lo = (y - eps).max(-horizon);
        let hi = (y + eps).min(0.0);
        (k(hi) - k(lo)) / (hi - lo)
    };
    let samples = bs
        .iter()
        .enumerate()
        .map(|(i, &(b, db))| {
            let y = i as f64 * step - horizon;
            MetricSample {
                b,
                db,
                k: k(y),
                dk: dk(y),
            }
        })
        .collect();
    MetricProfile::from_samples(horizon, samples, provenance)
}

fn example_b_second(y: f64) -> f64 {
    (1.0 + y * y).powi(-2)
}

fn example_b_third(y: f64) -> f64 {
    -4.0 * y * (1.0 + y * y).powi(-3)
}

/// The explicit non-helicoid example metric with `B'' = (1 + y^2)^(-2)`
/// and `k = sqrt(B''/B)`.
pub fn paper_example_profile(horizon: f64, dt: f64) -> Result<MetricProfile, MetricError> {
    let n = step_count(horizon, dt)?;
    let step = horizon / n as f64;
    let bs = integrate_backward(horizon, dt, |y, _| example_b_second(y))?;
    let samples = bs
        .iter()
        .enumerate()
        .map(|(i, &(b, db))| {
            let y = i as f64 * step - horizon;
            let bpp = example_b_second(y);
            let k = (bpp / b).sqrt();
            let log_k = 0.5 * (example_b_third(y) / bpp - db / b);
            MetricSample {
                b,
                db,
                k,
                dk: k * log_k,
            }
        })
        .collect();
    MetricProfile::from_samples(horizon, samples, Provenance::PaperExample)
}

/// Numerator `f(y)` of `a(y) + 2` for the example metric; `a <= -2` on
/// `y < 0` is equivalent to `f >= 0`.
pub fn example_numerator(y: f64, b: f64, db: f64) -> f64 {
    -4.0 * y - 4.0 * y * (b - 1.0) + 3.0 * (1.0 + y * y) * db
}

/// Helicoid-type metric with `k = k0 B^a`, i.e. `B'' = k0^2 B^(2a+1)`.
pub fn constant_a_profile(
    a: f64,
    k0: f64,
    horizon: f64,
    dt: f64,
) -> Result<MetricProfile, MetricError> {
    if !(a <= -2.0) {
        return Err(MetricError::Parameter(format!("a must be <= -2, got {a}")));
    }
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(MetricError::Parameter(format!(
            "k0 must be positive, got {k0}"
        )));
    }
    let bs = integrate_backward(horizon, dt, |_, b| k0 * k0 * b.powf(2.0 * a + 1.0))?;
    let samples = bs
        .iter()
        .map(|&(b, db)| {
            let k = k0 * b.powf(a);
            MetricSample {
                b,
                db,
                k,
                dk: a * k * db / b,
            }
        })
        .collect();
    MetricProfile::from_samples(horizon, samples, Provenance::ConstantA { a, k0 })
}

/// Parses a `(y, k)` table; a non-numeric first row is treated as a header.
pub fn parse_k_table(text: &str) -> Result<Vec<(f64, f64)>, MetricError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| MetricError::Table(e.to_string()))?;
        if rec.len() < 2 {
            return Err(MetricError::Table(format!(
                "row {} needs two columns",
                i + 1
            )));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(y), Ok(k)) => rows.push((y, k)),
            _ if i == 0 => continue,
            _ => {
                return Err(MetricError::Table(format!(
                    "row {}: cannot parse ({}, {})",
                    i + 1,
                    &rec[0],
                    &rec[1]
                )))
            }
        }
    }
    if rows.len() < 2 {
        return Err(MetricError::Table("need at least two rows".into()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(MetricError::Table("duplicate y values".into()));
    }
    Ok(rows)
}

/// Metric from a tabulated curvature, linearly interpolated in `y`.
pub fn user_k_profile(
    table: &[(f64, f64)],
    horizon: f64,
    dt: f64,
    source: &str,
) -> Result<MetricProfile, MetricError> {
    let (first, last) = (table[0].0, table[table.len() - 1].0);
    if first > -horizon + 1e-12 || last < -1e-12 {
        return Err(MetricError::Table(format!(
            "table covers y in [{first}, {last}] but [-{horizon}, 0] is required"
        )));
    }
    let interp = |y: f64| {
        let i = table
            .partition_point(|p| p.0 <= y)
            .clamp(1, table.len() - 1);
        let (y0, k0) = table[i - 1];
        let (y1, k1) = table[i];
        k0 + (k1 - k0) * (y - y0) / (y1 - y0)
    };
    solve_b_from_k(
        interp,
        horizon,
        dt,
        Provenance::UserK {
            source: source.to_string(),
        },
    )
}

/// Outcome of the `ln(B^2 k)` monotonicity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// Minimum over samples of `2B'/B + k'/k`.
    pub min_log_derivative: f64,
    /// Time at which the minimum is attained.
    pub argmin_t: f64,
    pub max_b_prime: f64,
    /// Sampled `(y, a(y))` wherever `B' != 0`.
    pub a_profile: Vec<(f64, f64)>,
    pub verdict: bool,
}

pub fn check_admissibility(p: &MetricProfile) -> AdmissibilityReport {
    let mut min_ld = f64::INFINITY;
    let mut argmin = 0.0;
    let mut max_db = f64::NEG_INFINITY;
    let mut a_profile = Vec::new();
    for (i, s) in p.samples().iter().enumerate() {
        let t = p.sample_time(i);
        let ld = s.log_derivative();
        if ld < min_ld {
            min_ld = ld;
            argmin = t;
        }
        max_db = max_db.max(s.db);
        if let Some(a) = s.a_ratio() {
            a_profile.push((t - p.horizon(), a));
        }
    }
    AdmissibilityReport {
        min_log_derivative: min_ld,
        argmin_t: argmin,
        max_b_prime: max_db,
        a_profile,
        verdict: min_ld >= -TOL_ADM && max_db <= TOL_ADM,
    }
}

/// Default metric step for a scheme step `h`.
pub fn default_metric_dt(h: f64) -> f64 {
    (h / 10.0).max(DT_METRIC_FLOOR)
}
