//! End-to-end runs: validation, metric construction, the strip march with
//! its audits, optional surface reconstruction, and the on-disk artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, FormsSource, RunConfig};
use crate::diagnostics::{
    self, initial_entropy, BumpTest, ConvergenceTable, DiagnosticsError, EntropyAudit, FormsAudit,
    FormsSink, RegionAudit, SeparationAudit, WeakResidual, WeakResidualSink,
};
use crate::immersion::{
    self, assess, export_mesh, FormsField, FormsSampler, ImmersionError, Marching, MeshQuality,
    ProfileForms, ReconstructionGrid, SurfaceMesh,
};
use crate::initial::InitialData;
use crate::metric::{
    check_admissibility, default_metric_dt, AdmissibilityReport, MetricError, MetricProfile,
    Provenance,
};
use crate::scheme::{
    self, BoundsLedger, Branch, GridConfig, Hypothesis, SchemeError, SchemeParams, StepView,
    StripSink, StripState,
};

/// Metric sampling step used before `h` is known.
const PROVISIONAL_DT: f64 = 1e-3;

/// Target number of strips written to CSV when no stride is configured.
const CSV_TARGET_STRIPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    /// Bad configuration, data outside the hypotheses, inadmissible metric.
    Validation {
        message: String,
        detail: Value,
    },
    /// Failure while marching, or a violated invariant.
    Runtime {
        message: String,
        detail: Value,
    },
    Io {
        message: String,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation { .. } => 2,
            PipelineError::Runtime { .. } => 3,
            PipelineError::Io { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Validation { .. } => "validation",
            PipelineError::Runtime { .. } => "runtime",
            PipelineError::Io { .. } => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            PipelineError::Validation { message, .. }
            | PipelineError::Runtime { message, .. }
            | PipelineError::Io { message } => message,
        }
    }

    /// Machine-readable form printed by the CLI.
    pub fn report(&self) -> Value {
        let detail = match self {
            PipelineError::Validation { detail, .. } | PipelineError::Runtime { detail, .. } => {
                detail.clone()
            }
            PipelineError::Io { .. } => Value::Null,
        };
        json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.message(),
            "detail": detail,
        })
    }

    fn validation(message: impl Into<String>, detail: Value) -> Self {
        PipelineError::Validation {
            message: message.into(),
            detail,
        }
    }

    fn io(context: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            message: format!("{}: {e}", context.display()),
        }
    }
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for PipelineError {}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::validation(e.to_string(), json!({ "field": e.field }))
    }
}

impl From<MetricError> for PipelineError {
    fn from(e: MetricError) -> Self {
        PipelineError::validation(e.to_string(), Value::Null)
    }
}

impl From<SchemeError> for PipelineError {
    fn from(e: SchemeError) -> Self {
        let detail = match &e {
            SchemeError::Hypothesis { offending, .. } => json!({ "offending_x": offending }),
            SchemeError::StepAboveGuard { h, h0 } => json!({ "h": h, "h0": h0 }),
            SchemeError::Guard { n, j, d } => json!({ "strip": n, "j": j, "guard": d }),
            SchemeError::Cfl { n, j, width } => json!({ "strip": n, "j": j, "width": width }),
            SchemeError::Vacuum {
                n,
                j,
                w_right,
                z_left,
            } => {
                json!({ "strip": n, "j": j, "w_right": w_right, "z_left": z_left })
            }
            SchemeError::State { n, j, .. } => json!({ "strip": n, "j": j }),
            _ => Value::Null,
        };
        if e.is_runtime() {
            PipelineError::Runtime {
                message: e.to_string(),
                detail,
            }
        } else {
            PipelineError::validation(e.to_string(), detail)
        }
    }
}

impl From<DiagnosticsError> for PipelineError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Scheme(s) => s.into(),
            other => PipelineError::Runtime {
                message: other.to_string(),
                detail: Value::Null,
            },
        }
    }
}

impl From<ImmersionError> for PipelineError {
    fn from(e: ImmersionError) -> Self {
        match e {
            ImmersionError::Io(io) => PipelineError::Io {
                message: io.to_string(),
            },
            ImmersionError::Grid(_) => PipelineError::validation(e.to_string(), Value::Null),
            other => PipelineError::Runtime {
                message: other.to_string(),
                detail: Value::Null,
            },
        }
    }
}

/// `int eta(U0) dx` over the truncation domain against the configured bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyBudget {
    pub value: f64,
    pub bound: Option<f64>,
    pub within: bool,
}

/// Everything fixed before the first strip is advanced.
#[derive(Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub data: InitialData,
    pub metric: Option<MetricProfile>,
    pub admissibility: Option<AdmissibilityReport>,
    pub grid: GridConfig,
    pub ledger: BoundsLedger,
    pub initial: StripState,
    pub hypothesis: Hypothesis,
    pub entropy_budget: EntropyBudget,
}

impl Prepared {
    pub fn params(&self) -> SchemeParams {
        params_of(&self.config)
    }
}

fn params_of(cfg: &RunConfig) -> SchemeParams {
    SchemeParams {
        l: cfg.l,
        horizon: cfg.horizon,
        lambda: cfg.lambda,
        half_width: cfg.half_width,
        declared: cfg.bounds.map(|b| (b.delta0, b.p0)),
    }
}

/// Builds and admits the metric at the provisional resolution.
pub fn admitted_metric(
    cfg: &RunConfig,
    dt: f64,
) -> Result<(MetricProfile, AdmissibilityReport), PipelineError> {
    let metric = cfg.build_metric(dt)?;
    let report = check_admissibility(&metric);
    if !report.verdict {
        return Err(PipelineError::validation(
            format!(
                "metric is not admissible: min (2B'/B + k'/k) = {:.6e} at y = {:.6}, max B' = {:.6e}",
                report.min_log_derivative,
                report.argmin_t - metric.horizon(),
                report.max_b_prime
            ),
            json!({
                "min_log_derivative": report.min_log_derivative,
                "argmin_y": report.argmin_t - metric.horizon(),
                "max_b_prime": report.max_b_prime,
            }),
        ));
    }
    Ok((metric, report))
}

/// Validates `cfg` and derives the mesh, bounds and strip 0.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let data = cfg.build_initial()?;
    let x = cfg.half_width;
    let c0 = initial_entropy(&data, -x, x);
    let entropy_budget = EntropyBudget {
        value: c0,
        bound: cfg.c0,
        within: cfg.c0.is_none_or(|b| c0 <= b),
    };
    if !entropy_budget.within {
        return Err(PipelineError::validation(
            format!(
                "initial entropy {c0:.6e} exceeds the configured bound {:.6e}",
                cfg.c0.unwrap_or(f64::NAN)
            ),
            json!({ "initial_entropy": c0, "c0": cfg.c0 }),
        ));
    }
    let params = params_of(cfg);

    let (metric, admissibility) = if cfg.zero_source {
        (None, None)
    } else {
        let (provisional, report) = admitted_metric(cfg, PROVISIONAL_DT)?;
        let s = scheme::setup(&data, Some(&provisional), &params)?;
        let dt = default_metric_dt(s.grid.h);
        let metric = if dt < provisional.dt() {
            admitted_metric(cfg, dt)?.0
        } else {
            provisional
        };
        (Some(metric), Some(report))
    };

    let s = scheme::setup(&data, metric.as_ref(), &params)?;
    let (grid, ledger) = match cfg.inject {
        Some(inj) => {
            let grid = s.grid.with_forced_step(inj.h_factor * s.grid.h0);
            let ledger = BoundsLedger::new(s.hypothesis, s.ledger.p_t, &grid);
            (grid, ledger)
        }
        None => (s.grid, s.ledger),
    };
    Ok(Prepared {
        config: cfg.clone(),
        data,
        metric,
        admissibility,
        grid,
        ledger,
        initial: s.initial,
        hypothesis: s.hypothesis,
        entropy_budget,
    })
}

/// Streams strips `t, j, x, rho, m, w, z` to a CSV file.
pub struct StripCsvSink {
    writer: csv::Writer<BufWriter<File>>,
    stride: usize,
    steps: usize,
    l: f64,
    h: f64,
    rows: u64,
    error: Option<String>,
}

impl StripCsvSink {
    pub fn create(path: &Path, stride: usize) -> Result<Self, PipelineError> {
        let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer
            .write_record(["t", "j", "x", "rho", "m", "w", "z"])
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(Self {
            writer,
            stride: stride.max(1),
            steps: 0,
            l: f64::NAN,
            h: f64::NAN,
            rows: 0,
            error: None,
        })
    }

    fn write_strip(&mut self, strip: &StripState) {
        if self.error.is_some() {
            return;
        }
        let t = strip.n as f64 * self.h;
        for (i, u) in strip.averages.iter().enumerate() {
            let (w, z) = u
                .invariants()
                .map_or((f64::NAN, f64::NAN), |iv| (iv.w, iv.z));
            let record = [
                t.to_string(),
                strip.j_of(i).to_string(),
                strip.x_of(i, self.l).to_string(),
                u.rho.to_string(),
                u.m.to_string(),
                w.to_string(),
                z.to_string(),
            ];
            if let Err(e) = self.writer.write_record(&record) {
                self.error = Some(e.to_string());
                return;
            }
            self.rows += 1;
        }
    }

    pub fn finish(mut self) -> Result<u64, String> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.writer.flush().map_err(|e| e.to_string())?;
        Ok(self.rows)
    }
}

impl StripSink for StripCsvSink {
    fn begin(&mut self, grid: &GridConfig, initial: &StripState, _ledger: &BoundsLedger) {
        self.steps = grid.steps;
        self.l = grid.l;
        self.h = grid.h;
        self.write_strip(initial);
    }

    fn step(&mut self, v: &StepView<'_>) {
        let n = v.next.n;
        if n.is_multiple_of(self.stride) || n == self.steps {
            self.write_strip(v.next);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub l: f64,
    pub h: f64,
    pub h0: f64,
    pub steps: usize,
    pub half_cells: i64,
    pub lambda: f64,
    /// `l / (2h)`, bracketed by `P_T` and `lambda`.
    pub cfl_ratio: f64,
    pub metric_dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsSummary {
    pub branch: Branch,
    pub delta0: f64,
    pub p0: f64,
    pub p_t: f64,
    pub a_t: f64,
    pub floor: f64,
    pub floor_discrete: f64,
    /// Lower bound on the fan separation `d0`.
    pub separation_floor: f64,
    pub guard_min: f64,
    pub guard_max: f64,
    pub guard_evaluations: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ViolationCounters {
    pub region_upper: u64,
    pub region_sign: u64,
    pub region_floor: u64,
    pub momentum: u64,
    pub separation: u64,
    pub entropy: u64,
}

impl ViolationCounters {
    pub fn total(&self) -> u64 {
        self.region_upper
            + self.region_sign
            + self.region_floor
            + self.momentum
            + self.separation
            + self.entropy
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: &'static str,
    pub status: &'static str,
    pub config: RunConfig,
    pub metric: Option<Provenance>,
    pub grid: GridSummary,
    pub bounds: BoundsSummary,
    pub entropy_budget: EntropyBudget,
    pub violations: ViolationCounters,
    pub wall_seconds: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropySummary {
    pub contacts: u64,
    pub min_production: f64,
    pub violations: u64,
    /// `sum |avg - piece|^2 * width`, the dissipation of averaging.
    pub averaging_dissipation: f64,
    pub initial_total: f64,
    pub final_total: f64,
    pub max_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparationSummary {
    pub d0_min: f64,
    pub floor: f64,
    pub violations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub region: RegionAudit,
    pub separation: SeparationSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forms: Option<FormsAudit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak_residuals: Option<Vec<WeakResidual>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<AdmissibilityReport>,
}

/// Result of a run, including whatever was written.
pub struct RunReport {
    pub prepared: Prepared,
    pub final_strip: StripState,
    pub ledger: BoundsLedger,
    pub manifest: Manifest,
    pub diagnostics: DiagnosticsReport,
    pub surface: Option<(SurfaceMesh, MeshQuality)>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.manifest.violations.total() == 0
    }
}

/// What [`execute`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outputs {
    pub strips: bool,
    pub manifest: bool,
}

impl Outputs {
    pub const ALL: Outputs = Outputs {
        strips: true,
        manifest: true,
    };
    pub const NONE: Outputs = Outputs {
        strips: false,
        manifest: false,
    };
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

fn weak_tests(cfg: &RunConfig) -> Vec<BumpTest> {
    BumpTest::family(0.0, 0.5 * cfg.half_width, cfg.horizon)
}

fn default_x_range(cfg: &RunConfig) -> (f64, f64) {
    cfg.reconstruction
        .x_range
        .unwrap_or((-0.5 * cfg.half_width, 0.5 * cfg.half_width))
}

/// Runs the configured problem and, with `out` given, writes its artifacts.
///
/// An invariant violation is reported as a runtime error after the
/// artifacts have been written.
pub fn execute(
    cfg: &RunConfig,
    out: Option<&Path>,
    outputs: Outputs,
) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let metric = prepared.metric.as_ref();
    let grid = prepared.grid;
    let mut files = Vec::new();

    let mut csv_sink = match (out, outputs.strips) {
        (Some(dir), true) => {
            let stride = cfg
                .csv_stride
                .unwrap_or_else(|| (grid.steps / CSV_TARGET_STRIPS).max(1));
            files.push("strips.csv".to_string());
            Some(StripCsvSink::create(&dir.join("strips.csv"), stride)?)
        }
        _ => None,
    };
    let mut region = RegionAudit::new();
    let mut separation = SeparationAudit::new();
    let mut entropy = cfg.diagnostics.then(EntropyAudit::new);
    let mut forms = cfg.diagnostics.then(|| FormsSink::new(metric));
    let mut weak = cfg
        .diagnostics
        .then(|| WeakResidualSink::new(weak_tests(cfg), &prepared.data, metric));
    let recon = &cfg.reconstruction;
    let mut sampler = (recon.enabled && recon.source == FormsSource::Run).then(|| {
        let xr = default_x_range(cfg);
        let nx = ((xr.1 - xr.0) / (2.0 * grid.l)).round() as usize + 1;
        let stride = ((2.0 * grid.l / grid.h).round() as usize).max(1);
        FormsSampler::new(xr, nx, stride)
    });

    let outcome = {
        let mut sinks: Vec<&mut dyn StripSink> = vec![&mut region, &mut separation];
        if let Some(s) = csv_sink.as_mut() {
            sinks.push(s);
        }
        if let Some(s) = entropy.as_mut() {
            sinks.push(s);
        }
        if let Some(s) = forms.as_mut() {
            sinks.push(s);
        }
        if let Some(s) = weak.as_mut() {
            sinks.push(s);
        }
        if let Some(s) = sampler.as_mut() {
            sinks.push(s);
        }
        scheme::run(
            prepared.initial.clone(),
            &grid,
            metric,
            prepared.ledger,
            &mut sinks,
        )?
    };
    if let (Some(sink), Some(dir)) = (csv_sink, out) {
        let path = dir.join("strips.csv");
        sink.finish().map_err(|e| PipelineError::io(&path, e))?;
    }

    let surface = if recon.enabled {
        let (mesh, quality) = match sampler {
            Some(sampler) => {
                let forms = sampler.finish(metric.expect("validated").clone())?;
                let smooth = forms.mollified(recon.mollify);
                let mut built = reconstruct_field(&smooth, cfg, forms.x_range(), forms.y_range())?;
                built.1.raw_gauss_residual = Some(forms.gauss_residual());
                built.1.mollified_gauss_residual = Some(smooth.gauss_residual());
                built
            }
            None => synthetic_surface(cfg, metric)?,
        };
        if let Some(dir) = out {
            export_mesh(&mesh, &quality, dir, &cfg.name)?;
            files.push(format!("{}.obj", cfg.name));
            files.push(format!("{}.quality.json", cfg.name));
        }
        Some((mesh, quality))
    } else {
        None
    };

    let violations = ViolationCounters {
        region_upper: region.upper_violations,
        region_sign: region.sign_violations,
        region_floor: region.floor_violations,
        momentum: region.momentum_violations,
        separation: separation.violations,
        entropy: entropy.as_ref().map_or(0, |e| e.violations),
    };
    let ledger = outcome.ledger;
    let entropy_summary = entropy.as_ref().map(|e| {
        let totals: Vec<f64> = e.records.iter().map(|r| r.total_eta).collect();
        EntropySummary {
            contacts: e.contacts,
            min_production: e.min_production,
            violations: e.violations,
            averaging_dissipation: e.qv_sum,
            initial_total: totals.first().copied().unwrap_or(f64::NAN),
            final_total: totals.last().copied().unwrap_or(f64::NAN),
            max_total: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    });
    let weak_residuals = weak.map(WeakResidualSink::finish).transpose()?;
    let diagnostics = DiagnosticsReport {
        region,
        separation: SeparationSummary {
            d0_min: separation.d0_min(),
            floor: ledger.separation_floor(grid.l),
            violations: separation.violations,
        },
        entropy: entropy_summary,
        forms: forms.map(|f| f.audit),
        weak_residuals,
        metric: prepared.admissibility.clone(),
    };
    if out.is_some() && outputs.manifest {
        files.push("diagnostics.json".into());
        files.push("manifest.json".into());
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION"),
        status: if violations.total() == 0 {
            "ok"
        } else {
            "invariant-violation"
        },
        config: cfg.clone(),
        metric: metric.map(|m| m.provenance().clone()),
        grid: GridSummary {
            l: grid.l,
            h: grid.h,
            h0: grid.h0,
            steps: grid.steps,
            half_cells: grid.half_cells,
            lambda: grid.lambda,
            cfl_ratio: grid.cfl_ratio(),
            metric_dt: metric.map(MetricProfile::dt),
        },
        bounds: BoundsSummary {
            branch: ledger.branch,
            delta0: ledger.delta0,
            p0: ledger.p0,
            p_t: ledger.p_t,
            a_t: ledger.a_t,
            floor: ledger.floor,
            floor_discrete: ledger.floor_discrete,
            separation_floor: ledger.separation_floor(grid.l),
            guard_min: ledger.guard_min,
            guard_max: ledger.guard_max,
            guard_evaluations: ledger.guard_evaluations,
        },
        entropy_budget: prepared.entropy_budget,
        violations,
        wall_seconds: start.elapsed().as_secs_f64(),
        files,
    };
    if let (Some(dir), true) = (out, outputs.manifest) {
        write_json(&dir.join("diagnostics.json"), &diagnostics)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    let report = RunReport {
        prepared,
        final_strip: outcome.final_strip,
        ledger,
        manifest,
        diagnostics,
        surface,
    };
    if !report.passed() {
        return Err(PipelineError::Runtime {
            message: format!(
                "{} invariant violations; see diagnostics.json",
                report.manifest.violations.total()
            ),
            detail: serde_json::to_value(&report.manifest.violations).unwrap_or(Value::Null),
        });
    }
    Ok(report)
}

fn reconstruct_field(
    field: &dyn FormsField,
    cfg: &RunConfig,
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Result<(SurfaceMesh, MeshQuality), PipelineError> {
    let r = &cfg.reconstruction;
    let grid = ReconstructionGrid {
        x_range,
        y_range,
        nx: r.nx,
        ny: r.ny,
        base: (r.nx / 2, r.ny / 2),
        substeps: r.substeps,
        marching: r.marching,
    };
    let mesh = immersion::reconstruct(field, &grid)?;
    let other = ReconstructionGrid {
        marching: match r.marching {
            Marching::YThenX => Marching::XThenY,
            Marching::XThenY => Marching::YThenX,
        },
        ..grid
    };
    let alt = immersion::reconstruct(field, &other)?;
    let mut quality = assess(&mesh, field)?;
    quality.marching_discrepancy = Some(immersion::marching_discrepancy(&mesh, &alt));
    Ok((mesh, quality))
}

fn synthetic_surface(
    cfg: &RunConfig,
    metric: Option<&MetricProfile>,
) -> Result<(SurfaceMesh, MeshQuality), PipelineError> {
    let metric = match metric {
        Some(m) => m.clone(),
        None => admitted_metric(cfg, PROVISIONAL_DT)?.0,
    };
    let field = ProfileForms::new(metric, cfg.reconstruction.twist);
    reconstruct_field(&field, cfg, default_x_range(cfg), (-cfg.horizon, 0.0))
}

/// Reconstruction only: synthetic forms skip the scheme entirely.
pub fn reconstruct_only(
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<(SurfaceMesh, MeshQuality), PipelineError> {
    let mut cfg = cfg.clone();
    cfg.reconstruction.enabled = true;
    cfg.validate()?;
    match cfg.reconstruction.source {
        FormsSource::Synthetic => {
            let built = synthetic_surface(&cfg, None)?;
            if let Some(dir) = out {
                export_mesh(&built.0, &built.1, dir, &cfg.name)?;
            }
            Ok(built)
        }
        FormsSource::Run => {
            let report = execute(&cfg, out, Outputs::NONE)?;
            Ok(report.surface.expect("reconstruction enabled"))
        }
    }
}

/// Metric admissibility report without running the scheme.
#[derive(Debug, Clone, Serialize)]
pub struct MetricCheck {
    pub provenance: Provenance,
    pub horizon: f64,
    pub dt: f64,
    pub k_max: f64,
    pub b_range: (f64, f64),
    pub report: AdmissibilityReport,
}

pub fn check_metric(cfg: &RunConfig) -> Result<MetricCheck, PipelineError> {
    let metric = cfg.build_metric(PROVISIONAL_DT)?;
    let report = check_admissibility(&metric);
    let b_range = metric
        .samples()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.b), hi.max(s.b))
        });
    Ok(MetricCheck {
        provenance: metric.provenance().clone(),
        horizon: metric.horizon(),
        dt: metric.dt(),
        k_max: metric.k_max(),
        b_range,
        report,
    })
}

/// Refinement study over `levels` halvings of `l`.
pub fn converge(
    cfg: &RunConfig,
    levels: usize,
    out: Option<&Path>,
) -> Result<ConvergenceTable, PipelineError> {
    let prepared = prepare(cfg)?;
    let window = cfg
        .window
        .unwrap_or((-0.5 * cfg.half_width, 0.5 * cfg.half_width));
    let table = diagnostics::convergence_study(
        &prepared.data,
        prepared.metric.as_ref(),
        &prepared.params(),
        levels,
        window,
    )?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join("convergence.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| PipelineError::io(&path, e))?;
        w.write_record(["l", "h", "strips", "cells", "error", "order", "seconds"])
            .map_err(|e| PipelineError::io(&path, e))?;
        for lv in &table.levels {
            w.write_record([
                lv.l.to_string(),
                lv.h.to_string(),
                lv.strips.to_string(),
                lv.cells.to_string(),
                lv.error.to_string(),
                lv.order.map_or(String::new(), |o| o.to_string()),
                lv.seconds.to_string(),
            ])
            .map_err(|e| PipelineError::io(&path, e))?;
        }
        w.flush().map_err(|e| PipelineError::io(&path, e))?;
        write_json(&dir.join("convergence.json"), &table)?;
    }
    Ok(table)
}

/// Writes a machine-readable error report next to the other artifacts.
pub fn write_error_report(dir: &Path, err: &PipelineError) {
    if fs::create_dir_all(dir).is_ok() {
        if let Ok(mut f) = File::create(dir.join("error.json")) {
            let _ = writeln!(
                f,
                "{}",
                serde_json::to_string_pretty(&err.report()).unwrap_or_default()
            );
        }
    }
}

pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("out").join(&cfg.name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use serde_json::json;

    fn cfg(doc: Value) -> RunConfig {
        RunConfig::from_value(doc, Path::new(".")).unwrap()
    }

    #[test]
    fn riemann_demo_runs_clean() {
        let c = cfg(json!({"preset": "riemann-demo", "l": 0.05}));
        let r = execute(&c, None, Outputs::NONE).unwrap();
        assert!(r.passed());
        let g = &r.manifest.grid;
        assert!(g.h <= g.h0 && r.manifest.bounds.p_t < g.cfl_ratio && g.cfl_ratio <= g.lambda);
        assert!(r.manifest.bounds.guard_min >= 0.5 && r.manifest.bounds.guard_max <= 1.5);
        assert_eq!(r.diagnostics.weak_residuals.as_ref().unwrap().len(), 5);
        assert!(g.metric_dt.unwrap() <= g.h / 10.0 + 1e-15);
    }

    #[test]
    fn artifacts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(json!({"preset": "riemann-demo", "l": 0.05}));
        execute(&c, Some(dir.path()), Outputs::ALL).unwrap();
        let manifest: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        for key in ["h", "h0", "cfl_ratio"] {
            assert!(manifest["grid"][key].is_number(), "{key}");
        }
        for key in ["p_t", "a_t", "floor", "separation_floor"] {
            assert!(manifest["bounds"][key].is_number(), "{key}");
        }
        let csv = fs::read_to_string(dir.path().join("strips.csv")).unwrap();
        assert!(csv.starts_with("t,j,x,rho,m,w,z\n"));
        assert!(dir.path().join("diagnostics.json").exists());
    }

    #[test]
    fn forced_step_is_a_runtime_error() {
        let c = cfg(json!({"preset": "paper-example-metric", "inject": {"h_factor": 2.0}}));
        let e = execute(&c, None, Outputs::NONE).err().unwrap();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn inadmissible_metric_is_a_validation_error() {
        let c = cfg(
            json!({"preset": "constant-a-metric", "metric": {"kind": "constant-a", "a": -1.0}}),
        );
        let e = execute(&c, None, Outputs::NONE).err().unwrap();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(check_metric(&c).err().unwrap().exit_code(), 2);
        let ok = cfg(json!({"preset": "constant-a-metric"}));
        assert!(check_metric(&ok).unwrap().report.verdict);
    }

    #[test]
    fn entropy_budget_is_enforced() {
        let c = cfg(json!({"preset": "riemann-demo", "c0": 1e-3}));
        assert_eq!(prepare(&c).err().unwrap().exit_code(), 2);
        let c = cfg(json!({"preset": "riemann-demo", "c0": 100.0}));
        let p = prepare(&c).unwrap();
        assert!(p.entropy_budget.within);
    }

    #[test]
    fn hypothesis_failure_is_a_validation_error() {
        let c = cfg(json!({"preset": "region-test", "bounds": {"delta0": 0.5, "p0": 1.0}}));
        assert_eq!(prepare(&c).err().unwrap().exit_code(), 2);
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let c = cfg(json!({"preset": "riemann-demo", "l": 0.05}));
        let e = execute(&c, Some(&blocker.join("sub")), Outputs::ALL)
            .err()
            .unwrap();
        assert_eq!(e.exit_code(), 4);
    }
}
