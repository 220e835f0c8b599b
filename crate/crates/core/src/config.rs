//! Run configuration: a single JSON document, optionally layered over a
//! named preset. Paths inside the document are relative to its directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::immersion::Marching;
use crate::initial::InitialData;
use crate::metric::{
    constant_a_profile, paper_example_profile, parse_k_table, user_k_profile, MetricError,
    MetricProfile,
};
use crate::scheme::DEFAULT_LAMBDA;
use crate::state::{Invariants, State};

pub const PRESETS: [&str; 6] = [
    "riemann-demo",
    "smooth-sine",
    "region-test",
    "paper-example-metric",
    "constant-a-metric",
    "user-k-metric",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricSpec {
    PaperExample,
    ConstantA {
        a: f64,
        #[serde(default = "one")]
        k0: f64,
    },
    /// `(y, k)` pairs, inline or from a CSV file.
    UserK {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        rows: Option<Vec<(f64, f64)>>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Rows `(x_start, rho, m)`; the first state extends to the left.
    Table { rows: Vec<(f64, f64, f64)> },
    /// Rows `(x_start, w, z)` in Riemann invariants.
    InvariantTable { rows: Vec<(f64, f64, f64)> },
    /// CSV with columns `x, rho, m`.
    TableFile { path: PathBuf },
    /// Built-in closed-form profile.
    Named { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub delta0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormsSource {
    Run,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_source")]
    pub source: FormsSource,
    #[serde(default = "default_vertices")]
    pub nx: usize,
    #[serde(default = "default_vertices")]
    pub ny: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Defaults to half the truncation domain.
    #[serde(default)]
    pub x_range: Option<(f64, f64)>,
    /// Box-filter width in samples for scheme output.
    #[serde(default = "default_mollify")]
    pub mollify: usize,
    /// `M B^2` of the synthetic forms.
    #[serde(default = "default_twist")]
    pub twist: f64,
    #[serde(default = "default_marching")]
    pub marching: Marching,
}

fn default_source() -> FormsSource {
    FormsSource::Run
}
fn default_vertices() -> usize {
    41
}
fn default_substeps() -> usize {
    2
}
fn default_mollify() -> usize {
    3
}
fn default_twist() -> f64 {
    0.4
}
fn default_marching() -> Marching {
    Marching::YThenX
}

impl Default for ReconstructionSpec {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSpec {
    /// Forces `h = h_factor * h0`, bypassing validation.
    pub h_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub metric: MetricSpec,
    pub initial: InitialSpec,
    pub horizon: f64,
    pub l: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub half_width: f64,
    #[serde(default)]
    pub bounds: Option<BoundsSpec>,
    /// Bound on `int (m0^2 + 1)/(2 rho0) dx`.
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub zero_source: bool,
    #[serde(default = "yes")]
    pub diagnostics: bool,
    #[serde(default)]
    pub reconstruction: ReconstructionSpec,
    /// Write every `csv_stride`-th strip; chosen automatically when absent.
    #[serde(default)]
    pub csv_stride: Option<usize>,
    /// `L1` window for convergence studies; half the domain when absent.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default)]
    pub inject: Option<InjectSpec>,
    /// Directory against which relative paths resolve.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "run".into()
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

fn region_rows() -> Value {
    json!([
        [-10.0, 1.0, -0.1],
        [-0.6, 0.1, -1.0],
        [-0.2, 0.6, -0.5],
        [0.3, 0.1, -0.2],
        [0.7, 0.8, -0.9]
    ])
}

/// JSON of a named preset.
pub fn preset(name: &str) -> Option<Value> {
    let user_k: Vec<(f64, f64)> = (0..=20)
        .map(|i| {
            let y = -1.0 + 0.05 * i as f64;
            (y, (2.0 * y).exp())
        })
        .collect();
    let v = match name {
        "riemann-demo" => json!({
            "name": "riemann-demo",
            "metric": {"kind": "paper-example"},
            "initial": {"kind": "table", "rows": [[-10.0, 1.0, 0.0], [0.0, 2.0, 0.0]]},
            "horizon": 0.5, "l": 0.02, "half_width": 2.0
        }),
        "smooth-sine" => json!({
            "name": "smooth-sine",
            "metric": {"kind": "paper-example"},
            "initial": {"kind": "named", "name": "smooth-sine"},
            "horizon": 0.5, "l": 0.02, "half_width": 2.0,
            "zero_source": true
        }),
        "region-test" | "paper-example-metric" => json!({
            "name": name,
            "metric": {"kind": "paper-example"},
            "initial": {"kind": "invariant-table", "rows": region_rows()},
            "bounds": {"delta0": 0.1, "p0": 1.0},
            "horizon": 1.0, "l": 0.02, "half_width": 2.0
        }),
        "constant-a-metric" => json!({
            "name": "constant-a-metric",
            "metric": {"kind": "constant-a", "a": -3.0, "k0": 1.0},
            "initial": {"kind": "invariant-table", "rows": region_rows()},
            "bounds": {"delta0": 0.1, "p0": 1.0},
            "horizon": 1.0, "l": 0.02, "half_width": 2.0
        }),
        "user-k-metric" => json!({
            "name": "user-k-metric",
            "metric": {"kind": "user-k", "rows": user_k},
            "initial": {"kind": "invariant-table", "rows": region_rows()},
            "bounds": {"delta0": 0.1, "p0": 1.0},
            "horizon": 1.0, "l": 0.02, "half_width": 2.0
        }),
        _ => return None,
    };
    Some(v)
}

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot)
                        if slot.is_object() && v.is_object() && k != "metric" && k != "initial" =>
                    {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

impl RunConfig {
    /// Parses a document; a `"preset"` key selects the base layer.
    pub fn from_value(mut doc: Value, base_dir: &Path) -> Result<Self, ConfigError> {
        let preset_name = match doc.as_object_mut().and_then(|o| o.remove("preset")) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(err("preset", "must be a string")),
        };
        let merged = match preset_name {
            Some(name) => {
                let mut base = preset(&name).ok_or_else(|| {
                    err(
                        "preset",
                        format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")),
                    )
                })?;
                merge(&mut base, doc);
                base
            }
            None => doc,
        };
        let mut cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| err("config", e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_value(json!({ "preset": name }), Path::new("."))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| err("config", format!("cannot read {}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| err("config", e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_value(doc, &base)
    }

    /// Field-level checks that need no metric or data evaluation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(err(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("horizon", self.horizon)?;
        positive("l", self.l)?;
        positive("lambda", self.lambda)?;
        positive("half_width", self.half_width)?;
        if self.l > self.half_width {
            return Err(err("l", "mesh size exceeds the domain half-width"));
        }
        if let Some(b) = self.bounds {
            positive("bounds.delta0", b.delta0)?;
            positive("bounds.p0", b.p0)?;
            if b.delta0 > b.p0 {
                return Err(err("bounds", "need delta0 <= p0"));
            }
        }
        if let Some(c0) = self.c0 {
            positive("c0", c0)?;
        }
        if let Some(inj) = self.inject {
            positive("inject.h_factor", inj.h_factor)?;
        }
        if let Some(s) = self.csv_stride {
            if s == 0 {
                return Err(err("csv_stride", "must be at least 1"));
            }
        }
        if let Some((a, b)) = self.window {
            if !(b > a) {
                return Err(err("window", "must be an increasing pair"));
            }
        }
        match &self.metric {
            MetricSpec::ConstantA { a, k0 } => {
                if !a.is_finite() {
                    return Err(err("metric.a", "must be finite"));
                }
                positive("metric.k0", *k0)?;
            }
            MetricSpec::UserK { path, rows } => {
                if path.is_some() == rows.is_some() {
                    return Err(err("metric", "user-k needs exactly one of path or rows"));
                }
                if rows.as_ref().is_some_and(|r| r.len() < 2) {
                    return Err(err("metric.rows", "need at least two (y, k) rows"));
                }
            }
            MetricSpec::PaperExample => {}
        }
        if let InitialSpec::Named { name } = &self.initial {
            if named_profile(name).is_none() {
                return Err(err(
                    "initial.name",
                    format!("unknown profile {name:?}; known: smooth-sine, smooth-bump"),
                ));
            }
        }
        let r = &self.reconstruction;
        if r.enabled {
            if r.nx < 3 || r.ny < 3 || r.substeps == 0 || r.mollify == 0 {
                return Err(err(
                    "reconstruction",
                    "need nx, ny >= 3 and substeps, mollify >= 1",
                ));
            }
            if self.zero_source && r.source == FormsSource::Run {
                return Err(err(
                    "reconstruction",
                    "scheme output of a zero-source run carries no metric to reconstruct on",
                ));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Builds the metric profile at sampling step `dt`.
    pub fn build_metric(&self, dt: f64) -> Result<MetricProfile, MetricError> {
        match &self.metric {
            MetricSpec::PaperExample => paper_example_profile(self.horizon, dt),
            MetricSpec::ConstantA { a, k0 } => constant_a_profile(*a, *k0, self.horizon, dt),
            MetricSpec::UserK { path, rows } => {
                let (table, source) = match (path, rows) {
                    (Some(p), _) => {
                        let full = self.resolve(p);
                        let text = fs::read_to_string(&full).map_err(|e| {
                            MetricError::Table(format!("cannot read {}: {e}", full.display()))
                        })?;
                        (parse_k_table(&text)?, full.display().to_string())
                    }
                    (None, Some(r)) => {
                        let mut t = r.clone();
                        t.sort_by(|a, b| a.0.total_cmp(&b.0));
                        (t, "inline".to_string())
                    }
                    (None, None) => return Err(MetricError::Table("no table given".into())),
                };
                user_k_profile(&table, self.horizon, dt, &source)
            }
        }
    }

    pub fn build_initial(&self) -> Result<InitialData, ConfigError> {
        let rows_to_data = |rows: Vec<(f64, State)>| {
            InitialData::from_rows(&rows).map_err(|m| err("initial.rows", m))
        };
        match &self.initial {
            InitialSpec::Table { rows } => rows_to_data(
                rows.iter()
                    .map(|&(x, r, m)| (x, State::new(r, m)))
                    .collect(),
            ),
            InitialSpec::InvariantTable { rows } => {
                let states = rows
                    .iter()
                    .map(|&(x, w, z)| {
                        Invariants::new(w, z)
                            .to_state()
                            .map(|u| (x, u))
                            .map_err(|e| err("initial.rows", format!("x = {x}: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                rows_to_data(states)
            }
            InitialSpec::TableFile { path } => {
                let full = self.resolve(path);
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(false)
                    .comment(Some(b'#'))
                    .trim(csv::Trim::All)
                    .from_path(&full)
                    .map_err(|e| err("initial.path", format!("{}: {e}", full.display())))?;
                let mut rows = Vec::new();
                for (i, rec) in reader.records().enumerate() {
                    let rec = rec.map_err(|e| err("initial.path", e.to_string()))?;
                    let nums: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
                    match nums {
                        Ok(v) if v.len() == 3 => rows.push((v[0], State::new(v[1], v[2]))),
                        Ok(_) => {
                            return Err(err(
                                "initial.path",
                                format!("row {}: need x, rho, m", i + 1),
                            ))
                        }
                        Err(_) if i == 0 => continue,
                        Err(e) => return Err(err("initial.path", format!("row {}: {e}", i + 1))),
                    }
                }
                rows_to_data(rows)
            }
            InitialSpec::Named { name } => {
                named_profile(name).ok_or_else(|| err("initial.name", "unknown profile"))
            }
        }
    }
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(3)
    }
}

/// Built-in closed-form initial profiles.
pub fn named_profile(name: &str) -> Option<InitialData> {
    match name {
        "smooth-sine" => Some(InitialData::analytic("smooth-sine", (-1.0, 1.0), |x| {
            let s = (std::f64::consts::PI * x).sin();
            let c = (std::f64::consts::PI * x).cos();
            let taper = (1.0 + c) * 0.5;
            Invariants::new(0.6 + 0.25 * s * taper, -0.6 + 0.2 * s * taper)
                .to_state()
                .expect("w > z")
        })),
        "smooth-bump" => Some(InitialData::analytic("smooth-bump", (-1.0, 1.0), |x| {
            Invariants::new(0.6 + 0.3 * bump(x), -0.7 + 0.3 * bump(x - 0.2))
                .to_state()
                .expect("w > z")
        })),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let cfg = RunConfig::from_preset(name).unwrap();
            assert_eq!(cfg.name, name);
            cfg.build_initial().unwrap();
            cfg.build_metric(1e-2).unwrap();
        }
    }

    #[test]
    fn overrides_merge_onto_preset() {
        let cfg = RunConfig::from_value(
            json!({"preset": "riemann-demo", "l": 0.01, "reconstruction": {"enabled": true}}),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.l, 0.01);
        assert_eq!(cfg.horizon, 0.5);
        assert!(cfg.reconstruction.enabled);
        assert_eq!(cfg.reconstruction.nx, 41);

        let cfg = RunConfig::from_value(
            json!({"preset": "constant-a-metric", "metric": {"kind": "constant-a", "a": -1.0}}),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.metric, MetricSpec::ConstantA { a: -1.0, k0: 1.0 });
    }

    #[test]
    fn every_field_is_checked() {
        let bad = [
            json!({"preset": "riemann-demo", "l": -1.0}),
            json!({"preset": "riemann-demo", "horizon": 0.0}),
            json!({"preset": "riemann-demo", "bounds": {"delta0": 2.0, "p0": 1.0}}),
            json!({"preset": "riemann-demo", "unknown_field": 1}),
            json!({"preset": "nope"}),
            json!({"preset": "riemann-demo", "initial": {"kind": "named", "name": "nope"}}),
            json!({"preset": "riemann-demo", "metric": {"kind": "user-k"}}),
            json!({"preset": "riemann-demo", "csv_stride": 0}),
            json!({"preset": "riemann-demo", "zero_source": true, "reconstruction": {"enabled": true}}),
        ];
        for doc in bad {
            assert!(
                RunConfig::from_value(doc.clone(), Path::new(".")).is_err(),
                "{doc}"
            );
        }
    }

    #[test]
    fn table_file_is_read_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("u0.csv"), "x,rho,m\n-1,1,0\n0,2,0\n").unwrap();
        let cfg_path = dir.path().join("cfg.json");
        fs::write(
            &cfg_path,
            r#"{"preset": "riemann-demo", "initial": {"kind": "table-file", "path": "u0.csv"}}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        let data = cfg.build_initial().unwrap();
        assert_eq!(data.state_at(0.5), State::new(2.0, 0.0));
    }

    #[test]
    fn named_profiles_stay_in_region() {
        for name in ["smooth-sine", "smooth-bump"] {
            let d = named_profile(name).unwrap();
            for (_, iv) in d.scan_invariants(-2.0, 2.0).unwrap() {
                assert!(iv.w > 0.0 && iv.z < 0.0);
            }
        }
    }
}
