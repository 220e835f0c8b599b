use std::fs;
use std::path::Path;

use gauss_codazzi::config::{RunConfig, PRESETS};
use gauss_codazzi::diagnostics::Reference;
use gauss_codazzi::immersion::read_obj;
use gauss_codazzi::pipeline::{self, Outputs};
use serde_json::{json, Value};

fn cfg(doc: Value) -> RunConfig {
    RunConfig::from_value(doc, Path::new(".")).unwrap()
}

#[test]
fn every_preset_runs_without_violations() {
    for name in PRESETS {
        let report = pipeline::execute(&cfg(json!({ "preset": name })), None, Outputs::NONE)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(report.manifest.violations.total(), 0, "{name}");
        assert!(report.manifest.bounds.floor > 0.0);
    }
}

#[test]
fn constant_data_converges_with_zero_error() {
    let c = cfg(json!({
        "preset": "riemann-demo",
        "zero_source": true,
        "initial": {"kind": "table", "rows": [[-10.0, 1.5, 0.2]]}
    }));
    let table = pipeline::converge(&c, 3, None).unwrap();
    assert_eq!(table.reference, Reference::ExactOracle);
    for lv in &table.levels {
        assert!(lv.error < 1e-12, "{}", lv.error);
    }
}

#[test]
fn smooth_zero_source_preset_reaches_first_order() {
    let table = pipeline::converge(&cfg(json!({"preset": "smooth-sine"})), 3, None).unwrap();
    for order in table.orders() {
        assert!(order >= 0.8, "{:?}", table.orders());
    }
}

#[test]
fn sourced_preset_self_converges_monotonically() {
    let table = pipeline::converge(&cfg(json!({"preset": "riemann-demo"})), 4, None).unwrap();
    assert_eq!(table.reference, Reference::FinestGrid);
    assert!(table.monotone(), "{:?}", table.levels);
}

#[test]
fn convergence_artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::converge(&cfg(json!({"preset": "smooth-sine"})), 3, Some(dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("convergence.json")).unwrap())
            .unwrap();
    assert_eq!(summary["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn surface_exports_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(json!({
        "preset": "constant-a-metric",
        "reconstruction": {"source": "synthetic", "nx": 9, "ny": 7}
    }));
    let (mesh, quality) = pipeline::reconstruct_only(&c, Some(dir.path())).unwrap();
    let obj = read_obj(&dir.path().join("constant-a-metric.obj")).unwrap();
    assert_eq!(obj.vertices.len(), 63);
    assert_eq!(obj.faces.len(), quality.faces);
    for (a, b) in obj.vertices.iter().zip(&mesh.positions) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-7 * b[k].abs().max(1.0));
        }
    }
    assert!(quality.marching_discrepancy.unwrap() < 1e-4);
    assert!(dir.path().join("constant-a-metric.quality.json").exists());
}

#[test]
fn user_curvature_table_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..=20)
        .map(|i| {
            let y = -1.0 + 0.05 * i as f64;
            format!("{y},{}\n", (2.0 * y).exp())
        })
        .collect();
    fs::write(dir.path().join("k.csv"), format!("y,k\n{rows}")).unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"preset": "user-k-metric", "metric": {"kind": "user-k", "path": "k.csv"}}"#,
    )
    .unwrap();
    let from_file =
        pipeline::execute(&RunConfig::load(&path).unwrap(), None, Outputs::NONE).unwrap();
    let inline = pipeline::execute(
        &cfg(json!({"preset": "user-k-metric"})),
        None,
        Outputs::NONE,
    )
    .unwrap();
    assert_eq!(from_file.final_strip.averages, inline.final_strip.averages);
}

#[test]
fn zero_source_mode_keeps_speed_bound() {
    let report = pipeline::execute(
        &cfg(json!({"preset": "region-test", "zero_source": true})),
        None,
        Outputs::NONE,
    )
    .unwrap();
    let b = &report.manifest.bounds;
    assert_eq!(b.p_t, b.p0);
    assert_eq!(b.a_t, 0.0);
    assert_eq!(b.floor, b.delta0);
}
