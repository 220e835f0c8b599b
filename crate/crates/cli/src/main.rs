use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gauss_codazzi::config::{RunConfig, PRESETS};
use gauss_codazzi::pipeline::{self, Outputs, PipelineError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gcsim", version, about = "Gauss-Codazzi strip solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance the configured problem to T and write strips and diagnostics.
    Run(Common),
    /// Refinement study over successive halvings of l.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Build the metric and report its admissibility.
    CheckMetric(Common),
    /// Reconstruct the surface and export an OBJ mesh.
    Reconstruct(Common),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset to start from.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to out/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop the source terms and run the homogeneous system.
    #[arg(long)]
    zero_source: bool,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::from_preset(name)?,
            (None, None) => {
                return Err(PipelineError::Validation {
                    message: format!("give --config or --preset ({})", PRESETS.join(", ")),
                    detail: serde_json::Value::Null,
                })
            }
        };
        if self.zero_source {
            cfg.zero_source = true;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| pipeline::default_out_dir(cfg))
    }
}

fn say(quiet: bool, value: serde_json::Value) {
    if !quiet {
        println!(
            "{}",
            serde_json::to_string_pretty(&value).unwrap_or_default()
        );
    }
}

fn fail(err: PipelineError, out: Option<&Path>) -> ExitCode {
    if let Some(dir) = out {
        pipeline::write_error_report(dir, &err);
    }
    eprintln!(
        "{}",
        serde_json::to_string_pretty(&err.report()).unwrap_or_default()
    );
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Run(c) | Command::CheckMetric(c) | Command::Reconstruct(c) => c,
        Command::Converge { common, .. } => common,
    };
    let cfg = match common.load() {
        Ok(cfg) => cfg,
        Err(e) => return fail(e, None),
    };
    let out = common.out_dir(&cfg);
    let quiet = common.quiet;

    let result = match &cli.command {
        Command::Run(_) => pipeline::execute(&cfg, Some(&out), Outputs::ALL).map(|r| {
            let m = &r.manifest;
            json!({
                "status": m.status,
                "out": out,
                "h": m.grid.h,
                "h0": m.grid.h0,
                "steps": m.grid.steps,
                "p_t": m.bounds.p_t,
                "a_t": m.bounds.a_t,
                "floor": m.bounds.floor,
                "wall_seconds": m.wall_seconds,
            })
        }),
        Command::Converge { levels, .. } => {
            pipeline::converge(&cfg, *levels, Some(&out)).map(|t| {
                json!({
                    "reference": t.reference,
                    "monotone": t.monotone(),
                    "orders": t.orders(),
                    "levels": t.levels,
                    "out": out,
                })
            })
        }
        Command::CheckMetric(_) => match pipeline::check_metric(&cfg) {
            Ok(check) if check.report.verdict => Ok(json!({ "admissible": true, "check": check })),
            Ok(check) => Err(PipelineError::Validation {
                message: format!(
                    "metric is not admissible: min (2B'/B + k'/k) = {:.6e}",
                    check.report.min_log_derivative
                ),
                detail: json!({ "admissible": false, "check": check }),
            }),
            Err(e) => Err(e),
        },
        Command::Reconstruct(_) => pipeline::reconstruct_only(&cfg, Some(&out))
            .map(|(_, q)| json!({ "out": out, "quality": q })),
        Command::Presets => unreachable!(),
    };
    match result {
        Ok(summary) => {
            say(quiet, summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let dir = matches!(cli.command, Command::Run(_) | Command::Converge { .. })
                .then_some(out.as_path());
            fail(e, dir)
        }
    }
}
