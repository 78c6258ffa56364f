//! Command-line entry points.
//!
//! Failures print one JSON object per line on stderr,
//! `{"error":"<kind>","message":"..."}`, and exit nonzero: 2 for usage and
//! configuration errors, 1 for everything else.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::evaluation::{
    aggregate_participants, depth_combination_sweep, fit_mapper, pool_participants, ErrorRecord,
    Experiment, SweepResult,
};
use crate::io::{export_results_csv, load_dataset, load_models, save_models, Dataset, SavedModel};
use crate::mappers::MapperKind;
use crate::observation::DepthKey;
use crate::selftest;

#[derive(Debug, Parser)]
#[command(
    name = "gaze3d",
    version,
    about = "3D gaze estimation mappers and parallax-error experiments"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; defaults to the matching path in the config's [output] table.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated subset of 2d2d,2d3d,3d3d.
    #[arg(long, global = true, value_delimiter = ',')]
    mappers: Option<Vec<MapperKind>>,
    /// Comma-separated depths in meters. Simulation depths, or the calibration
    /// depths to keep when reading a dataset.
    #[arg(long, global = true, value_delimiter = ',')]
    depths: Option<Vec<f64>>,
    /// Pupil-center noise sigma (px).
    #[arg(long = "noise-px", global = true)]
    noise_px: Option<f64>,
    /// Pupil-pose angular noise sigma (deg).
    #[arg(long = "noise-deg", global = true)]
    noise_deg: Option<f64>,
    /// Target position noise sigma (mm).
    #[arg(long = "noise-target-mm", global = true)]
    noise_target_mm: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a dataset from the configured rig.
    Simulate,
    /// Fit the selected mappers on a dataset's calibration records.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score saved models on a dataset's test records and write CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Every calibration-depth subset against every test depth, written as CSV.
    /// Without --dataset the configured rig is simulated; several datasets are
    /// treated as participants.
    Sweep {
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "config" => 2,
            _ => 1,
        }
    }

    /// Single-line JSON rendering.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::new("usage", first.trim_start_matches("error: "));
            let _ = writeln!(stderr, "{}", err.line());
            return err.exit_code();
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.line());
            err.exit_code()
        }
    }
}

fn config_for(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| CliError::new("config", e))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mappers) = &cli.mappers {
        cfg.mappers = mappers.clone();
    }
    if let Some(depths) = &cli.depths {
        cfg.depths = depths.clone();
    }
    if let Some(v) = cli.noise_px {
        cfg.noise.pupil_px = v;
    }
    if let Some(v) = cli.noise_deg {
        cfg.noise.pupil_pose_deg = v;
    }
    if let Some(v) = cli.noise_target_mm {
        cfg.noise.target_mm = v;
    }
    cfg.validate().map_err(|e| CliError::new("config", e))?;
    Ok(cfg)
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::new("io", e)
}

/// Refuses to write over any input file.
fn output_path(out: PathBuf, inputs: &[&Path]) -> Result<PathBuf, CliError> {
    let resolved = std::fs::canonicalize(&out).ok();
    for input in inputs {
        if resolved.is_some() && resolved == std::fs::canonicalize(input).ok() {
            return Err(CliError::new(
                "usage",
                format!("output {} would overwrite an input file", out.display()),
            ));
        }
    }
    Ok(out)
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| CliError::new("dataset", format!("{}: {e}", path.display())))
}

/// Experiment from a dataset, keeping only calibration records at `depths` when given.
fn experiment_for(dataset: &Dataset, depths: Option<&[f64]>) -> Result<Experiment, CliError> {
    let mut exp = dataset
        .experiment()
        .map_err(|e| CliError::new("dataset", e))?;
    if let Some(depths) = depths {
        let keep: BTreeSet<DepthKey> = depths.iter().map(|d| DepthKey::from_meters(*d)).collect();
        exp.calibration.retain(|o| keep.contains(&o.depth_key()));
        if exp.calibration.is_empty() {
            return Err(CliError::new(
                "dataset",
                "no calibration records at the requested depths",
            ));
        }
    }
    Ok(exp)
}

fn warn_missing_poses(dataset: &Dataset, mappers: &[MapperKind], stderr: &mut dyn Write) {
    let missing = dataset.missing_pose_count();
    if missing > 0 && mappers.contains(&MapperKind::ThreeDToThreeD) {
        let _ = writeln!(
            stderr,
            "warning: {missing} calibration records have no pupil_pose and are excluded from 3d3d"
        );
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = config_for(&cli)?;
    let out = cli.out.clone();
    match &cli.command {
        Command::Simulate => {
            let path = output_path(out.unwrap_or(cfg.output.dataset.clone()), &[])?;
            let dataset = cfg.simulate().map_err(|e| CliError::new("simulation", e))?;
            dataset.save(&path).map_err(|e| CliError::new("io", e))?;
            writeln!(
                stdout,
                "wrote {} records to {}",
                dataset.records.len(),
                path.display()
            )
            .map_err(io_err)?;
        }
        Command::Fit { dataset: input } => {
            let path = output_path(out.unwrap_or(cfg.output.model.clone()), &[input])?;
            let dataset = load(input)?;
            warn_missing_poses(&dataset, &cfg.mappers, stderr);
            let exp = experiment_for(&dataset, cli.depths.as_deref())?;
            let depths = exp.calibration_depths();
            let mut models = Vec::new();
            for &kind in &cfg.mappers {
                let fit = fit_mapper(
                    kind,
                    &exp.calibration,
                    &exp.scene_camera,
                    exp.normalizer,
                    &cfg.fit,
                )
                .map_err(|e| CliError::new("fit", format!("{kind}: {e}")))?;
                match &fit.report {
                    Some(r) => writeln!(
                        stdout,
                        "{kind}: cost {:e} after {} iterations ({:?})",
                        r.cost, r.iterations, r.termination
                    ),
                    None => writeln!(stdout, "{kind}: linear least squares"),
                }
                .map_err(io_err)?;
                models.push(SavedModel {
                    model: fit.model,
                    calibration_depths: depths.clone(),
                });
            }
            save_models(&models, &path).map_err(|e| CliError::new("io", e))?;
            writeln!(
                stdout,
                "wrote {} models to {}",
                models.len(),
                path.display()
            )
            .map_err(io_err)?;
        }
        Command::Evaluate {
            model,
            dataset: input,
        } => {
            let path = output_path(out.unwrap_or(cfg.output.results.clone()), &[model, input])?;
            let models = load_models(model).map_err(|e| CliError::new("model", e))?;
            let dataset = load(input)?;
            let exp = dataset
                .experiment()
                .map_err(|e| CliError::new("dataset", e))?;
            let mut records = Vec::new();
            for saved in &models {
                for depth in exp.test_depths() {
                    records.push(ErrorRecord {
                        mapper: saved.model.kind(),
                        calibration_depths: saved.calibration_depths.clone(),
                        test_depth: depth,
                        outcome: exp
                            .evaluate_at(&saved.model, depth)
                            .map_err(|e| e.to_string()),
                    });
                }
            }
            let result = SweepResult::from_records(records);
            write_summary(&result, stdout).map_err(io_err)?;
            export_results_csv(&result, &path).map_err(|e| CliError::new("io", e))?;
        }
        Command::Sweep { datasets } => {
            let inputs: Vec<&Path> = datasets.iter().map(PathBuf::as_path).collect();
            let path = output_path(out.unwrap_or(cfg.output.results.clone()), &inputs)?;
            let experiments = if datasets.is_empty() {
                let dataset = cfg.simulate().map_err(|e| CliError::new("simulation", e))?;
                vec![experiment_for(&dataset, None)?]
            } else {
                datasets
                    .iter()
                    .map(|p| {
                        let dataset = load(p)?;
                        warn_missing_poses(&dataset, &cfg.mappers, stderr);
                        experiment_for(&dataset, cli.depths.as_deref())
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            let sweeps: Vec<SweepResult> = experiments
                .iter()
                .map(|exp| {
                    let n = exp.calibration_depths().len();
                    depth_combination_sweep(exp, &cfg.mappers, 1..=n, &cfg.fit)
                })
                .collect();
            let result = if sweeps.len() == 1 {
                sweeps[0].clone()
            } else {
                for a in aggregate_participants(&sweeps) {
                    writeln!(
                        stdout,
                        "participants mapper={} k={} sample_weighted_mean_deg={:.4} participant_weighted_mean_deg={:.4} n={}",
                        a.mapper, a.k, a.sample_weighted_mean, a.participant_weighted_mean, a.participants
                    )
                    .map_err(io_err)?;
                }
                pool_participants(&sweeps)
            };
            write_summary(&result, stdout).map_err(io_err)?;
            export_results_csv(&result, &path).map_err(|e| CliError::new("io", e))?;
        }
        Command::Selftest => {
            let checks = selftest::run_checks();
            for c in &checks {
                writeln!(
                    stdout,
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )
                .map_err(io_err)?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::new("selftest", format!("{failed} checks failed")));
            }
        }
    }
    Ok(())
}

fn write_summary(result: &SweepResult, out: &mut dyn Write) -> std::io::Result<()> {
    let keys: BTreeSet<(MapperKind, usize)> =
        result.records.iter().map(|r| (r.mapper, r.k())).collect();
    for (mapper, k) in keys {
        let failed = result
            .records_for(mapper, k)
            .filter(|r| r.outcome.is_err())
            .count();
        match result.pooled(mapper, k) {
            Some(s) => writeln!(
                out,
                "mapper={mapper} k={k} mean_deg={:.4} std_deg={:.4} failed={failed}",
                s.mean, s.std
            )?,
            None => writeln!(out, "mapper={mapper} k={k} failed={failed}")?,
        }
    }
    Ok(())
}
