//! The four batch commands: simulate, track, evaluate, montecarlo.
//!
//! File formats: JSON for configs, scenarios, and estimates; CSV with the
//! header `step,total,localization,missed,false` for per-step metrics.
//! Wall-clock runtimes are reported on stdout and in the JSON record only,
//! so every CSV is byte-identical across repeated invocations.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use eot::metrics::GospaResult;
use eot::sim::{generate_ground_truth, generate_measurement_sets, GroundTruth};
use eot::types::{Measurement, ModelParams, ObjectState};

use crate::config::{ConfigError, GospaSettings, RunConfig};
use crate::runner::{self, run_means, MonteCarloOutput, StepOutput};

pub type CmdResult<T> = Result<T, ConfigError>;

fn err(msg: String) -> ConfigError {
    ConfigError(msg)
}

/// Scenario file: the generating configuration, the ground truth, and the
/// synthesized scans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario: eot::sim::ScenarioConfig,
    pub model: ModelParams,
    pub truth: GroundTruth,
    pub scans: Vec<Vec<Measurement>>,
}

/// Estimates file: per-step extracted states plus existence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatesFile {
    pub steps: Vec<StepOutput>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult<()> {
    let text = serde_json::to_string(value).map_err(|e| err(format!("serialize: {e}")))?;
    std::fs::write(path, text).map_err(|e| err(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| err(format!("malformed {}: {e}", path.display())))
}

/// Generates the ground truth and scans for the configured scenario and
/// writes them as one JSON file. Deterministic given the scenario seed.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CmdResult<()> {
    cfg.validate().map_err(|e| err(format!("invalid config: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
    let truth = generate_ground_truth(&cfg.scenario, &cfg.model, &mut rng)
        .map_err(|e| err(format!("simulate: {e}")))?;
    let scans = generate_measurement_sets(&truth, &cfg.model, &mut rng);
    log::info!(
        "simulated {} steps, {} objects, {} measurements",
        truth.horizon,
        truth.objects.len(),
        scans.iter().map(|s| s.len()).sum::<usize>()
    );
    write_json(&ScenarioFile { scenario: cfg.scenario.clone(), model: cfg.model.clone(), truth, scans }, out)
}

/// Runs the filter over a scenario file's scans and writes per-step
/// estimates. The seed drives the filter's proposals and resampling.
pub fn cmd_track(cfg: &RunConfig, scans_path: &Path, out: &Path, seed: u64) -> CmdResult<()> {
    cfg.validate().map_err(|e| err(format!("invalid config: {e}")))?;
    let scenario: ScenarioFile = read_json(scans_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = runner::run_filter(&scenario.scans, &cfg.filter_model(), &cfg.filter, &mut rng)
        .map_err(|e| err(format!("track failed at a scan update: {e}")))?;
    log::info!(
        "tracked {} steps, mean runtime {:.4} s/step",
        steps.len(),
        steps.iter().map(|s| s.elapsed_s).sum::<f64>() / steps.len().max(1) as f64
    );
    write_json(&EstimatesFile { steps }, out)
}

fn format_row(out: &mut String, label: &str, g: &GospaResult) {
    writeln!(out, "{label},{},{},{},{}", g.total, g.localization, g.missed, g.false_det).unwrap();
}

/// Renders per-step metric rows plus a trailing `mean` summary row.
pub fn metrics_csv(results: &[GospaResult]) -> String {
    let mut out = String::from("step,total,localization,missed,false\n");
    for (k, g) in results.iter().enumerate() {
        format_row(&mut out, &(k + 1).to_string(), g);
    }
    let n = results.len().max(1) as f64;
    let mean = GospaResult {
        total: results.iter().map(|g| g.total).sum::<f64>() / n,
        localization: results.iter().map(|g| g.localization).sum::<f64>() / n,
        missed: results.iter().map(|g| g.missed).sum::<f64>() / n,
        false_det: results.iter().map(|g| g.false_det).sum::<f64>() / n,
    };
    format_row(&mut out, "mean", &mean);
    out
}

/// Evaluates an estimates file against the truth in a scenario file and
/// writes the per-step metric CSV.
pub fn cmd_evaluate(
    truth_path: &Path,
    estimates_path: &Path,
    out: &Path,
    settings: &GospaSettings,
) -> CmdResult<()> {
    let scenario: ScenarioFile = read_json(truth_path)?;
    let estimates: EstimatesFile = read_json(estimates_path)?;
    if estimates.steps.len() != scenario.truth.horizon {
        return Err(err(format!(
            "step mismatch: {} estimate steps vs horizon {}",
            estimates.steps.len(),
            scenario.truth.horizon
        )));
    }
    let per_step: Vec<Vec<ObjectState>> =
        estimates.steps.iter().map(|s| s.estimates.clone()).collect();
    let results = runner::evaluate_steps(&scenario.truth, &per_step, settings)
        .map_err(|e| err(format!("evaluate: {e}")))?;
    std::fs::write(out, metrics_csv(&results))
        .map_err(|e| err(format!("cannot write {}: {e}", out.display())))
}

/// Runs the Monte-Carlo study and writes, under the output directory:
/// per-run metric CSVs (`run_XXX.csv`), the per-run summary
/// (`summary.csv`), and the full record including wall times
/// (`runresults.json`).
pub fn cmd_montecarlo(cfg: &RunConfig, out_dir: &Path, jobs: usize) -> CmdResult<MonteCarloOutput> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| err(format!("cannot create {}: {e}", out_dir.display())))?;
    let output = runner::run_montecarlo(cfg, jobs).map_err(|e| err(format!("montecarlo: {e}")))?;

    for record in &output.records {
        let path = out_dir.join(format!("run_{:03}.csv", record.run));
        std::fs::write(&path, metrics_csv(&record.gospa))
            .map_err(|e| err(format!("cannot write {}: {e}", path.display())))?;
    }

    let mut summary = String::from("run,total,localization,missed,false\n");
    for record in &output.records {
        if record.error.is_some() {
            continue;
        }
        format_row(&mut summary, &record.run.to_string(), &run_means(record));
    }
    format_row(
        &mut summary,
        "mean",
        &GospaResult {
            total: output.summary.total,
            localization: output.summary.localization,
            missed: output.summary.missed,
            false_det: output.summary.false_det,
        },
    );
    std::fs::write(out_dir.join("summary.csv"), summary)
        .map_err(|e| err(format!("cannot write summary.csv: {e}")))?;
    write_json(&output, &out_dir.join("runresults.json"))?;

    println!(
        "total {:.2}  localization {:.2}  missed {:.2}  false {:.2}  runtime {:.3} s/step  ({} runs, {} failed)",
        output.summary.total,
        output.summary.localization,
        output.summary.missed,
        output.summary.false_det,
        output.summary.runtime_s,
        output.summary.completed_runs,
        output.summary.failed_runs,
    );
    for record in &output.records {
        if let Some(e) = &record.error {
            log::warn!("run {} (seed {}) failed: {e}", record.run, record.seed);
        }
    }
    Ok(output)
}
