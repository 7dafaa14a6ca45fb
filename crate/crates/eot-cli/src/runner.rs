//! The filter loop and Monte-Carlo orchestration.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use eot::bp::{bp_update, extract_estimates, prune_components, resample_systematic, BpConfig, UpdateOptions};
use eot::metrics::{gospa, GospaResult};
use eot::predict::predict;
use eot::sim::{generate_ground_truth, generate_measurement_sets, GroundTruth};
use eot::types::{Measurement, ModelParams, ObjectState, PmbDensity};

use crate::config::{FilterSettings, GospaSettings, RunConfig};

/// Output of one filter step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutput {
    pub step: usize,
    pub estimates: Vec<ObjectState>,
    /// Existence probabilities of the surviving components.
    pub existences: Vec<f64>,
    /// Wall time of predict + update + prune + resample + extract (s).
    pub elapsed_s: f64,
}

/// Runs the full loop (predict, update, prune, resample, extract) over a
/// scan sequence.
pub fn run_filter(
    scans: &[Vec<Measurement>],
    params: &ModelParams,
    filter: &FilterSettings,
    rng: &mut ChaCha8Rng,
) -> eot::Result<Vec<StepOutput>> {
    let cfg = BpConfig {
        iterations: filter.bp_iterations,
        particles: filter.particles,
        options: UpdateOptions { censor_floor: filter.censor_floor, reorder: filter.reorder },
    };
    let mut pmb = PmbDensity::empty();
    let mut out = Vec::with_capacity(scans.len());
    for (k, scan) in scans.iter().enumerate() {
        let start = Instant::now();
        pmb = predict(&pmb, params, rng)?;
        pmb = bp_update(&pmb, scan, params, &cfg, rng)?;
        pmb = prune_components(&pmb, filter.prune_threshold);
        for b in &mut pmb.bernoullis {
            b.density = resample_systematic(&b.density, rng)?;
        }
        let estimates = extract_estimates(&pmb, filter.extract_threshold);
        let elapsed_s = start.elapsed().as_secs_f64();
        out.push(StepOutput {
            step: k + 1,
            estimates,
            existences: pmb.bernoullis.iter().map(|b| b.existence).collect(),
            elapsed_s,
        });
    }
    Ok(out)
}

/// Per-step GOSPA of an estimate sequence against the ground truth.
pub fn evaluate_steps(
    truth: &GroundTruth,
    steps: &[Vec<ObjectState>],
    settings: &GospaSettings,
) -> eot::Result<Vec<GospaResult>> {
    steps
        .iter()
        .enumerate()
        .map(|(k, estimates)| {
            let truth_ellipses: Vec<_> = truth
                .alive_at(k + 1)
                .iter()
                .map(|x| (x.kinematics.position, *x.extent.matrix()))
                .collect();
            let est_ellipses: Vec<_> = estimates
                .iter()
                .map(|x| (x.kinematics.position, *x.extent.matrix()))
                .collect();
            gospa(&truth_ellipses, &est_ellipses, settings.cutoff, settings.order, settings.alpha)
        })
        .collect()
}

/// One Monte-Carlo run's record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// Per-step metric decomposition; empty when the run failed.
    pub gospa: Vec<GospaResult>,
    pub estimate_counts: Vec<usize>,
    pub step_runtimes_s: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_det: f64,
    /// Mean wall time per step (s); wall times are reported, never part of
    /// the deterministic outputs.
    pub runtime_s: f64,
    pub completed_runs: usize,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloOutput {
    pub records: Vec<RunRecord>,
    pub summary: Summary,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Per-run mean of each decomposition column.
pub fn run_means(record: &RunRecord) -> GospaResult {
    GospaResult {
        total: mean(record.gospa.iter().map(|g| g.total)),
        localization: mean(record.gospa.iter().map(|g| g.localization)),
        missed: mean(record.gospa.iter().map(|g| g.missed)),
        false_det: mean(record.gospa.iter().map(|g| g.false_det)),
    }
}

/// Executes the configured Monte-Carlo study. Runs are independent: run r
/// uses seed `base_seed + r` for measurement synthesis and the filter, and
/// the results are reduced in run order, so the output is identical at any
/// parallelism level. A failed run is recorded, not fatal.
pub fn run_montecarlo(cfg: &RunConfig, jobs: usize) -> eot::Result<MonteCarloOutput> {
    cfg.validate()?;
    let shared_truth = if cfg.runs.resample_truth {
        None
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
        Some(generate_ground_truth(&cfg.scenario, &cfg.model, &mut rng)?)
    };
    let filter_model = cfg.filter_model();

    let execute = |run: usize| -> RunRecord {
        let seed = cfg.runs.base_seed + run as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = match &shared_truth {
            Some(t) => t.clone(),
            None => match generate_ground_truth(&cfg.scenario, &cfg.model, &mut rng) {
                Ok(t) => t,
                Err(e) => {
                    return RunRecord {
                        run,
                        seed,
                        gospa: Vec::new(),
                        estimate_counts: Vec::new(),
                        step_runtimes_s: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            },
        };
        let scans = generate_measurement_sets(&truth, &cfg.model, &mut rng);
        let outcome = run_filter(&scans, &filter_model, &cfg.filter, &mut rng).and_then(|steps| {
            let estimates: Vec<Vec<ObjectState>> =
                steps.iter().map(|s| s.estimates.clone()).collect();
            let gospa = evaluate_steps(&truth, &estimates, &cfg.gospa)?;
            Ok((steps, gospa))
        });
        match outcome {
            Ok((steps, gospa)) => RunRecord {
                run,
                seed,
                gospa,
                estimate_counts: steps.iter().map(|s| s.estimates.len()).collect(),
                step_runtimes_s: steps.iter().map(|s| s.elapsed_s).collect(),
                error: None,
            },
            Err(e) => RunRecord {
                run,
                seed,
                gospa: Vec::new(),
                estimate_counts: Vec::new(),
                step_runtimes_s: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    };

    let records: Vec<RunRecord> = if jobs == 1 {
        (0..cfg.runs.count).map(execute).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| eot::EotError::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| (0..cfg.runs.count).into_par_iter().map(execute).collect())
    };

    let completed: Vec<&RunRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let summary = Summary {
        total: mean(completed.iter().map(|r| run_means(r).total)),
        localization: mean(completed.iter().map(|r| run_means(r).localization)),
        missed: mean(completed.iter().map(|r| run_means(r).missed)),
        false_det: mean(completed.iter().map(|r| run_means(r).false_det)),
        runtime_s: mean(completed.iter().flat_map(|r| r.step_runtimes_s.iter().copied())),
        completed_runs: completed.len(),
        failed_runs: records.len() - completed.len(),
    };
    Ok(MonteCarloOutput { records, summary })
}
