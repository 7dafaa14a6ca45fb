//! Ground-truth scenario generation and scan-by-scan measurement synthesis.
//!
//! The default scenario places objects uniformly on a circle (equally
//! spaced angles with a random global rotation) moving toward the center,
//! with staggered births and deaths. Extents are sampled once per object
//! and held constant together with the measurement rate; kinematics follow
//! the nearly-constant-velocity model.

use nalgebra::{Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EotError, Result};
use crate::models::{sample_clutter, sample_inverse_wishart2, sample_object_measurements, transition_sample};
use crate::types::{
    ExtentMatrix, InverseWishartSpec, KinematicState, Measurement, ModelParams, ObjectState, Rect,
};

/// One object's life: alive on steps `birth_step..death_step` (1-based,
/// exclusive end), with one state per alive step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub birth_step: usize,
    pub death_step: usize,
    pub states: Vec<ObjectState>,
}

impl TruthObject {
    pub fn state_at(&self, step: usize) -> Option<&ObjectState> {
        if step >= self.birth_step && step < self.death_step {
            self.states.get(step - self.birth_step)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub horizon: usize,
    pub objects: Vec<TruthObject>,
}

impl GroundTruth {
    /// States of all objects alive at the given step (1-based).
    pub fn alive_at(&self, step: usize) -> Vec<&ObjectState> {
        self.objects.iter().filter_map(|o| o.state_at(step)).collect()
    }
}

/// Scenario layout parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub object_count: usize,
    /// Radius of the circle initial positions are placed on (m).
    pub circle_radius: f64,
    /// Initial speed toward the center (m/s).
    pub initial_speed: f64,
    /// Per-object birth steps (1-based).
    pub birth_steps: Vec<usize>,
    /// Per-object death steps (exclusive; objects are alive before this).
    pub death_steps: Vec<usize>,
    pub extent_prior: InverseWishartSpec,
    /// Constant per-object measurement rate.
    pub rate: f64,
    pub horizon: usize,
    pub region: Rect,
    pub seed: u64,
    /// Propagate ground truth with process noise (set false for straight
    /// lines when debugging).
    pub process_noise: bool,
}

impl ScenarioConfig {
    /// Ten objects on a 125 m circle at 12.5 m/s over 100 steps, two born
    /// at each of steps 3, 6, 9, 12, 15 and two dying at each of steps 83,
    /// 86, 89, 92, 95.
    pub fn standard(rate: f64, seed: u64) -> Self {
        Self {
            object_count: 10,
            circle_radius: 125.0,
            initial_speed: 12.5,
            birth_steps: vec![3, 3, 6, 6, 9, 9, 12, 12, 15, 15],
            death_steps: vec![83, 83, 86, 86, 89, 89, 92, 92, 95, 95],
            extent_prior: InverseWishartSpec { dof: 100.0, mean: Matrix2::identity() * 5.0 },
            rate,
            horizon: 100,
            region: Rect::centered(150.0),
            seed,
            process_noise: true,
        }
    }

    /// Scaled-down variant: six objects on an 80 m circle over 60 steps.
    pub fn desk(rate: f64, seed: u64) -> Self {
        Self {
            object_count: 6,
            circle_radius: 80.0,
            initial_speed: 12.5,
            birth_steps: vec![3, 3, 6, 6, 9, 9],
            death_steps: vec![50, 50, 54, 54, 58, 58],
            horizon: 60,
            ..Self::standard(rate, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.birth_steps.len() != self.object_count || self.death_steps.len() != self.object_count {
            return Err(EotError::InvalidParameter(
                "birth/death step lists must match the object count".into(),
            ));
        }
        for (b, d) in self.birth_steps.iter().zip(&self.death_steps) {
            if !(*b >= 1 && b < d) {
                return Err(EotError::InvalidParameter(format!(
                    "birth {b} and death {d} must satisfy 1 <= birth < death"
                )));
            }
        }
        if self.region.is_degenerate() {
            return Err(EotError::InvalidParameter("degenerate region".into()));
        }
        Ok(())
    }
}

/// Generates the ground truth: initial positions equally spaced on the
/// circle with a random rotation, velocities pointing at the center,
/// extents sampled once from the inverse-Wishart prior, kinematics
/// propagated by the motion model.
pub fn generate_ground_truth<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    params: &ModelParams,
    rng: &mut R,
) -> Result<GroundTruth> {
    cfg.validate()?;
    let rotation = rng.gen::<f64>() * std::f64::consts::TAU;
    let noise_params = if cfg.process_noise {
        params.clone()
    } else {
        ModelParams { process_noise_std: 0.0, ..params.clone() }
    };

    let mut objects = Vec::with_capacity(cfg.object_count);
    for k in 0..cfg.object_count {
        let angle = rotation + std::f64::consts::TAU * k as f64 / cfg.object_count as f64;
        let position = cfg.circle_radius * Vector2::new(angle.cos(), angle.sin());
        let velocity = -cfg.initial_speed * position / position.norm();
        let extent = ExtentMatrix(sample_inverse_wishart2(&cfg.extent_prior, rng));
        let mut kinematics = KinematicState { position, velocity };

        let birth = cfg.birth_steps[k];
        let death = cfg.death_steps[k];
        let mut states = Vec::with_capacity(death - birth);
        for _ in birth..death {
            states.push(ObjectState { kinematics, extent, rate: cfg.rate });
            kinematics = transition_sample(&kinematics, &noise_params, rng);
        }
        objects.push(TruthObject { birth_step: birth, death_step: death, states });
    }
    Ok(GroundTruth { horizon: cfg.horizon, objects })
}

/// Synthesizes one measurement set per step: the union of each alive
/// object's measurement set and clutter, shuffled before indices are
/// assigned.
pub fn generate_measurement_sets<R: Rng + ?Sized>(
    truth: &GroundTruth,
    params: &ModelParams,
    rng: &mut R,
) -> Vec<Vec<Measurement>> {
    (1..=truth.horizon)
        .map(|step| {
            let mut values: Vec<Vector2<f64>> = Vec::new();
            for x in truth.alive_at(step) {
                values.extend(sample_object_measurements(x, params, rng));
            }
            values.extend(sample_clutter(params, rng));
            values.shuffle(rng);
            values
                .into_iter()
                .enumerate()
                .map(|(j, value)| Measurement { value, index: j + 1 })
                .collect()
        })
        .collect()
}
