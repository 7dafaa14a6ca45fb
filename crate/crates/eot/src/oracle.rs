//! Exact, exponential-cost reference implementations on small discrete
//! state supports: full local/global hypothesis enumeration for one update
//! step, the KLD-optimal PMB projection, and a brute-force evaluator of the
//! factorized joint posterior used to certify the factor graph against the
//! hypothesis-sum form.
//!
//! Integrals are replaced by sums over discrete supports, so "exact" means
//! exact up to floating point. Sizes are guarded; this module never runs
//! inside the tracking loop.

use crate::error::{EotError, Result};
use crate::models::{zip_factor_detection, DetectionFlag, MeasLikelihood};
use crate::types::{Measurement, ModelParams, ObjectState};

/// Tractability guard.
pub const MAX_MEASUREMENTS: usize = 6;
pub const MAX_PRIOR_COMPONENTS: usize = 3;
pub const MAX_SUPPORT: usize = 6;

/// Bernoulli component on a finite state support.
#[derive(Debug, Clone)]
pub struct DiscreteBernoulli {
    pub existence: f64,
    /// (state, probability) pairs; probabilities sum to one.
    pub support: Vec<(ObjectState, f64)>,
}

impl DiscreteBernoulli {
    pub fn validate(&self) -> Result<()> {
        if self.support.iter().any(|(_, p)| *p < 0.0) {
            return Err(EotError::DegenerateWeights("negative support probability".into()));
        }
        let sum: f64 = self.support.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(EotError::Unnormalized { sum });
        }
        Ok(())
    }
}

/// One association history of a single component: the measurement subset it
/// explains (bitmask over 1..m), the hypothesis weight, and the updated
/// discrete Bernoulli.
#[derive(Debug, Clone)]
pub struct LocalHypothesis {
    pub component: usize,
    pub meas_set: u32,
    pub weight: f64,
    pub posterior: DiscreteBernoulli,
}

/// A consistent tuple of local hypotheses whose measurement sets partition
/// the scan.
#[derive(Debug, Clone)]
pub struct GlobalHypothesis {
    /// Selected local hypothesis index per component.
    pub choice: Vec<usize>,
    /// Normalized weight.
    pub weight: f64,
}

/// A full update instance on discrete supports: prior Bernoulli components,
/// a point-mass intensity for undetected objects, and one scan.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub priors: Vec<DiscreteBernoulli>,
    /// Intensity grid: (state, expected-count mass) pairs.
    pub grid: Vec<(ObjectState, f64)>,
    pub measurements: Vec<Measurement>,
    pub params: ModelParams,
}

impl OracleInstance {
    pub fn guard(&self) -> Result<()> {
        if self.measurements.len() > MAX_MEASUREMENTS {
            return Err(EotError::EnumerationGuard(format!(
                "{} measurements > {MAX_MEASUREMENTS}",
                self.measurements.len()
            )));
        }
        if self.priors.len() > MAX_PRIOR_COMPONENTS {
            return Err(EotError::EnumerationGuard(format!(
                "{} prior components > {MAX_PRIOR_COMPONENTS}",
                self.priors.len()
            )));
        }
        if self.grid.len() > MAX_SUPPORT
            || self.priors.iter().any(|b| b.support.len() > MAX_SUPPORT)
        {
            return Err(EotError::EnumerationGuard("support too large".into()));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.priors.len() + self.measurements.len()
    }
}

/// ZIP likelihood of a non-empty measurement subset (given by bitmask) for
/// one state: p_detect * exp(-rate) * prod rate * likelihood.
fn zip_subset_likelihood(
    mask: u32,
    measurements: &[Measurement],
    x: &ObjectState,
    params: &ModelParams,
) -> f64 {
    let lik = match MeasLikelihood::new(x) {
        Ok(l) => l,
        Err(_) => return 0.0,
    };
    let mut value = params.p_d(x) * (-x.rate).exp();
    for (j, z) in measurements.iter().enumerate() {
        if mask & (1 << j) != 0 {
            value *= x.rate * lik.density(&z.value);
        }
    }
    value
}

fn empty_likelihood(x: &ObjectState, params: &ModelParams) -> f64 {
    let pd = params.p_d(x);
    1.0 - pd + pd * (-x.rate).exp()
}

fn normalized_or(probs: Vec<f64>, fallback: &[f64]) -> Vec<f64> {
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        probs.iter().map(|p| p / sum).collect()
    } else {
        fallback.to_vec()
    }
}

/// Enumerates every local hypothesis of the update: for each existing
/// component the misdetection plus all 2^m - 1 measurement subsets; for the
/// j-th new component the non-existence case plus every subset whose
/// largest measurement index is j. All weights and updated densities are
/// computed by exact sums over the discrete supports.
pub fn enumerate_local_hypotheses(instance: &OracleInstance) -> Result<Vec<Vec<LocalHypothesis>>> {
    instance.guard()?;
    let m = instance.measurements.len();
    let params = &instance.params;
    let mut all = Vec::with_capacity(instance.n_components());

    for (i, prior) in instance.priors.iter().enumerate() {
        prior.validate()?;
        let mut hyps = Vec::with_capacity(1 << m);
        let prior_probs: Vec<f64> = prior.support.iter().map(|(_, p)| *p).collect();

        // misdetection
        let factors: Vec<f64> =
            prior.support.iter().map(|(x, p)| p * empty_likelihood(x, params)).collect();
        let avg: f64 = factors.iter().sum();
        let weight = 1.0 - prior.existence + prior.existence * avg;
        hyps.push(LocalHypothesis {
            component: i,
            meas_set: 0,
            weight,
            posterior: DiscreteBernoulli {
                existence: prior.existence * avg / weight,
                support: prior
                    .support
                    .iter()
                    .zip(normalized_or(factors, &prior_probs))
                    .map(|((x, _), p)| (*x, p))
                    .collect(),
            },
        });

        // detection with each non-empty subset
        for mask in 1u32..(1 << m) {
            let factors: Vec<f64> = prior
                .support
                .iter()
                .map(|(x, p)| p * zip_subset_likelihood(mask, &instance.measurements, x, params))
                .collect();
            let avg: f64 = factors.iter().sum();
            hyps.push(LocalHypothesis {
                component: i,
                meas_set: mask,
                weight: prior.existence * avg,
                posterior: DiscreteBernoulli {
                    existence: 1.0,
                    support: prior
                        .support
                        .iter()
                        .zip(normalized_or(factors, &prior_probs))
                        .map(|((x, _), p)| (*x, p))
                        .collect(),
                },
            });
        }
        all.push(hyps);
    }

    // new components
    let grid_mass: f64 = instance.grid.iter().map(|(_, w)| w).sum();
    let grid_probs: Vec<f64> = if grid_mass > 0.0 {
        instance.grid.iter().map(|(_, w)| w / grid_mass).collect()
    } else {
        vec![1.0 / instance.grid.len().max(1) as f64; instance.grid.len()]
    };
    for j in 1..=m {
        let i = instance.priors.len() + j - 1;
        let mut hyps = Vec::new();
        hyps.push(LocalHypothesis {
            component: i,
            meas_set: 0,
            weight: 1.0,
            posterior: DiscreteBernoulli {
                existence: 0.0,
                support: instance
                    .grid
                    .iter()
                    .zip(&grid_probs)
                    .map(|((x, _), p)| (*x, *p))
                    .collect(),
            },
        });
        // subsets whose largest index is j: bit j-1 set, bits >= j clear
        for low in 0u32..(1 << (j - 1)) {
            let mask = low | (1 << (j - 1));
            let factors: Vec<f64> = instance
                .grid
                .iter()
                .map(|(x, w)| w * zip_subset_likelihood(mask, &instance.measurements, x, params))
                .collect();
            let detected: f64 = factors.iter().sum();
            let clutter = if mask.count_ones() == 1 {
                crate::models::clutter_intensity_at(&instance.measurements[j - 1].value, params)
            } else {
                0.0
            };
            let weight = clutter + detected;
            hyps.push(LocalHypothesis {
                component: i,
                meas_set: mask,
                weight,
                posterior: DiscreteBernoulli {
                    existence: if weight > 0.0 { detected / weight } else { 0.0 },
                    support: instance
                        .grid
                        .iter()
                        .zip(normalized_or(factors, &grid_probs))
                        .map(|((x, _), p)| (*x, p))
                        .collect(),
                },
            });
        }
        all.push(hyps);
    }
    Ok(all)
}

/// Enumerates all global hypotheses: tuples of local hypotheses whose
/// measurement sets partition the scan, with weights proportional to the
/// product of local weights, normalized to sum to one.
pub fn enumerate_global_hypotheses(
    locals: &[Vec<LocalHypothesis>],
    m: usize,
) -> Result<Vec<GlobalHypothesis>> {
    let full: u32 = if m == 0 { 0 } else { (1 << m) - 1 };
    let mut globals = Vec::new();
    let mut choice = vec![0usize; locals.len()];

    fn rec(
        locals: &[Vec<LocalHypothesis>],
        comp: usize,
        used: u32,
        weight: f64,
        full: u32,
        choice: &mut Vec<usize>,
        out: &mut Vec<GlobalHypothesis>,
    ) {
        if comp == locals.len() {
            if used == full {
                out.push(GlobalHypothesis { choice: choice.clone(), weight });
            }
            return;
        }
        for (a, hyp) in locals[comp].iter().enumerate() {
            if hyp.meas_set & used != 0 {
                continue;
            }
            choice[comp] = a;
            rec(locals, comp + 1, used | hyp.meas_set, weight * hyp.weight, full, choice, out);
        }
    }
    rec(locals, 0, 0, 1.0, full, &mut choice, &mut globals);

    let total: f64 = globals.iter().map(|g| g.weight).sum();
    if !(total > 0.0) {
        return Err(EotError::DegenerateWeights("all global hypotheses have zero weight".into()));
    }
    for g in &mut globals {
        g.weight /= total;
    }
    Ok(globals)
}

/// Unnormalized weight of one global hypothesis (product of local weights).
pub fn global_weight_unnormalized(locals: &[Vec<LocalHypothesis>], choice: &[usize]) -> f64 {
    choice.iter().enumerate().map(|(i, &a)| locals[i][a].weight).product()
}

/// KLD-optimal PMB projection of the hypothesis mixture: per component, the
/// marginal local-hypothesis weights, the marginal existence, and the
/// mixture of posterior densities on the shared support.
pub fn pmb_project(
    globals: &[GlobalHypothesis],
    locals: &[Vec<LocalHypothesis>],
) -> Vec<DiscreteBernoulli> {
    let mut out = Vec::with_capacity(locals.len());
    for (i, hyps) in locals.iter().enumerate() {
        let mut marginal = vec![0.0; hyps.len()];
        for g in globals {
            marginal[g.choice[i]] += g.weight;
        }
        let existence: f64 =
            marginal.iter().zip(hyps).map(|(w, h)| w * h.posterior.existence).sum();
        let support_states: Vec<ObjectState> =
            hyps[0].posterior.support.iter().map(|(x, _)| *x).collect();
        let mut probs = vec![0.0; support_states.len()];
        if existence > 0.0 {
            for (w, h) in marginal.iter().zip(hyps) {
                for (slot, (_, p)) in probs.iter_mut().zip(&h.posterior.support) {
                    *slot += w * h.posterior.existence * p / existence;
                }
            }
        } else {
            let fallback: Vec<f64> = hyps[0].posterior.support.iter().map(|(_, p)| *p).collect();
            probs = fallback;
        }
        out.push(DiscreteBernoulli {
            existence,
            support: support_states.into_iter().zip(probs).collect(),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Factorized joint posterior
// ---------------------------------------------------------------------------

/// A full assignment of every variable in the factorized joint posterior.
#[derive(Debug, Clone)]
pub struct JointConfig {
    /// Per component: absent, or an index into its support (prior support
    /// for existing components, intensity grid for new ones).
    pub states: Vec<Option<usize>>,
    /// Detection flags, existing components only.
    pub detections: Vec<bool>,
    /// Object-oriented association: row i has one entry per measurement the
    /// component may explain (all m for existing, the first j for the j-th
    /// new component).
    pub alpha: Vec<Vec<bool>>,
    /// Measurement-oriented association: owning component per measurement.
    pub beta: Vec<usize>,
}

/// Consistency factor between the dual association representations.
pub fn psi_factor(alpha: bool, beta: usize, component: usize) -> f64 {
    if alpha == (beta == component) {
        1.0
    } else {
        0.0
    }
}

/// Detection/association consistency: a missed component explains nothing.
pub fn phi_factor(detected: bool, alpha: bool) -> f64 {
    if !detected && alpha {
        0.0
    } else {
        1.0
    }
}

/// Per-measurement likelihood factor of an existing (or not-yet-created
/// new) component.
pub fn legacy_meas_factor(
    x: Option<&ObjectState>,
    alpha: bool,
    z: &Measurement,
) -> f64 {
    if !alpha {
        return 1.0;
    }
    match x {
        Some(x) => match MeasLikelihood::new(x) {
            Ok(l) => x.rate * l.density(&z.value),
            Err(_) => 0.0,
        },
        None => 0.0,
    }
}

/// Likelihood factor binding a new component to its creating measurement;
/// the absent-but-associated branch carries the clutter intensity.
pub fn new_meas_factor(
    x: Option<&ObjectState>,
    alpha: bool,
    z: &Measurement,
    params: &ModelParams,
) -> f64 {
    match (x, alpha) {
        (Some(x), true) => match MeasLikelihood::new(x) {
            Ok(l) => x.rate * l.density(&z.value),
            Err(_) => 0.0,
        },
        (None, true) => crate::models::clutter_intensity_at(&z.value, params),
        (None, false) => 1.0,
        (Some(_), false) => 0.0,
    }
}

/// Evaluates the full factorized joint posterior (all factors multiplied)
/// at one configuration. Includes the empty-PPP constant so both routes of
/// the certification carry identical normalization.
pub fn factorized_joint_mass(config: &JointConfig, instance: &OracleInstance) -> f64 {
    let n = instance.priors.len();
    let m = instance.measurements.len();
    let params = &instance.params;
    let grid_mass: f64 = instance.grid.iter().map(|(_, w)| w).sum();
    let mut value = (-grid_mass).exp();

    // existing components: prior, detection factor, detection consistency
    for (i, prior) in instance.priors.iter().enumerate() {
        let state = config.states[i].map(|idx| &prior.support[idx]);
        value *= match state {
            Some((_, p)) => prior.existence * p,
            None => 1.0 - prior.existence,
        };
        let flag = if config.detections[i] { DetectionFlag::Detected } else { DetectionFlag::Missed };
        value *= zip_factor_detection(flag, state.map(|(x, _)| x), params);
        for j in 0..m {
            value *= phi_factor(config.detections[i], config.alpha[i][j]);
        }
        if value == 0.0 {
            return 0.0;
        }
    }

    // new components: prior factor
    for j in 1..=m {
        let i = n + j - 1;
        value *= match config.states[i].map(|idx| &instance.grid[idx]) {
            Some((x, w)) => params.p_d(x) * (-x.rate).exp() * w,
            None => 1.0,
        };
    }

    // per-measurement likelihood and consistency factors
    for j in 1..=m {
        let z = &instance.measurements[j - 1];
        for i in 0..instance.n_components() {
            let (is_new, owner_j) = if i < n { (false, 0) } else { (true, i - n + 1) };
            if is_new && owner_j < j {
                continue; // measurement j is outside this component's scope
            }
            let state: Option<&ObjectState> = config.states[i].map(|idx| {
                if is_new {
                    &instance.grid[idx].0
                } else {
                    &instance.priors[i].support[idx].0
                }
            });
            let alpha = config.alpha[i][j - 1];
            value *= if is_new && owner_j == j {
                new_meas_factor(state, alpha, z, params)
            } else {
                legacy_meas_factor(state, alpha, z)
            };
            value *= psi_factor(alpha, config.beta[j - 1], i);
            if value == 0.0 {
                return 0.0;
            }
        }
    }
    value
}

/// Result of the factorization certification.
#[derive(Debug, Clone, Copy)]
pub struct FactorizationReport {
    pub max_rel_err: f64,
    pub n_globals: usize,
}

/// Draws a random small instance within the enumeration guard. Each prior
/// component is a localized cluster of support states (spread on the scale
/// of its extent), the intensity is a scattered point-mass grid, and
/// measurements are drawn from the instance's own generative model (object
/// returns around support states plus uniform clutter). Test support for
/// the certification suites.
pub fn random_instance(n_prior: usize, m: usize, seed: u64) -> OracleInstance {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::standard(rng.gen_range(0.5..0.95), 3.0);

    let cluster = |center: nalgebra::Vector2<f64>, rng: &mut ChaCha8Rng| -> ObjectState {
        let extent = rng.gen_range(1.0..4.0);
        ObjectState {
            kinematics: crate::types::KinematicState::new(
                center.x + rng.gen_range(-2.0..2.0),
                center.y + rng.gen_range(-2.0..2.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ),
            extent: crate::types::ExtentMatrix::isotropic(extent),
            rate: rng.gen_range(2.0..4.0),
        }
    };

    let centers: Vec<nalgebra::Vector2<f64>> = (0..n_prior)
        .map(|k| {
            nalgebra::Vector2::new(
                -20.0 + 40.0 * k as f64 + rng.gen_range(-5.0..5.0),
                rng.gen_range(-10.0..10.0),
            )
        })
        .collect();
    let priors: Vec<DiscreteBernoulli> = centers
        .iter()
        .map(|c| {
            let k = rng.gen_range(2..=3);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            DiscreteBernoulli {
                existence: rng.gen_range(0.3..0.95),
                support: raw.iter().map(|w| (cluster(*c, &mut rng), w / sum)).collect(),
            }
        })
        .collect();
    let grid = (0..rng.gen_range(2..=4))
        .map(|_| {
            let c = nalgebra::Vector2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-15.0..15.0));
            (cluster(c, &mut rng), rng.gen_range(0.005..0.05))
        })
        .collect();

    // measurements from the generative model, truncated or padded with
    // clutter to exactly m
    let mut values: Vec<nalgebra::Vector2<f64>> = Vec::new();
    for b in &priors {
        if rng.gen::<f64>() < b.existence * params.p_detect {
            let (x, _) = b.support[rng.gen_range(0..b.support.len())];
            let count = 1 + rng.gen_range(0..2);
            for _ in 0..count {
                values.push(crate::models::sample_gaussian2(
                    &x.kinematics.position,
                    x.extent.matrix(),
                    &mut rng,
                ));
            }
        }
    }
    while values.len() < m {
        values.push(nalgebra::Vector2::new(
            rng.gen_range(-30.0..30.0),
            rng.gen_range(-15.0..15.0),
        ));
    }
    values.truncate(m);
    let measurements = values
        .into_iter()
        .enumerate()
        .map(|(j, value)| Measurement { value, index: j + 1 })
        .collect();
    OracleInstance { priors, grid, measurements, params }
}

fn config_from_global(
    locals: &[Vec<LocalHypothesis>],
    choice: &[usize],
    n: usize,
    m: usize,
) -> (Vec<Vec<bool>>, Vec<usize>) {
    let mut alpha: Vec<Vec<bool>> = (0..locals.len())
        .map(|i| if i < n { vec![false; m] } else { vec![false; i - n + 1] })
        .collect();
    let mut beta = vec![usize::MAX; m];
    for (i, &a) in choice.iter().enumerate() {
        let mask = locals[i][a].meas_set;
        for j in 0..m {
            if mask & (1 << j) != 0 {
                alpha[i][j] = true;
                beta[j] = i;
            }
        }
    }
    debug_assert!(beta.iter().all(|&b| b != usize::MAX), "partition must cover every measurement");
    (alpha, beta)
}

/// Certifies the factorization: for every global hypothesis, the sum of the
/// factorized joint over all configurations consistent with it must equal
/// the unnormalized hypothesis weight from the enumeration route.
pub fn check_factorization_equivalence(instance: &OracleInstance) -> Result<FactorizationReport> {
    instance.guard()?;
    let n = instance.priors.len();
    let m = instance.measurements.len();
    let locals = enumerate_local_hypotheses(instance)?;
    let globals = enumerate_global_hypotheses(&locals, m)?;
    let grid_mass: f64 = instance.grid.iter().map(|(_, w)| w).sum();
    let ppp_const = (-grid_mass).exp();

    let mut max_rel_err = 0.0f64;
    for g in &globals {
        let (alpha, beta) = config_from_global(&locals, &g.choice, n, m);
        let mut lhs = 0.0;
        let support_sizes: Vec<usize> = (0..instance.n_components())
            .map(|i| if i < n { instance.priors[i].support.len() } else { instance.grid.len() })
            .collect();

        // enumerate states (absent = support_sizes[i]) and detections
        let mut states = vec![Option::<usize>::None; instance.n_components()];
        let mut stack = vec![0usize; instance.n_components() + 1];
        'outer: loop {
            // decode current state combination from stack counters
            for i in 0..instance.n_components() {
                states[i] = if stack[i] == support_sizes[i] { None } else { Some(stack[i]) };
            }
            for d_mask in 0u32..(1 << n) {
                let detections: Vec<bool> = (0..n).map(|i| d_mask & (1 << i) != 0).collect();
                let config = JointConfig {
                    states: states.clone(),
                    detections,
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                };
                lhs += factorized_joint_mass(&config, instance);
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == instance.n_components() {
                    break 'outer;
                }
                stack[i] += 1;
                if stack[i] <= support_sizes[i] {
                    break;
                }
                stack[i] = 0;
                i += 1;
            }
        }

        let rhs = ppp_const * global_weight_unnormalized(&locals, &g.choice);
        let rel = (lhs - rhs).abs() / rhs.abs().max(1e-300);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(FactorizationReport { max_rel_err, n_globals: globals.len() })
}
