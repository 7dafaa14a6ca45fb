//! Per-scan factor-graph problem construction.
//!
//! A problem holds the predicted Bernoulli components, one candidate new
//! component per measurement (drawn from a measurement-driven proposal), and
//! cached per-particle likelihood tables. Particle states never change
//! during message passing, so the rate-weighted Gaussian likelihood of every
//! valid (component, measurement, particle) triple is computed once here.

use rand::Rng;

use crate::error::{EotError, Result};
use crate::models::{
    intensity_log_density, new_component_proposal_logpdf, sample_new_component_state,
    MeasLikelihood,
};
use crate::types::{
    BernoulliComponent, Measurement, ModelParams, ObjectState, PmbDensity, WeightedParticleSet,
};

/// Optional update preprocessing: message censoring and deterministic
/// measurement reordering. Both are off by default and are not used by the
/// correctness tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOptions {
    /// Association ratios below `censor_floor` times the per-measurement
    /// maximum are clamped to zero each round; 0 disables censoring.
    pub censor_floor: f64,
    /// Sort measurements by a deterministic key before the update.
    pub reorder: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self { censor_floor: 0.0, reorder: false }
    }
}

/// First-iteration state of one candidate new component. All association
/// branches of the component share this support and these weights.
#[derive(Debug, Clone)]
pub struct NewComponentInit {
    pub support: Vec<ObjectState>,
    /// Normalized first-iteration weights.
    pub weights: Vec<f64>,
    /// Sum of the unnormalized importance weights; also the existence odds.
    pub raw_sum: f64,
    /// First-iteration existence raw_sum / (1 + raw_sum).
    pub existence: f64,
}

impl NewComponentInit {
    /// Builds the init from unnormalized importance weights; an all-zero
    /// vector yields a stillborn component (existence zero, uniform
    /// weights) rather than an error, since a measurement with no
    /// in-region explanation is still valid clutter.
    pub fn from_unnormalized(support: Vec<ObjectState>, raw: &[f64]) -> Result<Self> {
        if support.is_empty() || support.len() != raw.len() {
            return Err(EotError::InvalidParameter("empty or mismatched support".into()));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EotError::DegenerateWeights("negative or non-finite weight".into()));
        }
        let raw_sum: f64 = raw.iter().sum();
        let weights = if raw_sum > 0.0 {
            raw.iter().map(|w| w / raw_sum).collect()
        } else {
            vec![1.0 / support.len() as f64; support.len()]
        };
        Ok(Self { existence: raw_sum / (1.0 + raw_sum), support, weights, raw_sum })
    }
}

/// Cached per-particle quantities for one existing component.
#[derive(Debug, Clone)]
pub(crate) struct ExistingCache {
    /// rate * measurement likelihood, indexed [measurement][particle].
    pub gl: Vec<Vec<f64>>,
    /// p_detect * exp(-rate) per particle.
    pub pd_empty: Vec<f64>,
    pub ln_pd_empty: Vec<f64>,
    /// p_detect per particle.
    pub pd: Vec<f64>,
    pub ln_1m_pd: Vec<f64>,
    /// Empty-set likelihood per particle (first-iteration factor).
    pub empty_lik: Vec<f64>,
    pub ln_prior_w: Vec<f64>,
}

/// Cached per-particle quantities for one new component (measurement j
/// admits branches 1..=j only).
#[derive(Debug, Clone)]
pub(crate) struct NewCache {
    pub gl: Vec<Vec<f64>>,
    pub ln_init_w: Vec<f64>,
}

/// One scan's update instance.
#[derive(Debug, Clone)]
pub struct UpdateProblem {
    pub params: ModelParams,
    pub measurements: Vec<Measurement>,
    /// Predicted Bernoulli components.
    pub prior: Vec<BernoulliComponent>,
    /// One candidate component per measurement, in measurement order.
    pub new_components: Vec<NewComponentInit>,
    pub options: UpdateOptions,
    pub(crate) ex_cache: Vec<ExistingCache>,
    pub(crate) new_cache: Vec<NewCache>,
}

impl UpdateProblem {
    pub fn n_prior(&self) -> usize {
        self.prior.len()
    }

    pub fn n_measurements(&self) -> usize {
        self.measurements.len()
    }

    /// Clutter intensity at measurement `j` (0-based position).
    pub(crate) fn clutter_at(&self, j: usize) -> f64 {
        crate::models::clutter_intensity_at(&self.measurements[j].value, &self.params)
    }

    /// First-iteration extrinsic weights of existing component `i`
    /// (unnormalized): prior weight times the empty-set likelihood.
    pub fn existing_init_raw(&self, i: usize) -> Vec<f64> {
        let cache = &self.ex_cache[i];
        self.prior[i]
            .density
            .weights
            .iter()
            .zip(&cache.empty_lik)
            .map(|(w, e)| w * e)
            .collect()
    }
}

fn existing_cache(
    comp: &BernoulliComponent,
    measurements: &[Measurement],
    params: &ModelParams,
) -> Result<ExistingCache> {
    let n = comp.density.len();
    let mut pd_empty = Vec::with_capacity(n);
    let mut pd = Vec::with_capacity(n);
    let mut empty_lik = Vec::with_capacity(n);
    let mut liks = Vec::with_capacity(n);
    for x in &comp.density.particles {
        let p = params.p_d(x);
        pd.push(p);
        pd_empty.push(p * (-x.rate).exp());
        empty_lik.push(1.0 - p + p * (-x.rate).exp());
        liks.push(MeasLikelihood::new(x)?);
    }
    let gl = measurements
        .iter()
        .map(|z| {
            comp.density
                .particles
                .iter()
                .zip(&liks)
                .map(|(x, l)| x.rate * l.density(&z.value))
                .collect()
        })
        .collect();
    Ok(ExistingCache {
        gl,
        ln_pd_empty: pd_empty.iter().map(|v| v.ln()).collect(),
        pd_empty,
        ln_1m_pd: pd.iter().map(|v| (1.0 - v).ln()).collect(),
        pd,
        empty_lik,
        ln_prior_w: comp.density.weights.iter().map(|w| w.ln()).collect(),
    })
}

fn new_cache(
    init: &NewComponentInit,
    measurements: &[Measurement],
    position: usize,
) -> Result<NewCache> {
    let liks: Vec<MeasLikelihood> =
        init.support.iter().map(MeasLikelihood::new).collect::<Result<_>>()?;
    let gl = measurements[..=position]
        .iter()
        .map(|z| {
            init.support
                .iter()
                .zip(&liks)
                .map(|(x, l)| x.rate * l.density(&z.value))
                .collect()
        })
        .collect();
    Ok(NewCache { gl, ln_init_w: init.weights.iter().map(|w| w.ln()).collect() })
}

fn build_caches(problem: &mut UpdateProblem) -> Result<()> {
    problem.ex_cache = problem
        .prior
        .iter()
        .map(|c| existing_cache(c, &problem.measurements, &problem.params))
        .collect::<Result<_>>()?;
    problem.new_cache = problem
        .new_components
        .iter()
        .enumerate()
        .map(|(j, init)| new_cache(init, &problem.measurements, j))
        .collect::<Result<_>>()?;
    Ok(())
}

/// Builds the update problem for one scan: caches the likelihood tables and
/// draws each new component's support from the measurement-driven proposal
/// (position Gaussian centered on the measurement with covariance equal to
/// the birth extent mean; velocity, extent, and rate from the birth spec),
/// with importance weights against the predicted intensity.
pub fn build_update_problem<R: Rng + ?Sized>(
    pmb: &PmbDensity,
    measurements: &[Measurement],
    params: &ModelParams,
    particles: usize,
    rng: &mut R,
) -> Result<UpdateProblem> {
    if particles == 0 {
        return Err(EotError::InvalidParameter("particle count must be >= 1".into()));
    }
    let ln_pd = params.p_detect.ln();
    // each particle carries 1/L of the proposal mass, so the weight sum is
    // an unbiased estimate of the detected-intensity integral that the
    // initial existence is built from
    let ln_count = (particles as f64).ln();
    let new_components = measurements
        .iter()
        .map(|z| {
            let mut support = Vec::with_capacity(particles);
            let mut raw = Vec::with_capacity(particles);
            for _ in 0..particles {
                let x = sample_new_component_state(&z.value, &params.birth, rng);
                let log_w = ln_pd - x.rate + intensity_log_density(&pmb.intensity, &x)
                    - new_component_proposal_logpdf(&x, &z.value, &params.birth)
                    - ln_count;
                support.push(x);
                raw.push(log_w.exp());
            }
            NewComponentInit::from_unnormalized(support, &raw)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut problem = UpdateProblem {
        params: params.clone(),
        measurements: measurements.to_vec(),
        prior: pmb.bernoullis.clone(),
        new_components,
        options: UpdateOptions::default(),
        ex_cache: Vec::new(),
        new_cache: Vec::new(),
    };
    build_caches(&mut problem)?;
    Ok(problem)
}

/// Builds an update problem from explicit new-component supports and
/// unnormalized first-iteration weights, bypassing the sampling proposal.
/// Used to run the engine on discrete supports where integrals are exact
/// sums.
pub fn build_update_problem_with_supports(
    prior: Vec<BernoulliComponent>,
    measurements: &[Measurement],
    params: &ModelParams,
    supports: Vec<(Vec<ObjectState>, Vec<f64>)>,
) -> Result<UpdateProblem> {
    if supports.len() != measurements.len() {
        return Err(EotError::InvalidParameter("one support per measurement required".into()));
    }
    let new_components = supports
        .into_iter()
        .map(|(support, raw)| NewComponentInit::from_unnormalized(support, &raw))
        .collect::<Result<Vec<_>>>()?;
    let mut problem = UpdateProblem {
        params: params.clone(),
        measurements: measurements.to_vec(),
        prior,
        new_components,
        options: UpdateOptions::default(),
        ex_cache: Vec::new(),
        new_cache: Vec::new(),
    };
    build_caches(&mut problem)?;
    Ok(problem)
}

/// Applies the optional preprocessing: sets the censor floor and, when
/// requested, reorders measurements by a deterministic key (lexicographic
/// position), carrying each measurement's support along and rebuilding the
/// ragged likelihood tables.
pub fn censoring_and_reordering(
    mut problem: UpdateProblem,
    options: UpdateOptions,
) -> Result<UpdateProblem> {
    problem.options = options;
    if options.reorder && problem.measurements.len() > 1 {
        let mut order: Vec<usize> = (0..problem.measurements.len()).collect();
        order.sort_by(|&a, &b| {
            let za = &problem.measurements[a].value;
            let zb = &problem.measurements[b].value;
            (za.x, za.y).partial_cmp(&(zb.x, zb.y)).expect("finite measurement values")
        });
        problem.measurements = order.iter().map(|&k| problem.measurements[k]).collect();
        problem.new_components = order
            .iter()
            .map(|&k| problem.new_components[k].clone())
            .collect();
        build_caches(&mut problem)?;
    }
    Ok(problem)
}

/// Converts a new-component init into a particle set (used when assembling
/// the posterior).
pub(crate) fn init_particle_set(init: &NewComponentInit, weights: Vec<f64>) -> Result<WeightedParticleSet> {
    WeightedParticleSet::new(init.support.clone(), weights)
}
