//! Dynamic and measurement models.
//!
//! The object measurement set follows a zero-inflated Poisson (ZIP) model:
//! detection is Bernoulli with probability `p_detect`, and a detected object
//! generates a Poisson number of measurements with its per-object rate, each
//! drawn from a Gaussian centered at the object position with covariance
//! equal to the extent matrix. An empty set can therefore arise either from
//! a missed detection or from a detected object generating zero
//! measurements. Density evaluation is done in the log domain throughout.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Normal, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{EotError, Result};
use crate::numeric::{logaddexp, logsumexp};
use crate::types::{
    validate_spd, BirthSpec, GammaSpec, IntensityComponent, InverseWishartSpec,
    KinematicState, Measurement, ModelParams, ObjectState, Rect,
};

const LN_2PI: f64 = 1.8378770664093453;

/// Binary object detection indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFlag {
    Missed,
    Detected,
}

impl DetectionFlag {
    pub fn as_bit(self) -> u8 {
        match self {
            DetectionFlag::Missed => 0,
            DetectionFlag::Detected => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussian helpers
// ---------------------------------------------------------------------------

/// Lower Cholesky factor of a 2x2 SPD matrix.
pub(crate) fn chol2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let a = m[(0, 0)];
    if a <= 0.0 {
        return None;
    }
    let l11 = a.sqrt();
    let l21 = m[(1, 0)] / l11;
    let d = m[(1, 1)] - l21 * l21;
    if d <= 0.0 {
        return None;
    }
    Some(Matrix2::new(l11, 0.0, l21, d.sqrt()))
}

/// Log-density of a bivariate Gaussian; `None` when the covariance is not
/// SPD.
pub fn gaussian2_logpdf(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Option<f64> {
    let det = cov.determinant();
    if !(det > 0.0) || !validate_spd(cov) {
        return None;
    }
    let d = x - mean;
    let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let q = d.dot(&(inv * d));
    Some(-LN_2PI - 0.5 * det.ln() - 0.5 * q)
}

pub fn sample_gaussian2<R: Rng + ?Sized>(
    mean: &Vector2<f64>,
    cov: &Matrix2<f64>,
    rng: &mut R,
) -> Vector2<f64> {
    let l = chol2(cov).expect("covariance must be SPD");
    let std = Normal::new(0.0, 1.0).unwrap();
    let n = Vector2::new(std.sample(rng), std.sample(rng));
    mean + l * n
}

/// Precomputed single-measurement Gaussian likelihood for one object state:
/// mean = position, covariance = extent.
#[derive(Debug, Clone)]
pub struct MeasLikelihood {
    mean: Vector2<f64>,
    inv: Matrix2<f64>,
    log_norm: f64,
}

impl MeasLikelihood {
    pub fn new(x: &ObjectState) -> Result<Self> {
        let cov = x.extent.matrix();
        let det = cov.determinant();
        if !(det > 0.0) || !validate_spd(cov) {
            return Err(EotError::NotSpd);
        }
        Ok(Self {
            mean: x.kinematics.position,
            inv: Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det,
            log_norm: -LN_2PI - 0.5 * det.ln(),
        })
    }

    #[inline]
    pub fn log_density(&self, z: &Vector2<f64>) -> f64 {
        let d = z - self.mean;
        self.log_norm - 0.5 * d.dot(&(self.inv * d))
    }

    #[inline]
    pub fn density(&self, z: &Vector2<f64>) -> f64 {
        self.log_density(z).exp()
    }
}

// ---------------------------------------------------------------------------
// ZIP measurement model
// ---------------------------------------------------------------------------

/// Probability that an object generates the empty measurement set:
/// 1 - p_detect + p_detect * exp(-rate).
pub fn empty_set_likelihood(x: &ObjectState, params: &ModelParams) -> f64 {
    let pd = params.p_d(x);
    1.0 - pd + pd * (-x.rate).exp()
}

/// Gaussian likelihood of a single measurement given the object state.
pub fn meas_likelihood(z: &Measurement, x: &ObjectState) -> Result<f64> {
    Ok(MeasLikelihood::new(x)?.density(&z.value))
}

/// Log of the ZIP set density of `w` given the object state.
pub fn zip_set_log_density(w: &[Measurement], x: &ObjectState, params: &ModelParams) -> f64 {
    if w.is_empty() {
        return empty_set_likelihood(x, params).ln();
    }
    let pd = params.p_d(x);
    if pd == 0.0 {
        return f64::NEG_INFINITY;
    }
    let lik = match MeasLikelihood::new(x) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut log = pd.ln() - x.rate;
    for z in w {
        log += x.rate.ln() + lik.log_density(&z.value);
    }
    log
}

/// Detection factor of the ZIP model: the joint weight of the detection
/// flag given a present state or an absent component.
pub fn zip_factor_detection(
    flag: DetectionFlag,
    x: Option<&ObjectState>,
    params: &ModelParams,
) -> f64 {
    match (x, flag) {
        (Some(x), DetectionFlag::Detected) => params.p_d(x) * (-x.rate).exp(),
        (Some(x), DetectionFlag::Missed) => 1.0 - params.p_d(x),
        (None, DetectionFlag::Missed) => 1.0,
        (None, DetectionFlag::Detected) => 0.0,
    }
}

/// Conditional measurement-set factor of the ZIP model given the detection
/// flag: a detected present object generates each measurement independently
/// with weight rate * likelihood; a missed component generates nothing.
pub fn zip_factor_conditional(
    w: &[Measurement],
    flag: DetectionFlag,
    x: Option<&ObjectState>,
) -> f64 {
    match (x, flag) {
        (Some(x), DetectionFlag::Detected) => {
            let lik = match MeasLikelihood::new(x) {
                Ok(l) => l,
                Err(_) => return 0.0,
            };
            w.iter().map(|z| x.rate * lik.density(&z.value)).product()
        }
        (_, DetectionFlag::Missed) if w.is_empty() => 1.0,
        _ => 0.0,
    }
}

/// Clutter intensity: uniform over the region with the configured rate.
pub fn clutter_intensity_at(z: &Vector2<f64>, params: &ModelParams) -> f64 {
    if params.region.contains(z) {
        params.clutter_rate / params.region.area()
    } else {
        0.0
    }
}

/// Draws the ZIP measurement set for one object: Bernoulli detection, then
/// a Poisson number of Gaussian measurements.
pub fn sample_object_measurements<R: Rng + ?Sized>(
    x: &ObjectState,
    params: &ModelParams,
    rng: &mut R,
) -> Vec<Vector2<f64>> {
    if rng.gen::<f64>() >= params.p_d(x) {
        return Vec::new();
    }
    let count = Poisson::new(x.rate).map(|d| d.sample(rng) as usize).unwrap_or(0);
    let l = chol2(x.extent.matrix()).expect("extent must be SPD");
    let std = Normal::new(0.0, 1.0).unwrap();
    (0..count)
        .map(|_| {
            let n = Vector2::new(std.sample(rng), std.sample(rng));
            x.kinematics.position + l * n
        })
        .collect()
}

/// Draws Poisson clutter uniformly over the region.
pub fn sample_clutter<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Vec<Vector2<f64>> {
    if params.clutter_rate == 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(params.clutter_rate)
        .map(|d| d.sample(rng) as usize)
        .unwrap_or(0);
    (0..count).map(|_| params.region.sample(rng)).collect()
}

// ---------------------------------------------------------------------------
// Motion model
// ---------------------------------------------------------------------------

/// Deterministic part of the nearly-constant-velocity transition.
pub fn transition_mean(e: &KinematicState, interval: f64) -> KinematicState {
    KinematicState {
        position: e.position + interval * e.velocity,
        velocity: e.velocity,
    }
}

/// Samples the nearly-constant-velocity transition. The process noise is
/// independent per axis with the continuous white-noise-acceleration
/// covariance [[T^3/3, T^2/2], [T^2/2, T]] scaled by sigma^2.
pub fn transition_sample<R: Rng + ?Sized>(
    e: &KinematicState,
    params: &ModelParams,
    rng: &mut R,
) -> KinematicState {
    let t = params.sampling_interval;
    let mut next = transition_mean(e, t);
    let sigma = params.process_noise_std;
    if sigma > 0.0 {
        // per-axis Cholesky factor of the noise block
        let a = sigma * (t * t * t / 3.0).sqrt();
        let b = sigma * 0.75f64.sqrt() * t.sqrt();
        let c = sigma * 0.5 * t.sqrt();
        let std = Normal::new(0.0, 1.0).unwrap();
        for axis in 0..2 {
            let (n1, n2): (f64, f64) = (std.sample(rng), std.sample(rng));
            next.position[axis] += a * n1;
            next.velocity[axis] += b * n1 + c * n2;
        }
    }
    next
}

/// Log transition density of `next` given `prev`; requires positive process
/// noise.
pub fn transition_log_density(
    next: &KinematicState,
    prev: &KinematicState,
    params: &ModelParams,
) -> Result<f64> {
    let t = params.sampling_interval;
    let s2 = params.process_noise_std * params.process_noise_std;
    if !(s2 > 0.0) {
        return Err(EotError::InvalidParameter(
            "transition density undefined for zero process noise".into(),
        ));
    }
    let block = Matrix2::new(t * t * t / 3.0, t * t / 2.0, t * t / 2.0, t) * s2;
    let mean = transition_mean(prev, t);
    let mut log = 0.0;
    for axis in 0..2 {
        let x = Vector2::new(next.position[axis], next.velocity[axis]);
        let m = Vector2::new(mean.position[axis], mean.velocity[axis]);
        log += gaussian2_logpdf(&x, &m, &block).ok_or(EotError::NotSpd)?;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Gamma-prior expectations
// ---------------------------------------------------------------------------

/// Expected empty-set likelihood under a gamma rate prior: the detection
/// term averages exp(-rate) via the gamma moment generating function,
/// giving 1 - p_detect + p_detect * (rate / (rate + 1))^shape.
pub fn expected_empty_likelihood_gamma(p_detect: f64, shape: f64, rate: f64) -> f64 {
    let log_mgf = -shape * (1.0 / rate).ln_1p();
    1.0 - p_detect + p_detect * log_mgf.exp()
}

// ---------------------------------------------------------------------------
// Parametric log-densities and samplers for intensity/birth blocks
// ---------------------------------------------------------------------------

/// Log-density of a uniform position over a rectangle.
pub fn log_uniform_rect(p: &Vector2<f64>, rect: &Rect) -> f64 {
    if rect.contains(p) {
        -rect.area().ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-density of a gamma distribution in shape/rate form.
pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density of a 2x2 inverse-Wishart with the given degrees of freedom
/// and mean matrix.
pub fn log_inverse_wishart2(e: &Matrix2<f64>, spec: &InverseWishartSpec) -> f64 {
    let det_e = e.determinant();
    if !(det_e > 0.0) {
        return f64::NEG_INFINITY;
    }
    let psi = spec.scale();
    let nu = spec.dof;
    let det_psi = psi.determinant();
    let half_nu = 0.5 * nu;
    // multivariate (p = 2) log gamma
    let ln_gamma2 = 0.5 * std::f64::consts::PI.ln() + ln_gamma(half_nu) + ln_gamma(half_nu - 0.5);
    let inv_e = Matrix2::new(e[(1, 1)], -e[(0, 1)], -e[(1, 0)], e[(0, 0)]) / det_e;
    let trace = (psi * inv_e).trace();
    half_nu * det_psi.ln() - nu * 2.0f64.ln() - ln_gamma2
        - 0.5 * (nu + 3.0) * det_e.ln()
        - 0.5 * trace
}

/// Log-density of one intensity component at a full object state.
pub fn intensity_component_log_density(c: &IntensityComponent, x: &ObjectState) -> f64 {
    log_uniform_rect(&x.kinematics.position, &c.position)
        + gaussian2_logpdf(&x.kinematics.velocity, &c.velocity.mean, &c.velocity.cov)
            .unwrap_or(f64::NEG_INFINITY)
        + log_inverse_wishart2(x.extent.matrix(), &c.extent)
        + log_gamma_pdf(x.rate, c.rate.shape, c.rate.rate)
}

/// Log of the total intensity (sum over components, weights included) at a
/// full object state.
pub fn intensity_log_density(components: &[IntensityComponent], x: &ObjectState) -> f64 {
    let terms: Vec<f64> = components
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| c.weight.ln() + intensity_component_log_density(c, x))
        .collect();
    logsumexp(&terms)
}

pub fn sample_gamma_spec<R: Rng + ?Sized>(spec: &GammaSpec, rng: &mut R) -> f64 {
    GammaDist::new(spec.shape, 1.0 / spec.rate)
        .expect("gamma spec must be valid")
        .sample(rng)
}

/// Samples a 2x2 Wishart with `dof` degrees of freedom and scale matrix
/// `scale` (mean = dof * scale) by Bartlett decomposition.
pub fn sample_wishart2<R: Rng + ?Sized>(dof: f64, scale: &Matrix2<f64>, rng: &mut R) -> Matrix2<f64> {
    let l = chol2(scale).expect("scale must be SPD");
    let c1 = GammaDist::new(0.5 * dof, 2.0).unwrap().sample(rng);
    let c2 = GammaDist::new(0.5 * (dof - 1.0), 2.0).unwrap().sample(rng);
    let n21 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    let a = Matrix2::new(c1.sqrt(), 0.0, n21, c2.sqrt());
    let la = l * a;
    let w = la * la.transpose();
    0.5 * (w + w.transpose())
}

/// Samples a 2x2 inverse-Wishart from its spec (dof, mean).
pub fn sample_inverse_wishart2<R: Rng + ?Sized>(
    spec: &InverseWishartSpec,
    rng: &mut R,
) -> Matrix2<f64> {
    let psi = spec.scale();
    let det = psi.determinant();
    let psi_inv = Matrix2::new(psi[(1, 1)], -psi[(0, 1)], -psi[(1, 0)], psi[(0, 0)]) / det;
    let w = sample_wishart2(spec.dof, &psi_inv, rng);
    let det_w = w.determinant();
    let inv = Matrix2::new(w[(1, 1)], -w[(0, 1)], -w[(1, 0)], w[(0, 0)]) / det_w;
    0.5 * (inv + inv.transpose())
}

/// Samples velocity, extent, and rate from a birth spec; the position is
/// supplied by the caller (uniform for birth, measurement-driven for new
/// component proposals).
pub fn sample_birth_blocks<R: Rng + ?Sized>(
    birth: &BirthSpec,
    position: Vector2<f64>,
    rng: &mut R,
) -> ObjectState {
    let velocity = sample_gaussian2(&birth.velocity.mean, &birth.velocity.cov, rng);
    let extent = sample_inverse_wishart2(&birth.extent, rng);
    let rate = sample_gamma_spec(&birth.rate, rng);
    ObjectState {
        kinematics: KinematicState { position, velocity },
        extent: crate::types::ExtentMatrix(extent),
        rate,
    }
}

/// Log-density of the measurement-driven proposal used for new components:
/// Gaussian position centered on the measurement with covariance equal to
/// the birth extent mean; velocity, extent, and rate from the birth spec.
pub fn new_component_proposal_logpdf(
    x: &ObjectState,
    z: &Vector2<f64>,
    birth: &BirthSpec,
) -> f64 {
    gaussian2_logpdf(&x.kinematics.position, z, &birth.extent.mean).unwrap_or(f64::NEG_INFINITY)
        + gaussian2_logpdf(&x.kinematics.velocity, &birth.velocity.mean, &birth.velocity.cov)
            .unwrap_or(f64::NEG_INFINITY)
        + log_inverse_wishart2(x.extent.matrix(), &birth.extent)
        + log_gamma_pdf(x.rate, birth.rate.shape, birth.rate.rate)
}

/// Samples one new-component proposal state around a measurement.
pub fn sample_new_component_state<R: Rng + ?Sized>(
    z: &Vector2<f64>,
    birth: &BirthSpec,
    rng: &mut R,
) -> ObjectState {
    let position = sample_gaussian2(z, &birth.extent.mean, rng);
    sample_birth_blocks(birth, position, rng)
}

/// Log of the empty-set likelihood, split out for reuse on particle tables.
pub fn log_empty_set_likelihood(pd: f64, rate: f64) -> f64 {
    logaddexp((1.0 - pd).ln(), pd.ln() - rate)
}
