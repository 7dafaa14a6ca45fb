//! Core domain types: object states, particle sets, Bernoulli and
//! Poisson-intensity components, and model parameters.
//!
//! All types are plain immutable values; nothing here holds shared mutable
//! state, so everything is safe to copy across threads.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{EotError, Result};

/// Absolute tolerance on the symmetry of an extent matrix.
pub const SPD_SYMMETRY_TOL: f64 = 1e-12;
/// Tolerance on particle-weight normalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Axis-aligned rectangle, used for the surveillance region and for
/// uniform birth positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    /// Square region centered at the origin with the given half-width.
    pub fn centered(half_width: f64) -> Self {
        Self::new(-half_width, half_width, -half_width, half_width)
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min) || !self.area().is_finite()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vector2<f64> {
        Vector2::new(
            rng.gen_range(self.x_min..self.x_max),
            rng.gen_range(self.y_min..self.y_max),
        )
    }
}

/// 2D position (m) and velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

impl KinematicState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self {
            position: Vector2::new(px, py),
            velocity: Vector2::new(vx, vy),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }
}

/// Symmetric positive definite 2x2 extent matrix (m^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtentMatrix(pub Matrix2<f64>);

impl ExtentMatrix {
    /// Validates symmetry and positive definiteness.
    pub fn new(m: Matrix2<f64>) -> Result<Self> {
        if validate_spd(&m) {
            Ok(Self(m))
        } else {
            Err(EotError::NotSpd)
        }
    }

    /// Applies (M + M^T)/2 before validating; use after arithmetic that can
    /// introduce roundoff asymmetry.
    pub fn symmetrized(m: Matrix2<f64>) -> Result<Self> {
        Self::new(0.5 * (m + m.transpose()))
    }

    pub fn isotropic(v: f64) -> Self {
        Self(Matrix2::identity() * v)
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }
}

/// Full single-object state: kinematics, extent, and the expected number of
/// measurements per scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub kinematics: KinematicState,
    pub extent: ExtentMatrix,
    pub rate: f64,
}

impl ObjectState {
    pub fn validate(&self) -> Result<()> {
        if !self.kinematics.is_finite() {
            return Err(EotError::InvalidParameter("non-finite kinematics".into()));
        }
        if !validate_spd(self.extent.matrix()) {
            return Err(EotError::NotSpd);
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(EotError::InvalidParameter(format!("rate {} not positive", self.rate)));
        }
        Ok(())
    }
}

/// A single sensor detection with its scan-local 1-based index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: Vector2<f64>,
    pub index: usize,
}

impl Measurement {
    pub fn new(x: f64, y: f64, index: usize) -> Self {
        Self { value: Vector2::new(x, y), index }
    }
}

/// Particle representation of a single-object density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedParticleSet {
    pub particles: Vec<ObjectState>,
    pub weights: Vec<f64>,
}

impl WeightedParticleSet {
    /// Requires weights already normalized to 1 within [`WEIGHT_SUM_TOL`].
    pub fn new(particles: Vec<ObjectState>, weights: Vec<f64>) -> Result<Self> {
        let set = Self { particles, weights };
        set.validate()?;
        Ok(set)
    }

    /// Normalizes raw non-negative weights.
    pub fn from_unnormalized(particles: Vec<ObjectState>, raw: &[f64]) -> Result<Self> {
        let (weights, _) = normalize_weights(raw)?;
        Self::new(particles, weights)
    }

    /// Equal weights over the given particles.
    pub fn uniform(particles: Vec<ObjectState>) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles.is_empty() {
            return Err(EotError::InvalidParameter("empty particle set".into()));
        }
        if self.particles.len() != self.weights.len() {
            return Err(EotError::InvalidParameter("particle/weight length mismatch".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EotError::DegenerateWeights("negative or non-finite weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(EotError::Unnormalized { sum });
        }
        Ok(())
    }
}

/// A potential object: existence probability plus a particle density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliComponent {
    pub existence: f64,
    pub density: WeightedParticleSet,
    /// Bookkeeping identifier, unique within one filter run.
    pub label: u64,
}

impl BernoulliComponent {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.existence) || !self.existence.is_finite() {
            return Err(EotError::InvalidParameter(format!(
                "existence {} outside [0, 1]",
                self.existence
            )));
        }
        self.density.validate()
    }
}

/// Gaussian block of a birth/intensity specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Inverse-Wishart block, parameterized by degrees of freedom and mean
/// matrix (scale = mean * (dof - 3) for 2x2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseWishartSpec {
    pub dof: f64,
    pub mean: Matrix2<f64>,
}

impl InverseWishartSpec {
    pub fn scale(&self) -> Matrix2<f64> {
        self.mean * (self.dof - 3.0)
    }
}

/// Gamma block in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub shape: f64,
    pub rate: f64,
}

impl GammaSpec {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// One component of the Poisson intensity for undetected objects. The
/// spatial position is uniform over a rectangle; velocity, extent, and rate
/// carry parametric priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityComponent {
    /// Expected object count carried by this component.
    pub weight: f64,
    pub position: Rect,
    pub velocity: GaussianSpec,
    pub extent: InverseWishartSpec,
    pub rate: GammaSpec,
}

impl IntensityComponent {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(EotError::InvalidParameter("intensity weight < 0".into()));
        }
        if self.position.is_degenerate() {
            return Err(EotError::InvalidParameter("degenerate position rectangle".into()));
        }
        if !validate_spd(&self.velocity.cov) {
            return Err(EotError::NotSpd);
        }
        if !(self.extent.dof > 3.0) || !validate_spd(&self.extent.mean) {
            return Err(EotError::InvalidParameter("inverse-Wishart spec invalid".into()));
        }
        if !(self.rate.shape > 0.0 && self.rate.rate > 0.0) {
            return Err(EotError::InvalidParameter("gamma spec invalid".into()));
        }
        Ok(())
    }

    /// True when the distribution blocks (everything but the weight) match
    /// exactly; such components can be merged by weight addition.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.position == other.position
            && self.velocity == other.velocity
            && self.extent == other.extent
            && self.rate == other.rate
    }
}

/// Poisson multi-Bernoulli density: analytic intensity for undetected
/// objects plus particle Bernoulli components for detected ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PmbDensity {
    pub intensity: Vec<IntensityComponent>,
    pub bernoullis: Vec<BernoulliComponent>,
}

impl PmbDensity {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.intensity {
            c.validate()?;
        }
        for b in &self.bernoullis {
            b.validate()?;
        }
        Ok(())
    }

    /// Expected number of undetected objects.
    pub fn undetected_mass(&self) -> f64 {
        self.intensity.iter().map(|c| c.weight).sum()
    }

    pub fn next_label(&self) -> u64 {
        self.bernoullis.iter().map(|b| b.label + 1).max().unwrap_or(0)
    }
}

/// Birth specification shared by the intensity prediction and the
/// measurement-driven proposal for new components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthSpec {
    pub position: Rect,
    pub velocity: GaussianSpec,
    pub extent: InverseWishartSpec,
    pub rate: GammaSpec,
}

impl BirthSpec {
    pub fn component(&self, weight: f64) -> IntensityComponent {
        IntensityComponent {
            weight,
            position: self.position,
            velocity: self.velocity,
            extent: self.extent,
            rate: self.rate,
        }
    }
}

/// Parameters of the prediction proposals. Non-finite degrees of freedom or
/// rate select the degenerate proposal that copies the value unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    /// Degrees of freedom of the mean-preserving Wishart extent proposal.
    pub wishart_dof: f64,
    /// Rate of the mean-preserving gamma rate proposal.
    pub gamma_rate: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self { wishart_dof: 10_000.0, gamma_rate: 10_000.0 }
    }
}

/// Scalar model parameters plus the birth specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p_detect: f64,
    pub p_survive: f64,
    /// Expected clutter count per scan.
    pub clutter_rate: f64,
    pub region: Rect,
    /// Sampling interval T (s).
    pub sampling_interval: f64,
    /// Process noise standard deviation.
    pub process_noise_std: f64,
    /// Expected births per scan.
    pub birth_rate: f64,
    pub birth: BirthSpec,
    #[serde(default)]
    pub proposal: ProposalParams,
}

impl ModelParams {
    /// Default scalar parameter set: survival 0.99, clutter 10 over a
    /// 300 m x 300 m region, T = 0.2 s, process noise 0.8. The birth prior
    /// has uniform position over the region, zero-mean velocity with
    /// covariance 225 I, inverse-Wishart extent (dof 100, mean 5 I), and a
    /// gamma measurement rate with mean `rate_mean`, rate 100.
    pub fn standard(p_detect: f64, rate_mean: f64) -> Self {
        let region = Rect::centered(150.0);
        Self {
            p_detect,
            p_survive: 0.99,
            clutter_rate: 10.0,
            region,
            sampling_interval: 0.2,
            process_noise_std: 0.8,
            birth_rate: 0.01,
            birth: BirthSpec {
                position: region,
                velocity: GaussianSpec {
                    mean: Vector2::zeros(),
                    cov: Matrix2::identity() * 225.0,
                },
                extent: InverseWishartSpec { dof: 100.0, mean: Matrix2::identity() * 5.0 },
                rate: GammaSpec { shape: 100.0 * rate_mean, rate: 100.0 },
            },
            proposal: ProposalParams::default(),
        }
    }

    /// Detection probability hook; currently a global scalar.
    #[inline]
    pub fn p_d(&self, _x: &ObjectState) -> f64 {
        self.p_detect
    }

    /// Mismatched-model variant: detection probability forced to 1 and the
    /// birth rate prior scaled so its mean becomes p_detect * mean.
    pub fn to_ppp_mode(&self) -> Self {
        let mut p = self.clone();
        p.birth.rate.shape *= self.p_detect;
        p.p_detect = 1.0;
        p
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_detect", self.p_detect), ("p_survive", self.p_survive)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EotError::InvalidParameter(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.clutter_rate < 0.0 || self.birth_rate < 0.0 {
            return Err(EotError::InvalidParameter("negative rate".into()));
        }
        if self.region.is_degenerate() {
            return Err(EotError::InvalidParameter("degenerate region".into()));
        }
        if !(self.sampling_interval > 0.0) {
            return Err(EotError::InvalidParameter("sampling interval must be > 0".into()));
        }
        self.birth.component(self.birth_rate).validate()
    }
}

/// Normalizes non-negative weights; returns the normalized vector and the
/// input sum. Order is preserved.
pub fn normalize_weights(weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    if weights.is_empty() {
        return Err(EotError::DegenerateWeights("empty input".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(EotError::DegenerateWeights("negative or non-finite weight".into()));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(EotError::DegenerateWeights("all-zero input".into()));
    }
    Ok((weights.iter().map(|w| w / sum).collect(), sum))
}

/// Minimum eigenvalue of a symmetric 2x2 matrix (closed form).
fn min_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m.determinant();
    let disc = (half_trace * half_trace - det).max(0.0);
    half_trace - disc.sqrt()
}

/// True iff `m` is finite, symmetric within [`SPD_SYMMETRY_TOL`], and has a
/// strictly positive minimum eigenvalue.
pub fn validate_spd(m: &Matrix2<f64>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if (m[(0, 1)] - m[(1, 0)]).abs() > SPD_SYMMETRY_TOL {
        return false;
    }
    let sym = 0.5 * (m + m.transpose());
    min_eigenvalue_2x2(&sym) > 0.0
}

/// Effective sample size 1 / sum(w^2) of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(EotError::Unnormalized { sum });
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(1.0 / sq)
}
