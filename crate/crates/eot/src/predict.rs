//! Time prediction of the multi-object density.
//!
//! The Poisson intensity for undetected objects stays analytic: surviving
//! component weights decay by the survival probability and a fresh birth
//! component is appended each step. Component distribution parameters are
//! held fixed rather than transported through the motion model; the uniform
//! birth position spec is approximately invariant under the motion model
//! away from the region boundary, and identical components merge by weight
//! addition so the list stays compact. Bernoulli components are propagated
//! by particles.

use rand::Rng;

use crate::error::{EotError, Result};
use crate::models::{sample_gamma_spec, sample_wishart2, transition_sample};
use crate::types::{
    BernoulliComponent, ExtentMatrix, GammaSpec, IntensityComponent, ModelParams, ObjectState,
    PmbDensity, WeightedParticleSet,
};

/// Cap on the number of intensity components kept after prediction; the
/// oldest components are merged when it is exceeded.
pub const MAX_INTENSITY_COMPONENTS: usize = 20;

/// Predicts the undetected-object intensity: survival-scaled weights plus
/// one birth component, with identical parameter blocks merged.
pub fn predict_intensity(
    intensity: &[IntensityComponent],
    params: &ModelParams,
) -> Vec<IntensityComponent> {
    let mut out: Vec<IntensityComponent> = Vec::with_capacity(intensity.len() + 1);
    for c in intensity {
        let scaled = IntensityComponent { weight: c.weight * params.p_survive, ..c.clone() };
        merge_or_push(&mut out, scaled);
    }
    merge_or_push(&mut out, params.birth.component(params.birth_rate));
    while out.len() > MAX_INTENSITY_COMPONENTS {
        let merged = out.remove(1);
        out[0].weight += merged.weight;
    }
    out
}

fn merge_or_push(list: &mut Vec<IntensityComponent>, c: IntensityComponent) {
    if let Some(existing) = list.iter_mut().find(|e| e.same_shape(&c)) {
        existing.weight += c.weight;
    } else {
        list.push(c);
    }
}

/// Predicts one Bernoulli component with the bootstrap kinematic proposal,
/// a mean-preserving Wishart extent proposal, and a mean-preserving gamma
/// rate proposal. With the bootstrap choice the importance ratio is one, so
/// normalized weights carry over unchanged and the existence decays by the
/// survival probability.
pub fn predict_bernoulli<R: Rng + ?Sized>(
    comp: &BernoulliComponent,
    params: &ModelParams,
    rng: &mut R,
) -> Result<BernoulliComponent> {
    comp.density.validate()?;
    let wishart_dof = params.proposal.wishart_dof;
    let gamma_rate = params.proposal.gamma_rate;

    let mut particles = Vec::with_capacity(comp.density.len());
    for p in &comp.density.particles {
        let kinematics = transition_sample(&p.kinematics, params, rng);
        let extent = if wishart_dof.is_finite() {
            let scale = p.extent.matrix() / wishart_dof;
            ExtentMatrix(sample_wishart2(wishart_dof, &scale, rng))
        } else {
            p.extent
        };
        let rate = if gamma_rate.is_finite() {
            sample_gamma_spec(&GammaSpec { shape: gamma_rate * p.rate, rate: gamma_rate }, rng)
        } else {
            p.rate
        };
        particles.push(ObjectState { kinematics, extent, rate });
    }

    // constant survival probability: weights unchanged, existence scaled
    let raw: Vec<f64> = comp.density.weights.iter().map(|w| w * params.p_survive).collect();
    if raw.iter().sum::<f64>() <= 0.0 {
        return Err(EotError::DegenerateWeights("all-zero predicted weights".into()));
    }
    let predicted_existence = comp.existence
        * comp
            .density
            .weights
            .iter()
            .zip(&comp.density.particles)
            .map(|(w, p)| w * survival_probability(params, p))
            .sum::<f64>();

    Ok(BernoulliComponent {
        existence: predicted_existence,
        density: WeightedParticleSet::from_unnormalized(particles, &raw)?,
        label: comp.label,
    })
}

#[inline]
fn survival_probability(params: &ModelParams, _x: &ObjectState) -> f64 {
    params.p_survive
}

/// Predicts a full PMB density.
pub fn predict<R: Rng + ?Sized>(
    pmb: &PmbDensity,
    params: &ModelParams,
    rng: &mut R,
) -> Result<PmbDensity> {
    let intensity = predict_intensity(&pmb.intensity, params);
    let bernoullis = pmb
        .bernoullis
        .iter()
        .map(|b| predict_bernoulli(b, params, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(PmbDensity { intensity, bernoullis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{GaussianSpec, KinematicState};
    use nalgebra::{Matrix2, Vector2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams::standard(0.9, 10.0)
    }

    #[test]
    fn empty_intensity_gets_single_birth() {
        let p = params();
        let out = predict_intensity(&[], &p);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].weight, 0.01);
        assert!(out[0].same_shape(&p.birth.component(0.0)));
    }

    #[test]
    fn survival_decay_and_merging() {
        let p = params();
        // a component with a different shape than the birth spec
        let mut odd = p.birth.component(0.5);
        odd.rate = GammaSpec { shape: 500.0, rate: 100.0 };
        let out = predict_intensity(std::slice::from_ref(&odd), &p);
        assert_eq!(out.len(), 2);
        assert!((out[0].weight - 0.495).abs() < 1e-15);
        assert_eq!(out[1].weight, 0.01);

        // identical shape merges into a single component
        let birth_like = p.birth.component(0.5);
        let merged = predict_intensity(std::slice::from_ref(&birth_like), &p);
        assert_eq!(merged.len(), 1);
        assert!((merged[0].weight - (0.495 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn zero_survival_leaves_only_birth_mass() {
        let mut p = params();
        p.p_survive = 0.0;
        let mut odd = p.birth.component(0.7);
        odd.rate = GammaSpec { shape: 1.0, rate: 1.0 };
        let out = predict_intensity(std::slice::from_ref(&odd), &p);
        let total: f64 = out.iter().map(|c| c.weight).sum();
        assert!((total - 0.01).abs() < 1e-15);
    }

    #[test]
    fn total_mass_is_affine_with_fixed_point_one() {
        let p = params();
        let mut intensity = Vec::new();
        let mut mass = 0.0;
        for _ in 0..600 {
            intensity = predict_intensity(&intensity, &p);
            mass = intensity.iter().map(|c| c.weight).sum();
        }
        assert!((mass - 1.0).abs() < 3e-3, "steady-state mass {mass}");
        assert!(intensity.len() <= MAX_INTENSITY_COMPONENTS);
    }

    fn bernoulli(weights: &[f64]) -> BernoulliComponent {
        let particles: Vec<ObjectState> = (0..weights.len())
            .map(|i| ObjectState {
                kinematics: KinematicState::new(i as f64, 0.0, 10.0, 0.0),
                extent: ExtentMatrix::isotropic(5.0),
                rate: 10.0,
            })
            .collect();
        BernoulliComponent {
            existence: 0.5,
            density: WeightedParticleSet::new(particles, weights.to_vec()).unwrap(),
            label: 3,
        }
    }

    #[test]
    fn bernoulli_prediction_existence_and_weights() {
        let p = params();
        let comp = bernoulli(&[0.2, 0.3, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = predict_bernoulli(&comp, &p, &mut rng).unwrap();
        assert!((out.existence - 0.495).abs() < 1e-15);
        // bootstrap proposal with constant survival: weights unchanged
        for (a, b) in out.density.weights.iter().zip(&comp.density.weights) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.density.len(), comp.density.len());
        assert_eq!(out.label, 3);
        out.density.validate().unwrap();
    }

    #[test]
    fn degenerate_proposals_shift_deterministically() {
        let mut p = params();
        p.process_noise_std = 0.0;
        p.proposal.wishart_dof = f64::INFINITY;
        p.proposal.gamma_rate = f64::INFINITY;
        let comp = bernoulli(&[0.4, 0.6]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = predict_bernoulli(&comp, &p, &mut rng).unwrap();
        for (next, prev) in out.density.particles.iter().zip(&comp.density.particles) {
            let expected = prev.kinematics.position + 0.2 * prev.kinematics.velocity;
            assert!((next.kinematics.position - expected).norm() < 1e-12);
            assert_eq!(next.extent, prev.extent);
            assert_eq!(next.rate, prev.rate);
        }
    }

    #[test]
    fn predicted_existence_never_exceeds_prior() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let r = rng.gen_range(0.0..1.0);
            let comp = BernoulliComponent { existence: r, ..bernoulli(&[0.5, 0.5]) };
            let out = predict_bernoulli(&comp, &p, &mut rng).unwrap();
            assert!(out.existence <= r + 1e-15, "trial {trial}");
        }
    }

    #[test]
    fn proposal_jitter_is_mean_preserving() {
        let p = params();
        let comp = bernoulli(&[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 20_000;
        let mut extent_acc = Matrix2::zeros();
        let mut rate_acc = 0.0;
        for _ in 0..n {
            let out = predict_bernoulli(&comp, &p, &mut rng).unwrap();
            extent_acc += *out.density.particles[0].extent.matrix();
            rate_acc += out.density.particles[0].rate;
        }
        let extent_mean = extent_acc / n as f64;
        assert!((extent_mean - Matrix2::identity() * 5.0).norm() < 0.05);
        assert!((rate_acc / n as f64 - 10.0).abs() < 0.01);
    }

    #[test]
    fn full_density_prediction() {
        let p = params();
        let pmb = PmbDensity {
            intensity: vec![p.birth.component(0.3)],
            bernoullis: vec![bernoulli(&[0.25; 4])],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let out = predict(&pmb, &p, &mut rng).unwrap();
        out.validate().unwrap();
        assert_eq!(out.bernoullis.len(), 1);
        let mass: f64 = out.intensity.iter().map(|c| c.weight).sum();
        assert!((mass - (0.3 * 0.99 + 0.01)).abs() < 1e-15);
        // velocity spec untouched by prediction
        assert_eq!(
            out.intensity[0].velocity,
            GaussianSpec { mean: Vector2::zeros(), cov: Matrix2::identity() * 225.0 }
        );
    }
}
