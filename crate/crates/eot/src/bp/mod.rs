//! The per-scan update engine: factor-graph construction, parallel loopy
//! message-passing rounds, belief extraction, and the posterior-side
//! housekeeping (intensity update, pruning, resampling, state extraction).

mod messages;
mod problem;

pub use messages::{closed, compute_beliefs, init_messages, run_bp_iteration, Belief, MessageState, ParticleMessage};
pub use problem::{
    build_update_problem, build_update_problem_with_supports, censoring_and_reordering,
    NewComponentInit, UpdateOptions, UpdateProblem,
};

use rand::Rng;

use crate::error::{EotError, Result};
use crate::models::expected_empty_likelihood_gamma;
use crate::types::{
    BernoulliComponent, IntensityComponent, Measurement, ModelParams, ObjectState, PmbDensity,
    WeightedParticleSet,
};

/// Update-engine configuration: number of parallel rounds, particle count
/// for new components, and optional preprocessing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpConfig {
    pub iterations: usize,
    pub particles: usize,
    pub options: UpdateOptions,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self { iterations: 3, particles: 5000, options: UpdateOptions::default() }
    }
}

/// Scales each intensity component by its expected empty-set likelihood
/// under the gamma rate prior (the missed-detection posterior factor).
pub fn update_intensity_posterior(
    intensity: &[IntensityComponent],
    params: &ModelParams,
) -> Vec<IntensityComponent> {
    intensity
        .iter()
        .map(|c| IntensityComponent {
            weight: c.weight
                * expected_empty_likelihood_gamma(params.p_detect, c.rate.shape, c.rate.rate),
            ..c.clone()
        })
        .collect()
}

/// Full measurement update of a predicted PMB density: builds the factor
/// graph, runs the configured number of parallel rounds, converts beliefs
/// into Bernoulli components (one per prior component plus one per
/// measurement), and updates the undetected-object intensity.
/// Deterministic given the inputs and the generator state.
pub fn bp_update<R: Rng + ?Sized>(
    pmb: &PmbDensity,
    measurements: &[Measurement],
    params: &ModelParams,
    cfg: &BpConfig,
    rng: &mut R,
) -> Result<PmbDensity> {
    if cfg.iterations == 0 {
        return Err(EotError::InvalidParameter("at least one iteration required".into()));
    }
    let problem = build_update_problem(pmb, measurements, params, cfg.particles, rng)?;
    let problem = censoring_and_reordering(problem, cfg.options)?;
    finish_update(pmb, &problem, cfg.iterations)
}

/// Runs the rounds and assembles the posterior from an already-built
/// problem.
pub fn finish_update(pmb: &PmbDensity, problem: &UpdateProblem, iterations: usize) -> Result<PmbDensity> {
    let mut msgs = init_messages(problem);
    for _ in 0..iterations {
        msgs = run_bp_iteration(problem, &msgs)?;
    }
    let beliefs = compute_beliefs(problem, &msgs)?;
    let n = problem.n_prior();

    let mut bernoullis = Vec::with_capacity(beliefs.len());
    let mut next_label = pmb.next_label();
    for (i, belief) in beliefs.iter().enumerate() {
        if i < n {
            bernoullis.push(BernoulliComponent {
                existence: belief.existence,
                density: WeightedParticleSet::new(
                    problem.prior[i].density.particles.clone(),
                    belief.weights.clone(),
                )?,
                label: problem.prior[i].label,
            });
        } else {
            bernoullis.push(BernoulliComponent {
                existence: belief.existence,
                density: problem::init_particle_set(
                    &problem.new_components[i - n],
                    belief.weights.clone(),
                )?,
                label: next_label,
            });
            next_label += 1;
        }
    }
    Ok(PmbDensity {
        intensity: update_intensity_posterior(&pmb.intensity, &problem.params),
        bernoullis,
    })
}

/// Removes Bernoulli components with existence below the threshold.
pub fn prune_components(pmb: &PmbDensity, threshold: f64) -> PmbDensity {
    PmbDensity {
        intensity: pmb.intensity.clone(),
        bernoullis: pmb
            .bernoullis
            .iter()
            .filter(|b| b.existence >= threshold)
            .cloned()
            .collect(),
    }
}

/// Systematic resampling: draws one uniform offset and selects particles at
/// the evenly spaced quantiles, returning uniform weights.
pub fn resample_systematic<R: Rng + ?Sized>(
    set: &WeightedParticleSet,
    rng: &mut R,
) -> Result<WeightedParticleSet> {
    set.validate()?;
    let l = set.len();
    let offset: f64 = rng.gen::<f64>();
    let mut particles = Vec::with_capacity(l);
    let mut cumulative = set.weights[0];
    let mut idx = 0usize;
    for k in 0..l {
        let target = (k as f64 + offset) / l as f64;
        while cumulative < target && idx + 1 < l {
            idx += 1;
            cumulative += set.weights[idx];
        }
        particles.push(set.particles[idx]);
    }
    WeightedParticleSet::new(particles, vec![1.0 / l as f64; l])
}

/// Extracts one state estimate from every Bernoulli component with
/// existence strictly above the threshold, by weighted averaging of the
/// particle states (extent averaged entrywise and symmetrized).
pub fn extract_estimates(pmb: &PmbDensity, threshold: f64) -> Vec<ObjectState> {
    pmb.bernoullis
        .iter()
        .filter(|b| b.existence > threshold)
        .map(|b| {
            let mut position = nalgebra::Vector2::zeros();
            let mut velocity = nalgebra::Vector2::zeros();
            let mut extent = nalgebra::Matrix2::zeros();
            let mut rate = 0.0;
            for (x, w) in b.density.particles.iter().zip(&b.density.weights) {
                position += *w * x.kinematics.position;
                velocity += *w * x.kinematics.velocity;
                extent += *w * x.extent.matrix();
                rate += w * x.rate;
            }
            ObjectState {
                kinematics: crate::types::KinematicState { position, velocity },
                extent: crate::types::ExtentMatrix(0.5 * (extent + extent.transpose())),
                rate,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ExtentMatrix, KinematicState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(px: f64, py: f64, rate: f64) -> ObjectState {
        ObjectState {
            kinematics: KinematicState::new(px, py, 0.0, 0.0),
            extent: ExtentMatrix::isotropic(2.0),
            rate,
        }
    }

    fn bernoulli(existence: f64, states: &[(ObjectState, f64)], label: u64) -> BernoulliComponent {
        BernoulliComponent {
            existence,
            density: WeightedParticleSet::new(
                states.iter().map(|(x, _)| *x).collect(),
                states.iter().map(|(_, w)| *w).collect(),
            )
            .unwrap(),
            label,
        }
    }

    fn params() -> ModelParams {
        ModelParams::standard(0.9, 5.0)
    }

    #[test]
    fn empty_scan_reduces_to_misdetection_update() {
        let p = params();
        let prior = bernoulli(0.8, &[(state(0.0, 0.0, 4.0), 0.3), (state(5.0, 0.0, 6.0), 0.7)], 1);
        let pmb = PmbDensity { intensity: vec![p.birth.component(0.05)], bernoullis: vec![prior.clone()] };
        let cfg = BpConfig { iterations: 3, particles: 10, options: UpdateOptions::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = bp_update(&pmb, &[], &p, &cfg, &mut rng).unwrap();

        // closed-form misdetection update
        let e1 = 0.1 + 0.9 * (-4.0f64).exp();
        let e2 = 0.1 + 0.9 * (-6.0f64).exp();
        let avg = 0.3 * e1 + 0.7 * e2;
        let expect_r = 0.8 * avg / (1.0 - 0.8 + 0.8 * avg);
        assert_eq!(out.bernoullis.len(), 1);
        assert!((out.bernoullis[0].existence - expect_r).abs() < 1e-12);
        assert!((out.bernoullis[0].density.weights[0] - 0.3 * e1 / avg).abs() < 1e-12);

        // intensity scaled by the gamma-expected empty likelihood
        let factor = expected_empty_likelihood_gamma(0.9, p.birth.rate.shape, p.birth.rate.rate);
        assert!((out.intensity[0].weight - 0.05 * factor).abs() < 1e-15);
        // particle states unchanged
        assert_eq!(out.bernoullis[0].density.particles, prior.density.particles);
    }

    #[test]
    fn intensity_update_edge_cases() {
        let mut p = params();
        let comps = vec![p.birth.component(0.4)];
        p.p_detect = 0.0;
        let out = update_intensity_posterior(&comps, &p);
        assert_eq!(out[0].weight, 0.4);

        // near point-mass rate prior with full detection: factor ~ exp(-rate)
        p.p_detect = 1.0;
        let mut comp = p.birth.component(1.0);
        comp.rate = crate::types::GammaSpec { shape: 3.0e8, rate: 1.0e8 };
        let out = update_intensity_posterior(&[comp], &p);
        assert!((out[0].weight - (-3.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn single_new_component_existence_matches_closed_form() {
        // one measurement, no prior components, discrete intensity grid
        let p = params();
        let z = Measurement::new(1.0, 0.5, 1);
        let grid = [(state(0.0, 0.0, 5.0), 0.02), (state(2.0, 1.0, 5.0), 0.03)];
        let raw: Vec<f64> = grid
            .iter()
            .map(|(x, w)| w * p.p_detect * (-x.rate).exp())
            .collect();
        let problem = build_update_problem_with_supports(
            Vec::new(),
            &[z],
            &p,
            vec![(grid.iter().map(|(x, _)| *x).collect(), raw)],
        )
        .unwrap();
        let pmb = PmbDensity::empty();
        let out = finish_update(&pmb, &problem, 3).unwrap();

        let detected: f64 = grid
            .iter()
            .map(|(x, w)| {
                w * p.p_detect
                    * (-x.rate).exp()
                    * x.rate
                    * crate::models::meas_likelihood(&z, x).unwrap()
            })
            .sum();
        let clutter = crate::models::clutter_intensity_at(&z.value, &p);
        let expect = detected / (detected + clutter);
        assert!(
            (out.bernoullis[0].existence - expect).abs() < 1e-12,
            "got {} want {expect}",
            out.bernoullis[0].existence
        );
    }

    #[test]
    fn iteration_is_pure_and_deterministic() {
        let p = params();
        let prior = bernoulli(0.7, &[(state(0.0, 0.0, 5.0), 0.5), (state(1.0, 1.0, 5.0), 0.5)], 1);
        let z = [Measurement::new(0.5, 0.2, 1), Measurement::new(4.0, -1.0, 2)];
        let pmb = PmbDensity { intensity: vec![p.birth.component(0.05)], bernoullis: vec![prior] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let problem = build_update_problem(&pmb, &z, &p, 50, &mut rng).unwrap();
        let msgs = init_messages(&problem);
        let a = run_bp_iteration(&problem, &msgs).unwrap();
        let b = run_bp_iteration(&problem, &msgs.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn new_component_init_matches_independent_recomputation() {
        // recompute the measurement-driven importance weights and initial
        // existence with explicit density formulas written here
        let p = params();
        let pmb = PmbDensity { intensity: vec![p.birth.component(0.2)], bernoullis: vec![] };
        let z = [Measurement::new(12.0, -7.0, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let particles = 64;
        let problem = build_update_problem(&pmb, &z, &p, particles, &mut rng).unwrap();
        let init = &problem.new_components[0];

        let ln_gauss2 = |x: &nalgebra::Vector2<f64>,
                         mean: &nalgebra::Vector2<f64>,
                         cov: &nalgebra::Matrix2<f64>| {
            let d = x - mean;
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            let q = (cov[(1, 1)] * d.x * d.x - 2.0 * cov[(0, 1)] * d.x * d.y
                + cov[(0, 0)] * d.y * d.y)
                / det;
            -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
        };
        let ln_gamma_pdf = |x: f64, a: f64, b: f64| {
            a * b.ln() - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * x.ln() - b * x
        };
        let ln_iw2 = |e: &nalgebra::Matrix2<f64>, dof: f64, mean: &nalgebra::Matrix2<f64>| {
            let psi = mean * (dof - 3.0);
            let det_e = e[(0, 0)] * e[(1, 1)] - e[(0, 1)] * e[(1, 0)];
            let det_psi = psi[(0, 0)] * psi[(1, 1)] - psi[(0, 1)] * psi[(1, 0)];
            let inv_e = nalgebra::Matrix2::new(e[(1, 1)], -e[(0, 1)], -e[(1, 0)], e[(0, 0)]) / det_e;
            let g2 = 0.5 * std::f64::consts::PI.ln()
                + statrs::function::gamma::ln_gamma(0.5 * dof)
                + statrs::function::gamma::ln_gamma(0.5 * dof - 0.5);
            0.5 * dof * det_psi.ln() - dof * 2.0f64.ln() - g2
                - 0.5 * (dof + 3.0) * det_e.ln()
                - 0.5 * (psi * inv_e).trace()
        };

        let birth = &p.birth;
        let mut raw_sum = 0.0;
        let mut raw = Vec::new();
        for x in &init.support {
            let pos = &x.kinematics.position;
            let vel = &x.kinematics.velocity;
            // intensity: weight * uniform position * velocity * extent * rate
            let ln_intensity = 0.2f64.ln() - p.region.area().ln()
                + ln_gauss2(vel, &birth.velocity.mean, &birth.velocity.cov)
                + ln_iw2(x.extent.matrix(), birth.extent.dof, &birth.extent.mean)
                + ln_gamma_pdf(x.rate, birth.rate.shape, birth.rate.rate);
            // proposal: position Gaussian at the measurement, rest from birth
            let ln_proposal = ln_gauss2(pos, &z[0].value, &birth.extent.mean)
                + ln_gauss2(vel, &birth.velocity.mean, &birth.velocity.cov)
                + ln_iw2(x.extent.matrix(), birth.extent.dof, &birth.extent.mean)
                + ln_gamma_pdf(x.rate, birth.rate.shape, birth.rate.rate);
            let inside = p.region.contains(pos);
            let w = if inside {
                (p.p_detect.ln() - x.rate + ln_intensity - ln_proposal
                    - (particles as f64).ln())
                .exp()
            } else {
                0.0
            };
            raw.push(w);
            raw_sum += w;
        }
        assert!((init.raw_sum - raw_sum).abs() <= 1e-12 * raw_sum.abs().max(1e-300));
        let expect_r = raw_sum / (1.0 + raw_sum);
        assert!((init.existence - expect_r).abs() < 1e-14);
        for (a, b) in init.weights.iter().zip(&raw) {
            assert!((a - b / raw_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn support_states_are_never_rewritten() {
        let p = params();
        let z = [Measurement::new(0.0, 0.0, 1)];
        let pmb = PmbDensity { intensity: vec![p.birth.component(0.05)], bernoullis: vec![] };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let problem = build_update_problem(&pmb, &z, &p, 40, &mut rng).unwrap();
        let support_before = problem.new_components[0].support.clone();
        let out = finish_update(&pmb, &problem, 3).unwrap();
        assert_eq!(out.bernoullis[0].density.particles, support_before);
    }

    #[test]
    fn prune_thresholding() {
        let p = params();
        let pmb = PmbDensity {
            intensity: vec![p.birth.component(0.05)],
            bernoullis: vec![
                bernoulli(0.5, &[(state(0.0, 0.0, 5.0), 1.0)], 1),
                bernoulli(1e-4, &[(state(0.0, 0.0, 5.0), 1.0)], 2),
            ],
        };
        assert_eq!(prune_components(&pmb, 1e-3).bernoullis.len(), 1);
        assert_eq!(prune_components(&pmb, 0.0).bernoullis.len(), 2);
        let all_above = prune_components(&pmb, 1e-5);
        assert_eq!(all_above.bernoullis.len(), 2);
    }

    #[test]
    fn systematic_resampling_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // degenerate weight vector: all copies of the single carrier
        let set = WeightedParticleSet::new(
            vec![state(0.0, 0.0, 1.0), state(1.0, 0.0, 1.0), state(2.0, 0.0, 1.0)],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let out = resample_systematic(&set, &mut rng).unwrap();
        assert!(out.particles.iter().all(|x| x.kinematics.position.x == 0.0));
        assert_eq!(out.weights, vec![1.0 / 3.0; 3]);

        // uniform weights: systematic selection keeps each particle once
        let uniform = WeightedParticleSet::new(
            vec![state(0.0, 0.0, 1.0), state(1.0, 0.0, 1.0), state(2.0, 0.0, 1.0)],
            vec![1.0 / 3.0; 3],
        )
        .unwrap();
        for _ in 0..20 {
            let out = resample_systematic(&uniform, &mut rng).unwrap();
            let mut xs: Vec<f64> =
                out.particles.iter().map(|x| x.kinematics.position.x).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(xs, vec![0.0, 1.0, 2.0]);
        }

        // expected copy counts within 3 sigma of L * w
        let weighted = WeightedParticleSet::new(
            vec![state(0.0, 0.0, 1.0), state(1.0, 0.0, 1.0), state(2.0, 0.0, 1.0), state(3.0, 0.0, 1.0)],
            vec![0.4, 0.3, 0.2, 0.1],
        )
        .unwrap();
        let reps = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            let out = resample_systematic(&weighted, &mut rng).unwrap();
            for x in &out.particles {
                counts[x.kinematics.position.x as usize] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            let expect = 4.0 * weighted.weights[k] * reps as f64;
            let sigma = (4.0 * weighted.weights[k] * (1.0 - weighted.weights[k]) * reps as f64).sqrt();
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma.max(1.0),
                "particle {k}: {c} copies, expected {expect}"
            );
        }

        let degenerate = WeightedParticleSet {
            particles: vec![state(0.0, 0.0, 1.0)],
            weights: vec![0.0],
        };
        assert!(resample_systematic(&degenerate, &mut rng).is_err());
    }

    #[test]
    fn extraction_rules() {
        let p = params();
        let x = state(2.0, 3.0, 7.0);
        let pmb = PmbDensity {
            intensity: vec![p.birth.component(0.05)],
            bernoullis: vec![
                bernoulli(0.6, &[(x, 0.5), (x, 0.5)], 1),
                bernoulli(0.4, &[(x, 1.0)], 2),
            ],
        };
        let est = extract_estimates(&pmb, 0.5);
        assert_eq!(est.len(), 1);
        assert!((est[0].kinematics.position - x.kinematics.position).norm() < 1e-12);
        assert!((est[0].rate - 7.0).abs() < 1e-12);

        // symmetric particles average to the midpoint
        let sym = PmbDensity {
            intensity: vec![],
            bernoullis: vec![bernoulli(
                0.9,
                &[(state(3.0, 0.0, 5.0), 0.5), (state(-3.0, 0.0, 5.0), 0.5)],
                1,
            )],
        };
        let est = extract_estimates(&sym, 0.5);
        assert!(est[0].kinematics.position.norm() < 1e-12);

        // strict threshold: existence exactly at the threshold is excluded
        let border = PmbDensity {
            intensity: vec![],
            bernoullis: vec![bernoulli(0.5, &[(x, 1.0)], 1)],
        };
        assert!(extract_estimates(&border, 0.5).is_empty());
    }

    /// Builds the BP problem that corresponds exactly to a discrete oracle
    /// instance: shared supports, first-round weights from the point-mass
    /// intensity.
    fn problem_from_oracle(inst: &crate::oracle::OracleInstance) -> UpdateProblem {
        let prior: Vec<BernoulliComponent> = inst
            .priors
            .iter()
            .enumerate()
            .map(|(k, b)| {
                bernoulli(
                    b.existence,
                    &b.support.iter().map(|(x, p)| (*x, *p)).collect::<Vec<_>>(),
                    k as u64,
                )
            })
            .collect();
        let supports: Vec<(Vec<ObjectState>, Vec<f64>)> = inst
            .measurements
            .iter()
            .map(|_| {
                let states: Vec<ObjectState> = inst.grid.iter().map(|(x, _)| *x).collect();
                let raw: Vec<f64> = inst
                    .grid
                    .iter()
                    .map(|(x, w)| w * inst.params.p_d(x) * (-x.rate).exp())
                    .collect();
                (states, raw)
            })
            .collect();
        build_update_problem_with_supports(prior, &inst.measurements, &inst.params, supports)
            .unwrap()
    }

    fn oracle_marginals(
        inst: &crate::oracle::OracleInstance,
    ) -> Vec<crate::oracle::DiscreteBernoulli> {
        let locals = crate::oracle::enumerate_local_hypotheses(inst).unwrap();
        let globals =
            crate::oracle::enumerate_global_hypotheses(&locals, inst.measurements.len()).unwrap();
        crate::oracle::pmb_project(&globals, &locals)
    }

    #[test]
    fn tree_instances_match_oracle_exactly() {
        // no prior components and at most two measurements: the factor
        // graph is a tree, so the beliefs must equal the exact marginals
        for seed in 0..30 {
            let m = 1 + (seed % 2) as usize;
            let inst = crate::oracle::random_instance(0, m, 900 + seed);
            let problem = problem_from_oracle(&inst);
            let mut msgs = init_messages(&problem);
            for _ in 0..3 {
                msgs = run_bp_iteration(&problem, &msgs).unwrap();
            }
            let beliefs = compute_beliefs(&problem, &msgs).unwrap();
            let exact = oracle_marginals(&inst);
            for (k, (b, e)) in beliefs.iter().zip(&exact).enumerate() {
                assert!(
                    (b.existence - e.existence).abs() < 1e-10,
                    "seed {seed} comp {k}: bp {} oracle {}",
                    b.existence,
                    e.existence
                );
                for (w, (_, p)) in b.weights.iter().zip(&e.support) {
                    assert!((w - p).abs() < 1e-10, "seed {seed} comp {k} weight {w} vs {p}");
                }
            }
        }
    }

    #[test]
    fn misdetection_path_matches_oracle_bit_for_bit() {
        for seed in 0..10 {
            let inst = crate::oracle::random_instance(2, 0, 950 + seed);
            let problem = problem_from_oracle(&inst);
            let mut msgs = init_messages(&problem);
            for _ in 0..3 {
                msgs = run_bp_iteration(&problem, &msgs).unwrap();
            }
            let beliefs = compute_beliefs(&problem, &msgs).unwrap();
            let exact = oracle_marginals(&inst);
            for (b, e) in beliefs.iter().zip(&exact) {
                assert!((b.existence - e.existence).abs() < 1e-14);
                for (w, (_, p)) in b.weights.iter().zip(&e.support) {
                    assert!((w - p).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn loopy_instances_stay_close_to_oracle() {
        // loopy BP is approximate; require most components near the exact
        // marginals (the acceptance suite runs the full-size version)
        let mut errs: Vec<f64> = Vec::new();
        for seed in 0..30 {
            let n = 1 + (seed % 2) as usize;
            let m = 1 + (seed % 3) as usize;
            let inst = crate::oracle::random_instance(n, m, 1000 + seed);
            let problem = problem_from_oracle(&inst);
            let mut msgs = init_messages(&problem);
            for _ in 0..3 {
                msgs = run_bp_iteration(&problem, &msgs).unwrap();
            }
            let beliefs = compute_beliefs(&problem, &msgs).unwrap();
            let exact = oracle_marginals(&inst);
            for (b, e) in beliefs.iter().zip(&exact) {
                errs.push((b.existence - e.existence).abs());
            }
        }
        let within = errs.iter().filter(|e| **e < 0.05).count() as f64 / errs.len() as f64;
        assert!(within >= 0.95, "only {:.1}% of components within 0.05", 100.0 * within);
    }

    #[test]
    fn reordering_leaves_tree_estimates_invariant() {
        // on a tree instance the result is exact in any measurement order
        for seed in 0..10 {
            let inst = crate::oracle::random_instance(0, 2, 1100 + seed);
            let problem = problem_from_oracle(&inst);
            let reordered = censoring_and_reordering(
                problem.clone(),
                UpdateOptions { censor_floor: 0.0, reorder: true },
            )
            .unwrap();
            let pmb = PmbDensity::empty();
            let plain = finish_update(&pmb, &problem, 3).unwrap();
            let swapped = finish_update(&pmb, &reordered, 3).unwrap();
            let mut a = extract_estimates(&plain, 0.5);
            let mut b = extract_estimates(&swapped, 0.5);
            let key = |x: &ObjectState| (x.kinematics.position.x, x.kinematics.position.y);
            a.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
            b.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
            assert_eq!(a.len(), b.len(), "seed {seed}");
            for (p, q) in a.iter().zip(&b) {
                assert!((p.kinematics.position - q.kinematics.position).norm() < 1e-9);
                assert!((p.rate - q.rate).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn messages_stay_finite_on_randomized_instances() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let p = ModelParams::standard(0.9, 10.0);
        for trial in 0..1000 {
            let n_prior = rng.gen_range(0..3);
            let m = rng.gen_range(0..5);
            let bernoullis: Vec<BernoulliComponent> = (0..n_prior)
                .map(|k| {
                    let states: Vec<(ObjectState, f64)> = (0..4)
                        .map(|_| {
                            (
                                ObjectState {
                                    kinematics: KinematicState::new(
                                        rng.gen_range(-100.0..100.0),
                                        rng.gen_range(-100.0..100.0),
                                        rng.gen_range(-15.0..15.0),
                                        rng.gen_range(-15.0..15.0),
                                    ),
                                    extent: ExtentMatrix::isotropic(rng.gen_range(1.0..8.0)),
                                    rate: rng.gen_range(4.0..15.0),
                                },
                                0.25,
                            )
                        })
                        .collect();
                    bernoulli(rng.gen_range(0.05..0.99), &states, k as u64)
                })
                .collect();
            let z: Vec<Measurement> = (0..m)
                .map(|j| {
                    Measurement::new(
                        rng.gen_range(-140.0..140.0),
                        rng.gen_range(-140.0..140.0),
                        j + 1,
                    )
                })
                .collect();
            let pmb =
                PmbDensity { intensity: vec![p.birth.component(0.05)], bernoullis };
            let cfg = BpConfig { iterations: 3, particles: 30, options: UpdateOptions::default() };
            let out = bp_update(&pmb, &z, &p, &cfg, &mut rng)
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            for b in &out.bernoullis {
                assert!(b.existence.is_finite() && (0.0..=1.0).contains(&b.existence));
                assert!(b.density.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
            }
        }
    }

    #[test]
    fn full_detection_drops_missed_branch_terms_exactly() {
        // with p_detect = 1 the missed-present branch must contribute
        // nothing: compare against a variant engine with those branch terms
        // structurally removed
        for seed in 0..10 {
            let mut inst = crate::oracle::random_instance(2, 2, 1200 + seed);
            inst.params.p_detect = 1.0;
            let problem = problem_from_oracle(&inst);
            let mut msgs = init_messages(&problem);
            for _ in 0..3 {
                let next = run_bp_iteration(&problem, &msgs).unwrap();
                // evidence for the missed branch must reduce to the
                // empty-state mass alone
                for i in 0..problem.n_prior() {
                    let chi = &msgs.detection_feedback[i];
                    for j in 0..problem.n_measurements() {
                        let scale = next.evidence_on[i][j].max(next.evidence_off[i][j]);
                        let ratio_off = next.evidence_off[i][j] / scale;
                        let mut prod = 1.0;
                        for l in 0..problem.n_measurements() {
                            if l != j {
                                prod *= next.detect_off[i][l];
                            }
                        }
                        let expect_off = prod * (1.0 - chi.existence);
                        let mut prod_on = 1.0;
                        for l in 0..problem.n_measurements() {
                            if l != j {
                                prod_on *= next.detect_on[i][l];
                            }
                        }
                        let cache_mass: f64 = chi
                            .weights
                            .iter()
                            .zip(&problem.ex_cache[i].pd_empty)
                            .map(|(w, pe)| w * pe)
                            .sum::<f64>()
                            * chi.existence;
                        let expect_on = prod_on * cache_mass;
                        let expect_scale = expect_on.max(expect_off);
                        assert!(
                            (ratio_off - expect_off / expect_scale).abs() < 1e-10,
                            "seed {seed}: missed-branch evidence leaked"
                        );
                    }
                }
                msgs = next;
            }
        }
    }

    #[test]
    fn censoring_zeroes_weak_associations_only() {
        let p = params();
        // one strong prior near the first measurement; the second
        // measurement is implausible for it but not yet at underflow
        let prior = bernoulli(0.9, &[(state(0.0, 0.0, 5.0), 1.0)], 1);
        let z = [Measurement::new(0.2, 0.1, 1), Measurement::new(18.0, 18.0, 2)];
        let pmb = PmbDensity { intensity: vec![p.birth.component(0.05)], bernoullis: vec![prior] };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let problem = build_update_problem(&pmb, &z, &p, 40, &mut rng).unwrap();

        let run = |problem: &UpdateProblem| {
            let mut msgs = init_messages(problem);
            for _ in 0..3 {
                msgs = run_bp_iteration(problem, &msgs).unwrap();
            }
            msgs
        };
        let plain = run(&problem);
        assert!(plain.assoc_ex[0][1] > 0.0, "association must be alive without censoring");

        let censored_problem = censoring_and_reordering(
            problem,
            UpdateOptions { censor_floor: 1e-3, reorder: false },
        )
        .unwrap();
        let censored = run(&censored_problem);
        // far below the per-measurement maximum: clamped to zero
        assert_eq!(censored.assoc_ex[0][1], 0.0);
        assert!(censored.assoc_ex[0][0] > 0.0);
    }

    #[test]
    fn censoring_identity_when_disabled() {
        let p = params();
        let prior = bernoulli(0.7, &[(state(0.0, 0.0, 5.0), 1.0)], 1);
        let z = [Measurement::new(0.5, 0.2, 1)];
        let pmb = PmbDensity { intensity: vec![p.birth.component(0.05)], bernoullis: vec![prior] };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let problem = build_update_problem(&pmb, &z, &p, 30, &mut rng).unwrap();
        let plain = finish_update(&pmb, &problem, 3).unwrap();
        let zeroed = censoring_and_reordering(
            problem,
            UpdateOptions { censor_floor: 0.0, reorder: false },
        )
        .unwrap();
        let out = finish_update(&pmb, &zeroed, 3).unwrap();
        assert_eq!(plain, out);
    }
}
