//! Parallel message-passing rounds and belief calculation.
//!
//! All messages live on fixed particle supports; a round only rewrites
//! scalar ratios and particle weights. Scalar messages are stored as ratios
//! with the inactive branch pinned to one. Particle-weight messages are
//! renormalized after every update, and existence probabilities are carried
//! together with their log-odds so saturated components stay exact.
//!
//! Within one parallel round the association ratios are computed first from
//! the current extrinsic messages, then the detection subgraph (which reads
//! the previous round's competition messages), then the consistency
//! messages, and finally the refreshed extrinsic and detection-feedback
//! weights.

use crate::error::{EotError, Result};
use crate::numeric::{logaddexp, logsumexp, sigmoid};

use super::problem::UpdateProblem;

/// Cap on existence log-odds when they re-enter linear-domain messages;
/// keeps products finite while leaving saturated ratios saturated.
const LOG_ODDS_CAP: f64 = 500.0;

/// A Bernoulli-with-particles message: existence probability, its log-odds
/// (kept separately so values saturated at 1 remain usable), and normalized
/// particle weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMessage {
    pub existence: f64,
    pub log_odds: f64,
    pub weights: Vec<f64>,
}

impl ParticleMessage {
    fn from_parts(r: f64, weights: Vec<f64>) -> Self {
        let log_odds = if r < 1.0 { (r / (1.0 - r)).ln() } else { f64::INFINITY };
        Self { existence: r, log_odds, weights }
    }

    fn capped_odds(&self) -> f64 {
        self.log_odds.min(LOG_ODDS_CAP).exp()
    }
}

/// All messages of one round. Existing-component blocks are indexed
/// `[component][measurement]`; new-component blocks are ragged
/// `[component j'][measurement j]` with j <= j'.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    /// Likelihood ratio for associating measurement j with component i
    /// (active vs inactive association branch).
    pub assoc_ex: Vec<Vec<f64>>,
    pub assoc_new: Vec<Vec<f64>>,
    /// Detection-subgraph messages toward the detection variable.
    pub detect_on: Vec<Vec<f64>>,
    pub detect_off: Vec<Vec<f64>>,
    /// Extrinsic detection evidence excluding one branch (rescaled).
    pub evidence_on: Vec<Vec<f64>>,
    pub evidence_off: Vec<Vec<f64>>,
    /// Probability-like ratio that component i is detected, as seen from
    /// branch j.
    pub detected_ratio: Vec<Vec<f64>>,
    /// Combined per-association claim toward the consistency factor.
    pub claim_ex: Vec<Vec<f64>>,
    pub claim_new: Vec<Vec<f64>>,
    /// Competing mass from the other admissible components (the inactive
    /// branch of the consistency message; active branch pinned to one).
    pub competition_ex: Vec<Vec<f64>>,
    pub competition_new: Vec<Vec<f64>>,
    /// Association-side feedback toward the likelihood factor.
    pub feedback_on_ex: Vec<Vec<f64>>,
    pub feedback_off_ex: Vec<Vec<f64>>,
    pub feedback_on_new: Vec<Vec<f64>>,
    pub feedback_off_new: Vec<Vec<f64>>,
    /// Extrinsic state messages toward each likelihood branch.
    pub extrinsic_ex: Vec<Vec<ParticleMessage>>,
    pub extrinsic_new: Vec<Vec<ParticleMessage>>,
    /// State message toward the detection factor (existing components).
    pub detection_feedback: Vec<ParticleMessage>,
}

/// Loopy-BP approximation of one marginal Bernoulli density.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub existence: f64,
    pub weights: Vec<f64>,
}

/// Closed-form scalar message equations. Each function is the exact
/// sum-product reduction of one factor given normalized incoming messages.
pub mod closed {
    /// Association ratio of an existing (or legacy-branch) component:
    /// existence times the message-weighted rate-likelihood.
    pub fn assoc_existing(existence: f64, weights: &[f64], gl: &[f64]) -> f64 {
        existence * weighted_likelihood(weights, gl)
    }

    /// Association ratio of a new component on its own measurement: the
    /// present-state mass over the absent-state mass plus clutter.
    pub fn assoc_new(odds: f64, weights: &[f64], gl: &[f64], clutter: f64) -> f64 {
        odds * weighted_likelihood(weights, gl) + clutter
    }

    pub fn weighted_likelihood(weights: &[f64], gl: &[f64]) -> f64 {
        weights.iter().zip(gl).map(|(w, g)| w * g).sum()
    }

    /// Message to the detection variable: (detected, missed) branches.
    pub fn detect_to_variable(competition: f64, assoc: f64) -> (f64, f64) {
        (competition + assoc, competition)
    }

    /// Extrinsic detection evidence: products of the other branches'
    /// detection messages times the state-side detection masses.
    pub fn detection_evidence(
        prod_on_excl: f64,
        prod_off_excl: f64,
        detected_mass: f64,
        missed_mass: f64,
    ) -> (f64, f64) {
        (prod_on_excl * detected_mass, prod_off_excl * missed_mass)
    }

    /// Detected-ratio from the two evidence branches.
    pub fn detected_ratio(evidence_on: f64, evidence_off: f64) -> f64 {
        evidence_on / (evidence_off + evidence_on)
    }

    /// Per-association claim of an existing component.
    pub fn claim_existing(assoc: f64, detected_ratio: f64) -> f64 {
        assoc * detected_ratio
    }

    /// Inactive-branch consistency message: total claim of the other
    /// admissible components.
    pub fn competition(other_claims: &[f64]) -> f64 {
        other_claims.iter().sum()
    }

    /// Association-side feedback (active, inactive) for an existing
    /// component.
    pub fn feedback_existing(detected_ratio: f64, competition: f64) -> (f64, f64) {
        (detected_ratio, competition)
    }

    /// Association-side feedback for a new component.
    pub fn feedback_new(competition: f64) -> (f64, f64) {
        (1.0, competition)
    }

    /// Likelihood-branch message back to a present particle (legacy form).
    pub fn rho_legacy(gl: f64, feedback_on: f64, feedback_off: f64) -> f64 {
        gl * feedback_on + feedback_off
    }

    pub fn rho_legacy_empty(feedback_off: f64) -> f64 {
        feedback_off
    }

    /// Likelihood-branch message back to a new component on its own
    /// measurement.
    pub fn rho_new(gl: f64, feedback_on: f64) -> f64 {
        gl * feedback_on
    }

    pub fn rho_new_empty(clutter: f64, feedback_on: f64, feedback_off: f64) -> f64 {
        clutter * feedback_on + feedback_off
    }

    /// Detection-subgraph message to a present particle.
    pub fn zeta_present(pd: f64, pd_empty: f64, prod_on: f64, prod_off: f64) -> f64 {
        (1.0 - pd) * prod_off + pd_empty * prod_on
    }

    pub fn zeta_empty(prod_off: f64) -> f64 {
        prod_off
    }
}

/// Product accumulator over log values that tracks exact zeros so that
/// leave-one-out products stay well defined.
#[derive(Debug, Clone, Copy, Default)]
struct LogProd {
    finite: f64,
    zeros: u32,
}

impl LogProd {
    fn push(&mut self, ln_v: f64) {
        if ln_v == f64::NEG_INFINITY {
            self.zeros += 1;
        } else {
            self.finite += ln_v;
        }
    }

    fn total(&self) -> f64 {
        if self.zeros > 0 {
            f64::NEG_INFINITY
        } else {
            self.finite
        }
    }

    fn excluding(&self, ln_v: f64) -> f64 {
        if ln_v == f64::NEG_INFINITY {
            if self.zeros == 1 {
                self.finite
            } else {
                f64::NEG_INFINITY
            }
        } else if self.zeros > 0 {
            f64::NEG_INFINITY
        } else {
            self.finite - ln_v
        }
    }
}

fn grid(n: usize, m: usize, v: f64) -> Vec<Vec<f64>> {
    vec![vec![v; m]; n]
}

fn ragged(m: usize, v: f64) -> Vec<Vec<f64>> {
    (0..m).map(|j| vec![v; j + 1]).collect()
}

impl MessageState {
    fn shaped(n: usize, m: usize) -> Self {
        Self {
            assoc_ex: grid(n, m, 1.0),
            assoc_new: ragged(m, 1.0),
            detect_on: grid(n, m, 1.0),
            detect_off: grid(n, m, 1.0),
            evidence_on: grid(n, m, 1.0),
            evidence_off: grid(n, m, 1.0),
            detected_ratio: grid(n, m, 1.0),
            claim_ex: grid(n, m, 1.0),
            claim_new: ragged(m, 1.0),
            competition_ex: grid(n, m, 1.0),
            competition_new: ragged(m, 1.0),
            feedback_on_ex: grid(n, m, 1.0),
            feedback_off_ex: grid(n, m, 1.0),
            feedback_on_new: ragged(m, 1.0),
            feedback_off_new: ragged(m, 1.0),
            extrinsic_ex: Vec::new(),
            extrinsic_new: Vec::new(),
            detection_feedback: Vec::new(),
        }
    }

    /// Every scalar message, with its (component, measurement) provenance.
    fn check_finite(&self) -> Result<()> {
        let blocks: [(&Vec<Vec<f64>>, bool, &'static str); 9] = [
            (&self.assoc_ex, false, "association ratio"),
            (&self.assoc_new, true, "association ratio"),
            (&self.detect_on, false, "detection message"),
            (&self.detect_off, false, "detection message"),
            (&self.detected_ratio, false, "detected ratio"),
            (&self.claim_ex, false, "claim"),
            (&self.claim_new, true, "claim"),
            (&self.competition_ex, false, "competition"),
            (&self.competition_new, true, "competition"),
        ];
        for (block, is_new, what) in blocks {
            for (i, row) in block.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(EotError::NonFiniteMessage {
                            component: if is_new { usize::MAX - i } else { i },
                            measurement: Some(j),
                            what,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Initializes the message state: extrinsic messages carry the prior
/// weighted by the empty-set likelihood for existing components and the
/// importance-weighted proposal for new ones; the detection feedback starts
/// at the predicted Bernoulli; scalar messages start neutral.
pub fn init_messages(problem: &UpdateProblem) -> MessageState {
    let n = problem.n_prior();
    let m = problem.n_measurements();
    let mut msgs = MessageState::shaped(n, m);

    for i in 0..n {
        let prior = &problem.prior[i];
        let raw = problem.existing_init_raw(i);
        let sum: f64 = raw.iter().sum();
        let weights = if sum > 0.0 {
            raw.iter().map(|w| w / sum).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        let r = prior.existence * sum / (1.0 - prior.existence + prior.existence * sum);
        let message = ParticleMessage {
            existence: r,
            log_odds: (prior.existence * sum).ln() - (1.0 - prior.existence).ln(),
            weights,
        };
        msgs.extrinsic_ex.push(vec![message; m]);
        msgs.detection_feedback.push(ParticleMessage::from_parts(
            prior.existence,
            prior.density.weights.clone(),
        ));
    }

    for (jp, init) in problem.new_components.iter().enumerate() {
        let message = ParticleMessage {
            existence: init.existence,
            log_odds: init.raw_sum.ln(),
            weights: init.weights.clone(),
        };
        msgs.extrinsic_new.push(vec![message; jp + 1]);
    }

    // publish initial claims from the initialized extrinsics so that the
    // first round's competition is well defined
    for i in 0..n {
        for j in 0..m {
            msgs.assoc_ex[i][j] = assoc_existing_from(problem, i, j, &msgs.extrinsic_ex[i][j]);
            msgs.claim_ex[i][j] = msgs.assoc_ex[i][j];
        }
    }
    for jp in 0..m {
        for j in 0..=jp {
            msgs.assoc_new[jp][j] = assoc_new_from(problem, jp, j, &msgs.extrinsic_new[jp][j]);
            msgs.claim_new[jp][j] = msgs.assoc_new[jp][j];
        }
    }
    msgs
}

/// Admissible components for measurement j: every existing component plus
/// the new components created at positions >= j.
fn admissible(n: usize, m: usize, j: usize) -> impl Iterator<Item = usize> {
    (0..n).chain((n + j)..(n + m))
}

// ---------------------------------------------------------------------------
// One round
// ---------------------------------------------------------------------------

fn assoc_existing_from(problem: &UpdateProblem, i: usize, j: usize, eps: &ParticleMessage) -> f64 {
    closed::assoc_existing(eps.existence, &eps.weights, &problem.ex_cache[i].gl[j])
}

fn assoc_new_from(problem: &UpdateProblem, jp: usize, j: usize, eps: &ParticleMessage) -> f64 {
    let gl = &problem.new_cache[jp].gl[j];
    if j == jp {
        closed::assoc_new(eps.capped_odds(), &eps.weights, gl, problem.clutter_at(j))
    } else {
        closed::assoc_existing(eps.existence, &eps.weights, gl)
    }
}

fn competition_for(state: &MessageState, n: usize, m: usize, i: usize, j: usize) -> f64 {
    let others: Vec<f64> = admissible(n, m, j)
        .filter(|&l| l != i)
        .map(|l| if l < n { state.claim_ex[l][j] } else { state.claim_new[l - n][j] })
        .collect();
    closed::competition(&others)
}

/// Runs one message-passing round, reading `msgs` and returning the next
/// state. Deterministic: identical inputs produce bitwise-identical output.
///
/// Existing components update in parallel against the claims published in
/// the previous round, with the detection attenuation entering through the
/// previous round's detected ratio (neutral in the first round) so that
/// first-round competition is not suppressed by an uninformed detection
/// subgraph. New components are then swept in ascending creation order,
/// each reading the freshest published claims and republishing its own;
/// without the sweep, newly detected clusters drive the synchronous
/// recursion into a two-cycle in which all candidate components of the
/// cluster saturate and annihilate together.
pub fn run_bp_iteration(problem: &UpdateProblem, msgs: &MessageState) -> Result<MessageState> {
    let n = problem.n_prior();
    let m = problem.n_measurements();
    let mut next = MessageState::shaped(n, m);
    next.extrinsic_ex = msgs.extrinsic_ex.clone();
    next.extrinsic_new = msgs.extrinsic_new.clone();
    next.detection_feedback = msgs.detection_feedback.clone();
    // working claims start from the previous round's published values
    next.claim_ex = msgs.claim_ex.clone();
    next.claim_new = msgs.claim_new.clone();

    // existing components: association ratios from the current extrinsic
    // messages, claims republished immediately
    for i in 0..n {
        for j in 0..m {
            next.assoc_ex[i][j] = assoc_existing_from(problem, i, j, &msgs.extrinsic_ex[i][j]);
            next.claim_ex[i][j] =
                closed::claim_existing(next.assoc_ex[i][j], msgs.detected_ratio[i][j]);
        }
    }

    // detection subgraph (existing components only)
    let mut mu_products: Vec<(LogProd, LogProd)> = Vec::with_capacity(n);
    for i in 0..n {
        let cache = &problem.ex_cache[i];
        let chi = &msgs.detection_feedback[i];
        let mut prod_on = LogProd::default();
        let mut prod_off = LogProd::default();
        for j in 0..m {
            next.competition_ex[i][j] = competition_for(&next, n, m, i, j);
            let (on, off) = closed::detect_to_variable(next.competition_ex[i][j], next.assoc_ex[i][j]);
            next.detect_on[i][j] = on;
            next.detect_off[i][j] = off;
            prod_on.push(on.ln());
            prod_off.push(off.ln());
        }

        let detected_mass: f64 = chi.existence
            * chi.weights.iter().zip(&cache.pd_empty).map(|(w, p)| w * p).sum::<f64>();
        let missed_mass =
            (1.0 - chi.existence * chi.weights.iter().zip(&cache.pd).map(|(w, p)| w * p).sum::<f64>())
                .max(0.0);
        let ln_detected = detected_mass.ln();
        let ln_missed = missed_mass.ln();
        for j in 0..m {
            let ln_on = prod_on.excluding(next.detect_on[i][j].ln()) + ln_detected;
            let ln_off = prod_off.excluding(next.detect_off[i][j].ln()) + ln_missed;
            if ln_on == f64::NEG_INFINITY && ln_off == f64::NEG_INFINITY {
                return Err(EotError::NonFiniteMessage {
                    component: i,
                    measurement: Some(j),
                    what: "detection evidence",
                });
            }
            next.detected_ratio[i][j] = sigmoid(ln_on - ln_off);
            let scale = ln_on.max(ln_off);
            next.evidence_on[i][j] = (ln_on - scale).exp();
            next.evidence_off[i][j] = (ln_off - scale).exp();
        }
        mu_products.push((prod_on, prod_off));
    }

    // existing components: feedback and refreshed particle-weight messages
    for (i, (prod_on, prod_off)) in mu_products.iter().enumerate() {
        for j in 0..m {
            let (on, off) =
                closed::feedback_existing(next.detected_ratio[i][j], next.competition_ex[i][j]);
            next.feedback_on_ex[i][j] = on;
            next.feedback_off_ex[i][j] = off;
        }
        let rho = rho_table_existing(problem, &next, i);
        let zeta = zeta_table(problem, i, prod_on.total(), prod_off.total());
        let cache = &problem.ex_cache[i];
        let prior = &problem.prior[i];
        let ln_r = prior.existence.ln();
        let ln_1m_r = (1.0 - prior.existence).ln();

        for j in 0..m {
            let a: Vec<f64> = (0..prior.density.len())
                .map(|l| cache.ln_prior_w[l] + zeta.present[l] + rho.sums[l].excluding(rho.ln_rho[j][l]))
                .collect();
            let a_empty = ln_1m_r + zeta.empty + rho.sum_empty.excluding(rho.ln_rho_empty[j]);
            next.extrinsic_ex[i][j] =
                particle_message(ln_r, &a, a_empty, &prior.density.weights, i, Some(j))?;
        }
        let a: Vec<f64> = (0..prior.density.len())
            .map(|l| cache.ln_prior_w[l] + rho.sums[l].total())
            .collect();
        let a_empty = ln_1m_r + rho.sum_empty.total();
        next.detection_feedback[i] =
            particle_message(ln_r, &a, a_empty, &prior.density.weights, i, None)?;
    }

    // new components: ascending sweep over creation order
    for jp in 0..m {
        let init = &problem.new_components[jp];
        let cache = &problem.new_cache[jp];
        for j in 0..=jp {
            next.competition_new[jp][j] = competition_for(&next, n, m, n + jp, j);
            let (on, off) = closed::feedback_new(next.competition_new[jp][j]);
            next.feedback_on_new[jp][j] = on;
            next.feedback_off_new[jp][j] = off;
        }
        let rho = rho_table_new(problem, &next, jp);
        let ln_r = init.existence.ln();
        let ln_1m_r = (1.0 - init.existence).ln();
        for j in 0..=jp {
            let a: Vec<f64> = (0..init.support.len())
                .map(|l| cache.ln_init_w[l] + rho.sums[l].excluding(rho.ln_rho[j][l]))
                .collect();
            let a_empty = ln_1m_r + rho.sum_empty.excluding(rho.ln_rho_empty[j]);
            next.extrinsic_new[jp][j] =
                particle_message(ln_r, &a, a_empty, &init.weights, n + jp, Some(j))?;
            next.assoc_new[jp][j] = assoc_new_from(problem, jp, j, &next.extrinsic_new[jp][j]);
            next.claim_new[jp][j] = next.assoc_new[jp][j];
        }
    }

    if problem.options.censor_floor > 0.0 {
        censor(&mut next, n, m, problem.options.censor_floor);
    }
    next.check_finite()?;
    Ok(next)
}

fn censor(next: &mut MessageState, n: usize, m: usize, floor: f64) {
    for j in 0..m {
        let mut max = 0.0f64;
        for i in admissible(n, m, j) {
            let v = if i < n { next.assoc_ex[i][j] } else { next.assoc_new[i - n][j] };
            max = max.max(v);
        }
        let cut = floor * max;
        for i in admissible(n, m, j) {
            let v = if i < n { &mut next.assoc_ex[i][j] } else { &mut next.assoc_new[i - n][j] };
            if *v < cut {
                *v = 0.0;
            }
        }
    }
}

struct RhoTable {
    /// ln of the branch message at each particle, [branch][particle].
    ln_rho: Vec<Vec<f64>>,
    ln_rho_empty: Vec<f64>,
    /// Per-particle product over all branches.
    sums: Vec<LogProd>,
    sum_empty: LogProd,
}

fn rho_table(gl: &[Vec<f64>], branch: impl Fn(usize, f64) -> f64, empty: impl Fn(usize) -> f64, particles: usize) -> RhoTable {
    let mut ln_rho = Vec::with_capacity(gl.len());
    let mut ln_rho_empty = Vec::with_capacity(gl.len());
    let mut sums = vec![LogProd::default(); particles];
    let mut sum_empty = LogProd::default();
    for (j, row) in gl.iter().enumerate() {
        let lns: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(l, &g)| {
                let v = branch(j, g).ln();
                sums[l].push(v);
                v
            })
            .collect();
        let ln_e = empty(j).ln();
        sum_empty.push(ln_e);
        ln_rho.push(lns);
        ln_rho_empty.push(ln_e);
    }
    RhoTable { ln_rho, ln_rho_empty, sums, sum_empty }
}

fn rho_table_existing(problem: &UpdateProblem, state: &MessageState, i: usize) -> RhoTable {
    let cache = &problem.ex_cache[i];
    rho_table(
        &cache.gl,
        |j, g| closed::rho_legacy(g, state.feedback_on_ex[i][j], state.feedback_off_ex[i][j]),
        |j| closed::rho_legacy_empty(state.feedback_off_ex[i][j]),
        problem.prior[i].density.len(),
    )
}

fn rho_table_new(problem: &UpdateProblem, state: &MessageState, jp: usize) -> RhoTable {
    let cache = &problem.new_cache[jp];
    rho_table(
        &cache.gl,
        |j, g| {
            if j == jp {
                closed::rho_new(g, state.feedback_on_new[jp][j])
            } else {
                closed::rho_legacy(g, state.feedback_on_new[jp][j], state.feedback_off_new[jp][j])
            }
        },
        |j| {
            if j == jp {
                closed::rho_new_empty(
                    problem.clutter_at(j),
                    state.feedback_on_new[jp][j],
                    state.feedback_off_new[jp][j],
                )
            } else {
                closed::rho_legacy_empty(state.feedback_off_new[jp][j])
            }
        },
        problem.new_components[jp].support.len(),
    )
}

struct ZetaTable {
    /// ln of the detection-subgraph message at each particle.
    present: Vec<f64>,
    empty: f64,
}

fn zeta_table(problem: &UpdateProblem, i: usize, ln_prod_on: f64, ln_prod_off: f64) -> ZetaTable {
    let cache = &problem.ex_cache[i];
    let present = (0..problem.prior[i].density.len())
        .map(|l| logaddexp(cache.ln_1m_pd[l] + ln_prod_off, cache.ln_pd_empty[l] + ln_prod_on))
        .collect();
    ZetaTable { present, empty: ln_prod_off }
}

/// Normalizes log-domain present/empty masses into a particle message:
/// existence = r * sum / (r * sum + empty mass), weights by softmax.
fn particle_message(
    ln_r: f64,
    a: &[f64],
    a_empty: f64,
    fallback_weights: &[f64],
    component: usize,
    measurement: Option<usize>,
) -> Result<ParticleMessage> {
    let t = logsumexp(a);
    if t == f64::NEG_INFINITY && a_empty == f64::NEG_INFINITY {
        return Err(EotError::NonFiniteMessage { component, measurement, what: "state message" });
    }
    let log_odds = ln_r + t - a_empty;
    let weights = if t == f64::NEG_INFINITY {
        fallback_weights.to_vec()
    } else {
        a.iter().map(|v| (v - t).exp()).collect()
    };
    let mut weights = weights;
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(ParticleMessage { existence: sigmoid(log_odds), log_odds, weights })
}

// ---------------------------------------------------------------------------
// Beliefs
// ---------------------------------------------------------------------------

/// Computes the per-component Bernoulli beliefs from the last round's
/// messages: the full product over every branch (no exclusions), times the
/// detection-subgraph message for existing components.
pub fn compute_beliefs(problem: &UpdateProblem, msgs: &MessageState) -> Result<Vec<Belief>> {
    let n = problem.n_prior();
    let m = problem.n_measurements();
    let mut beliefs = Vec::with_capacity(n + m);

    for i in 0..n {
        let cache = &problem.ex_cache[i];
        let prior = &problem.prior[i];
        let rho = rho_table_existing(problem, msgs, i);
        let mut prod_on = LogProd::default();
        let mut prod_off = LogProd::default();
        for j in 0..m {
            prod_on.push(msgs.detect_on[i][j].ln());
            prod_off.push(msgs.detect_off[i][j].ln());
        }
        let zeta = zeta_table(problem, i, prod_on.total(), prod_off.total());
        let a: Vec<f64> = (0..prior.density.len())
            .map(|l| cache.ln_prior_w[l] + zeta.present[l] + rho.sums[l].total())
            .collect();
        let a_empty = (1.0 - prior.existence).ln() + zeta.empty + rho.sum_empty.total();
        let message =
            particle_message(prior.existence.ln(), &a, a_empty, &prior.density.weights, i, None)?;
        beliefs.push(Belief { existence: message.existence, weights: message.weights });
    }

    for jp in 0..m {
        let init = &problem.new_components[jp];
        let cache = &problem.new_cache[jp];
        let rho = rho_table_new(problem, msgs, jp);
        let a: Vec<f64> = (0..init.support.len())
            .map(|l| cache.ln_init_w[l] + rho.sums[l].total())
            .collect();
        let a_empty = (1.0 - init.existence).ln() + rho.sum_empty.total();
        let message =
            particle_message(init.existence.ln(), &a, a_empty, &init.weights, n + jp, None)?;
        beliefs.push(Belief { existence: message.existence, weights: message.weights });
    }
    Ok(beliefs)
}
