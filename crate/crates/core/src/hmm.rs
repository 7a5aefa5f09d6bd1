//! Temporal inference over hidden interpretation states.
//!
//! Emissions come from the relevance softmax; everything runs in log space.
//! The `*_log` functions work on precomputed log-emission matrices so the
//! same recursions serve any emission model (the synthetic Bayes oracle
//! uses Gaussian log-densities).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, BossError, Result};
use crate::relevance::{emission_log_probs, ScorerNet, DEFAULT_EFFORT_EPSILON};
use crate::vectors::{
    ContextTrack, DimensionSignature, Hypothesis, LabeledSequence, ObservationVector,
};

const STOCHASTIC_TOL: f64 = 1e-9;

pub const DEFAULT_LABELS: [&str; 4] = ["literal", "sarcastic", "hesitant", "emphatic"];

/// Default state labels: the four shipped readings, then `state_k`.
pub fn default_labels(n: usize) -> Vec<String> {
    (0..n)
        .map(|k| match DEFAULT_LABELS.get(k) {
            Some(l) => (*l).to_string(),
            None => format!("state_{k}"),
        })
        .collect()
}

/// Complete generative/inference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BossModel {
    pub signature: DimensionSignature,
    pub labels: Vec<String>,
    pub pi: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub net_e: ScorerNet,
    pub net_p: ScorerNet,
    pub epsilon_effort: f64,
}

impl BossModel {
    pub fn new(
        signature: DimensionSignature,
        labels: Vec<String>,
        pi: Vec<f64>,
        trans: Vec<Vec<f64>>,
        net_e: ScorerNet,
        net_p: ScorerNet,
    ) -> Result<Self> {
        let m = Self {
            signature,
            labels,
            pi,
            trans,
            net_e,
            net_p,
            epsilon_effort: DEFAULT_EFFORT_EPSILON,
        };
        m.validate()?;
        Ok(m)
    }

    /// Uniform chain with zero scorer networks.
    pub fn zeros(signature: DimensionSignature, hidden_width: usize) -> Self {
        let n = signature.n_states;
        let d = signature.scorer_input_dim();
        Self {
            signature,
            labels: default_labels(n),
            pi: vec![1.0 / n as f64; n],
            trans: vec![vec![1.0 / n as f64; n]; n],
            net_e: ScorerNet::zeros(d, hidden_width),
            net_p: ScorerNet::zeros(d, hidden_width),
            epsilon_effort: DEFAULT_EFFORT_EPSILON,
        }
    }

    /// Uniform chain with seeded random scorer networks.
    pub fn random(signature: DimensionSignature, hidden_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = signature.scorer_input_dim();
        let net_e = ScorerNet::random(d, hidden_width, &mut rng);
        let net_p = ScorerNet::random(d, hidden_width, &mut rng);
        Self {
            net_e,
            net_p,
            ..Self::zeros(signature, hidden_width)
        }
    }

    pub fn n_states(&self) -> usize {
        self.signature.n_states
    }

    pub fn hypotheses(&self) -> Vec<Hypothesis> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| Hypothesis::new(i, l.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.signature.validate()?;
        let n = self.n_states();
        if self.labels.len() != n {
            return Err(dim_err("labels", n, self.labels.len()));
        }
        validate_distribution("pi", &self.pi, n)?;
        if self.trans.len() != n {
            return Err(dim_err("trans rows", n, self.trans.len()));
        }
        for (i, row) in self.trans.iter().enumerate() {
            validate_distribution(&format!("trans row {i}"), row, n)?;
        }
        let d = self.signature.scorer_input_dim();
        self.net_e.validate(d)?;
        self.net_p.validate(d)?;
        if !(self.epsilon_effort > 0.0 && self.epsilon_effort.is_finite()) {
            return Err(BossError::InvalidParameter("epsilon_effort must be positive".into()));
        }
        Ok(())
    }

    pub fn log_pi(&self) -> Vec<f64> {
        self.pi.iter().map(|p| p.ln()).collect()
    }

    pub fn log_trans(&self) -> Vec<Vec<f64>> {
        self.trans
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect()
    }
}

fn validate_distribution(what: &str, p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(dim_err(what, n, p.len()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(BossError::InvalidParameter(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(BossError::InvalidParameter(format!("{what} sums to {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodedSequence {
    pub states: Vec<usize>,
    pub log_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posteriors: Option<Vec<Vec<f64>>>,
}

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `T × n` matrix of `log P(O_t | H_j)` under `model`.
pub fn log_emission_matrix(model: &BossModel, seq: &LabeledSequence) -> Result<Vec<Vec<f64>>> {
    seq.validate(&model.signature)?;
    (0..seq.len())
        .map(|t| {
            let row = emission_log_probs(model, &seq.obs[t], seq.context_at(t))?;
            if row.iter().all(|v| v.is_finite()) {
                Ok(row)
            } else {
                Err(BossError::Numerical(format!(
                    "emission log-probabilities of sequence {} are not finite at step {t}",
                    seq.id
                )))
            }
        })
        .collect()
}

/// Max-product recursion in log space. Ties go to the lowest state index,
/// both for the final state and at every backtrack step.
pub fn viterbi_log(
    log_pi: &[f64],
    log_trans: &[Vec<f64>],
    log_emit: &[Vec<f64>],
) -> Result<(Vec<usize>, f64)> {
    let steps = log_emit.len();
    if steps == 0 {
        return Err(BossError::Empty("sequence has no steps".into()));
    }
    let n = log_pi.len();
    let mut delta: Vec<f64> = (0..n).map(|s| log_pi[s] + log_emit[0][s]).collect();
    let mut back = vec![vec![0usize; n]; steps];
    for t in 1..steps {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mut best_k = 0;
            let mut best = delta[0] + log_trans[0][s];
            for k in 1..n {
                let cand = delta[k] + log_trans[k][s];
                if cand > best {
                    best = cand;
                    best_k = k;
                }
            }
            next[s] = best + log_emit[t][s];
            back[t][s] = best_k;
        }
        delta = next;
    }
    let mut last = 0;
    for s in 1..n {
        if delta[s] > delta[last] {
            last = s;
        }
    }
    let log_prob = delta[last];
    let mut path = vec![0; steps];
    path[steps - 1] = last;
    for t in (1..steps).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, log_prob))
}

/// Forward–backward quantities in log space.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub posteriors: Vec<Vec<f64>>,
    /// `log Σ_s alpha_T(s)`.
    pub log_likelihood: f64,
    /// `log Σ_s pi_s e_1(s) beta_1(s)`; equals `log_likelihood` up to rounding.
    pub log_likelihood_backward: f64,
}

pub fn forward_backward_log(
    log_pi: &[f64],
    log_trans: &[Vec<f64>],
    log_emit: &[Vec<f64>],
) -> Result<ForwardBackward> {
    let steps = log_emit.len();
    if steps == 0 {
        return Err(BossError::Empty("sequence has no steps".into()));
    }
    let n = log_pi.len();
    let mut log_alpha = vec![vec![0.0; n]; steps];
    for s in 0..n {
        log_alpha[0][s] = log_pi[s] + log_emit[0][s];
    }
    for t in 1..steps {
        for s in 0..n {
            let prev = &log_alpha[t - 1];
            log_alpha[t][s] =
                log_emit[t][s] + log_sum_exp((0..n).map(|k| prev[k] + log_trans[k][s]));
        }
    }
    let mut log_beta = vec![vec![0.0; n]; steps];
    for t in (0..steps - 1).rev() {
        for k in 0..n {
            let next = &log_beta[t + 1];
            log_beta[t][k] = log_sum_exp(
                (0..n).map(|s| log_trans[k][s] + log_emit[t + 1][s] + next[s]),
            );
        }
    }
    let log_likelihood = log_sum_exp(log_alpha[steps - 1].iter().copied());
    let log_likelihood_backward =
        log_sum_exp((0..n).map(|s| log_pi[s] + log_emit[0][s] + log_beta[0][s]));
    if !log_likelihood.is_finite() {
        return Err(BossError::Numerical("sequence log-likelihood is not finite".into()));
    }
    let posteriors = (0..steps)
        .map(|t| {
            (0..n)
                .map(|s| (log_alpha[t][s] + log_beta[t][s] - log_likelihood).exp())
                .collect()
        })
        .collect();
    Ok(ForwardBackward {
        log_alpha,
        log_beta,
        posteriors,
        log_likelihood,
        log_likelihood_backward,
    })
}

/// Expected transition counts `Σ_t P(s_t = k, s_{t+1} = s | O)`.
pub fn expected_transition_counts(
    fb: &ForwardBackward,
    log_trans: &[Vec<f64>],
    log_emit: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = log_trans.len();
    let mut counts = vec![vec![0.0; n]; n];
    for t in 0..log_emit.len().saturating_sub(1) {
        for k in 0..n {
            for s in 0..n {
                counts[k][s] += (fb.log_alpha[t][k]
                    + log_trans[k][s]
                    + log_emit[t + 1][s]
                    + fb.log_beta[t + 1][s]
                    - fb.log_likelihood)
                    .exp();
            }
        }
    }
    counts
}

/// Joint log probability of `states` with precomputed log emissions.
pub fn path_log_prob_log(
    log_pi: &[f64],
    log_trans: &[Vec<f64>],
    log_emit: &[Vec<f64>],
    states: &[usize],
) -> Result<f64> {
    let n = log_pi.len();
    if states.len() != log_emit.len() {
        return Err(dim_err("states", log_emit.len(), states.len()));
    }
    if states.is_empty() {
        return Err(BossError::Empty("sequence has no steps".into()));
    }
    if let Some(&bad) = states.iter().find(|&&s| s >= n) {
        return Err(BossError::OutOfRange { index: bad, size: n });
    }
    let mut lp = log_pi[states[0]] + log_emit[0][states[0]];
    for t in 1..states.len() {
        lp = lp + log_trans[states[t - 1]][states[t]] + log_emit[t][states[t]];
    }
    Ok(lp)
}

/// Most likely state path under `model`.
pub fn viterbi(model: &BossModel, seq: &LabeledSequence) -> Result<DecodedSequence> {
    let log_emit = log_emission_matrix(model, seq)?;
    let (states, log_prob) = viterbi_log(&model.log_pi(), &model.log_trans(), &log_emit)?;
    Ok(DecodedSequence {
        states,
        log_prob,
        posteriors: None,
    })
}

/// Per-step posteriors and the sequence log-likelihood.
pub fn forward_backward(model: &BossModel, seq: &LabeledSequence) -> Result<(Vec<Vec<f64>>, f64)> {
    let log_emit = log_emission_matrix(model, seq)?;
    let fb = forward_backward_log(&model.log_pi(), &model.log_trans(), &log_emit)?;
    Ok((fb.posteriors, fb.log_likelihood))
}

/// Viterbi path together with forward–backward posteriors.
pub fn decode_with_posteriors(model: &BossModel, seq: &LabeledSequence) -> Result<DecodedSequence> {
    let log_emit = log_emission_matrix(model, seq)?;
    let log_pi = model.log_pi();
    let log_trans = model.log_trans();
    let (states, log_prob) = viterbi_log(&log_pi, &log_trans, &log_emit)?;
    let fb = forward_backward_log(&log_pi, &log_trans, &log_emit)?;
    Ok(DecodedSequence {
        states,
        log_prob,
        posteriors: Some(fb.posteriors),
    })
}

/// Joint log probability of a given state path and the observations.
pub fn sequence_log_likelihood(
    model: &BossModel,
    seq: &LabeledSequence,
    states: &[usize],
) -> Result<f64> {
    let log_emit = log_emission_matrix(model, seq)?;
    path_log_prob_log(&model.log_pi(), &model.log_trans(), &log_emit, states)
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws a state path from the Markov chain `(pi, trans)`.
pub fn sample_states<R: Rng + ?Sized>(
    pi: &[f64],
    trans: &[Vec<f64>],
    steps: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut states = Vec::with_capacity(steps);
    if steps == 0 {
        return states;
    }
    states.push(sample_categorical(pi, rng));
    for t in 1..steps {
        let prev = states[t - 1];
        states.push(sample_categorical(&trans[prev], rng));
    }
    states
}

/// Samples a labelled state path from the model's chain. The relevance
/// emission is conditional on externally supplied observations, so only
/// states are drawn; observations are zero placeholders.
pub fn sample_sequence(
    model: &BossModel,
    ctx: ContextTrack,
    steps: usize,
    seed: u64,
) -> Result<LabeledSequence> {
    if steps == 0 {
        return Err(BossError::Empty("cannot sample a zero-length sequence".into()));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = sample_states(&model.pi, &model.trans, steps, &mut rng);
    let seq = LabeledSequence {
        id: format!("sample-{seed}"),
        obs: vec![ObservationVector::zeros(&model.signature); steps],
        ctx,
        states: Some(states),
    };
    seq.validate(&model.signature)?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectors::ContextVector;

    fn small_sig(n: usize) -> DimensionSignature {
        DimensionSignature {
            d_l: 2,
            d_ac: 2,
            d_cd: 1,
            d_is: 1,
            d_hist: 1,
            d_env: 1,
            d_char: 1,
            d_task: 1,
            n_states: n,
        }
    }

    fn random_seq(sig: &DimensionSignature, steps: usize, rng: &mut ChaCha8Rng) -> LabeledSequence {
        let mut v = |d: usize| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let obs = (0..steps)
            .map(|_| ObservationVector {
                v_l: v(sig.d_l),
                v_ac: v(sig.d_ac),
                v_cd: v(sig.d_cd),
                v_is: v(sig.d_is),
            })
            .collect();
        let ctx = ContextTrack::Shared(ContextVector {
            c_hist: v(sig.d_hist),
            c_env: v(sig.d_env),
            c_char: v(sig.d_char),
            c_task: v(sig.d_task),
        });
        LabeledSequence {
            id: "r".into(),
            obs,
            ctx,
            states: None,
        }
    }

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    fn random_model(n: usize, seed: u64) -> BossModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut m = BossModel::random(small_sig(n), 6, seed);
        for p in m.net_e.params_mut() {
            *p *= 6.0;
        }
        m.pi = random_stochastic(n, &mut rng);
        m.trans = (0..n).map(|_| random_stochastic(n, &mut rng)).collect();
        m
    }

    #[test]
    fn single_step_reduces_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let m = random_model(3, seed);
            let seq = random_seq(&m.signature, 1, &mut rng);
            let d = viterbi(&m, &seq).unwrap();
            let le = log_emission_matrix(&m, &seq).unwrap();
            let scores: Vec<f64> = (0..3).map(|j| m.pi[j].ln() + le[0][j]).collect();
            let best = (0..3).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
            assert_eq!(d.states, vec![best]);
            assert_eq!(d.log_prob, scores[best]);

            let (post, ll) = forward_backward(&m, &seq).unwrap();
            let weights: Vec<f64> = (0..3).map(|j| m.pi[j] * le[0][j].exp()).collect();
            let z: f64 = weights.iter().sum();
            assert!((ll - z.ln()).abs() < 1e-12);
            for j in 0..3 {
                assert!((post[0][j] - weights[j] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fully_degenerate_model_decodes_to_zeros() {
        let sig = small_sig(4);
        let m = BossModel::zeros(sig, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = random_seq(&sig, 6, &mut rng);
        assert_eq!(viterbi(&m, &seq).unwrap().states, vec![0; 6]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let sig = small_sig(2);
        let m = BossModel::zeros(sig, 2);
        let seq = LabeledSequence {
            id: "e".into(),
            obs: vec![],
            ctx: ContextTrack::Shared(ContextVector::zeros(&sig)),
            states: None,
        };
        assert!(matches!(viterbi(&m, &seq), Err(BossError::Empty(_))));
        assert!(forward_backward(&m, &seq).is_err());
    }

    #[test]
    fn forward_and_backward_agree_and_posteriors_normalise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let m = random_model(4, seed);
            let seq = random_seq(&m.signature, 12, &mut rng);
            let le = log_emission_matrix(&m, &seq).unwrap();
            let fb = forward_backward_log(&m.log_pi(), &m.log_trans(), &le).unwrap();
            assert!((fb.log_likelihood - fb.log_likelihood_backward).abs() < 1e-9);
            for row in &fb.posteriors {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let xi = expected_transition_counts(&fb, &m.log_trans(), &le);
            let total: f64 = xi.iter().flatten().sum();
            assert!((total - 11.0).abs() < 1e-9);
        }
    }

    #[test]
    fn path_likelihood_agrees_with_viterbi() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..20 {
            let m = random_model(3, seed);
            let seq = random_seq(&m.signature, 5, &mut rng);
            let d = viterbi(&m, &seq).unwrap();
            let lp = sequence_log_likelihood(&m, &seq, &d.states).unwrap();
            assert!((lp - d.log_prob).abs() <= 1e-12);
            assert!(d.log_prob <= 1e-12);
            let other: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            assert!(sequence_log_likelihood(&m, &seq, &other).unwrap() <= d.log_prob + 1e-12);
        }
        let m = random_model(3, 0);
        let seq = random_seq(&m.signature, 3, &mut rng);
        assert!(matches!(
            sequence_log_likelihood(&m, &seq, &[0, 3, 1]),
            Err(BossError::OutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn sampling_edge_cases() {
        let sig = small_sig(3);
        let mut m = BossModel::zeros(sig, 2);
        m.trans = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        for seed in 0..20 {
            let s = sample_sequence(&m, ContextTrack::Shared(ContextVector::zeros(&sig)), 15, seed)
                .unwrap();
            let states = s.states.unwrap();
            assert!(states.iter().all(|&x| x == states[0]));
        }
        m.pi = vec![0.0, 0.0, 1.0];
        m.trans = vec![vec![1.0 / 3.0; 3]; 3];
        for seed in 0..20 {
            let s = sample_sequence(&m, ContextTrack::Shared(ContextVector::zeros(&sig)), 4, seed)
                .unwrap();
            assert_eq!(s.states.unwrap()[0], 2);
        }
        let a = sample_sequence(&m, ContextTrack::Shared(ContextVector::zeros(&sig)), 9, 77).unwrap();
        let b = sample_sequence(&m, ContextTrack::Shared(ContextVector::zeros(&sig)), 9, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_validation() {
        let sig = small_sig(2);
        let mut m = BossModel::zeros(sig, 2);
        assert!(m.validate().is_ok());
        m.trans[1] = vec![0.6, 0.6];
        assert!(m.validate().is_err());
        let mut m = BossModel::zeros(sig, 2);
        m.pi = vec![1.2, -0.2];
        assert!(m.validate().is_err());
        let mut m = BossModel::zeros(sig, 2);
        m.net_e.w1[0].pop();
        assert!(m.validate().is_err());
    }
}
