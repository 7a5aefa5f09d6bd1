//! Synthetic interpretation scenarios with known ground truth.
//!
//! States follow a sticky Markov chain; observations are a state-dependent
//! mean plus isotropic Gaussian noise. The mean geometry encodes cue
//! patterns (with `δ` the separation):
//!
//! | label       | non-zero coordinates                         |
//! |-------------|----------------------------------------------|
//! | `literal`   | `v_l[0] = +δ` (lexical valence), `v_ac[0] = +δ` (affective valence) |
//! | `sarcastic` | `v_l[0] = +δ`, `v_ac[0] = −δ` (lexical/affective conflict) |
//! | `hesitant`  | `v_cd[0] = +δ` (pause)                       |
//! | `emphatic`  | `v_ac[1] = +δ` (energy)                      |
//! | other, at position `k` | `v_is[k mod d_is] = +δ`           |
//!
//! Context is inert by default: one record per sequence, zero except for a
//! standard-normal environment offset in `c_env`. With `history_cue` set,
//! each step also gets a one-hot of the previous state in `c_hist`.
//!
//! Every sequence draws from its own ChaCha stream keyed by `(seed, index)`,
//! so any sequence can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BossError, Result};
use crate::hmm::{default_labels, sample_states, viterbi_log};
use crate::vectors::{
    flatten_observation, ContextTrack, ContextVector, DimensionSignature, LabeledSequence,
    ObservationVector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub states: Vec<String>,
    pub separation: f64,
    pub noise: f64,
    pub stickiness: f64,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: Option<u64>,
    pub signature: DimensionSignature,
    pub history_cue: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            states: default_labels(4),
            separation: 2.0,
            noise: 0.5,
            stickiness: 0.7,
            seq_len: 20,
            n_train: 500,
            n_test: 200,
            seed: Some(0),
            signature: DimensionSignature::default(),
            history_cue: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.signature.validate()?;
        if self.states.len() != self.signature.n_states {
            return Err(BossError::InvalidParameter(format!(
                "{} state labels but signature has n_states = {}",
                self.states.len(),
                self.signature.n_states
            )));
        }
        if !(self.stickiness > 0.0 && self.stickiness < 1.0) {
            return Err(BossError::InvalidParameter("stickiness must lie in (0, 1)".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(BossError::InvalidParameter("separation must be finite and >= 0".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(BossError::InvalidParameter("noise must be positive".into()));
        }
        if self.seq_len == 0 {
            return Err(BossError::InvalidParameter("seq_len must be >= 1".into()));
        }
        if self.states.iter().any(|l| l == "emphatic") && self.signature.d_ac < 2 {
            return Err(BossError::InvalidParameter("'emphatic' needs d_ac >= 2".into()));
        }
        Ok(())
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| BossError::InvalidParameter("scenario seed is required".into()))
    }
}

/// The true generative parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub labels: Vec<String>,
    pub pi: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub means: Vec<ObservationVector>,
    pub sigma: f64,
    pub signature: DimensionSignature,
}

/// Deterministic chain and mean table for `cfg`.
pub fn build_truth(cfg: &ScenarioConfig) -> Result<GeneratorTruth> {
    cfg.validate()?;
    let sig = cfg.signature;
    let n = sig.n_states;
    let off = (1.0 - cfg.stickiness) / (n - 1) as f64;
    let trans = (0..n)
        .map(|i| (0..n).map(|j| if i == j { cfg.stickiness } else { off }).collect())
        .collect();
    let delta = cfg.separation;
    let means = cfg
        .states
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let mut m = ObservationVector::zeros(&sig);
            match label.as_str() {
                "literal" => {
                    m.v_l[0] = delta;
                    m.v_ac[0] = delta;
                }
                "sarcastic" => {
                    m.v_l[0] = delta;
                    m.v_ac[0] = -delta;
                }
                "hesitant" => m.v_cd[0] = delta,
                "emphatic" => m.v_ac[1] = delta,
                _ => m.v_is[k % sig.d_is] = delta,
            }
            m
        })
        .collect();
    Ok(GeneratorTruth {
        labels: cfg.states.clone(),
        pi: vec![1.0 / n as f64; n],
        trans,
        means,
        sigma: cfg.noise,
        signature: sig,
    })
}

/// Generated train/test split plus the truth that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
    pub truth: GeneratorTruth,
}

/// Regenerates sequence `index` (train indices first, then test).
pub fn generate_sequence(
    cfg: &ScenarioConfig,
    truth: &GeneratorTruth,
    index: usize,
) -> Result<LabeledSequence> {
    let seed = cfg.seed()?;
    let sig = cfg.signature;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);

    let states = sample_states(&truth.pi, &truth.trans, cfg.seq_len, &mut rng);
    let noise = |d: usize, scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    };
    let mut base_ctx = ContextVector::zeros(&sig);
    base_ctx.c_env = noise(sig.d_env, 1.0, &mut rng);

    let obs = states
        .iter()
        .map(|&s| {
            let m = &truth.means[s];
            let add = |mean: &[f64], eps: Vec<f64>| -> Vec<f64> {
                mean.iter().zip(eps).map(|(a, b)| a + b).collect()
            };
            ObservationVector {
                v_l: add(&m.v_l, noise(sig.d_l, truth.sigma, &mut rng)),
                v_ac: add(&m.v_ac, noise(sig.d_ac, truth.sigma, &mut rng)),
                v_cd: add(&m.v_cd, noise(sig.d_cd, truth.sigma, &mut rng)),
                v_is: add(&m.v_is, noise(sig.d_is, truth.sigma, &mut rng)),
            }
        })
        .collect();

    let ctx = if cfg.history_cue {
        ContextTrack::PerStep(
            (0..states.len())
                .map(|t| {
                    let mut c = base_ctx.clone();
                    if t > 0 && states[t - 1] < sig.d_hist {
                        c.c_hist[states[t - 1]] = 1.0;
                    }
                    c
                })
                .collect(),
        )
    } else {
        ContextTrack::Shared(base_ctx)
    };

    let (split, local) = if index < cfg.n_train {
        ("train", index)
    } else {
        ("test", index - cfg.n_train)
    };
    Ok(LabeledSequence {
        id: format!("{split}-{local:06}"),
        obs,
        ctx,
        states: Some(states),
    })
}

/// Generates the full dataset. Sequences are produced in parallel; each
/// depends only on `(seed, index)`.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    let truth = build_truth(cfg)?;
    cfg.seed()?;
    let total = cfg.n_train + cfg.n_test;
    let mut all = (0..total)
        .into_par_iter()
        .map(|i| generate_sequence(cfg, &truth, i))
        .collect::<Result<Vec<_>>>()?;
    let test = all.split_off(cfg.n_train);
    Ok(Dataset {
        train: all,
        test,
        truth,
    })
}

/// `T × n` Gaussian log-densities of the observations under each state.
pub fn gaussian_log_emissions(truth: &GeneratorTruth, seq: &LabeledSequence) -> Result<Vec<Vec<f64>>> {
    let sig = &truth.signature;
    seq.validate(sig)?;
    let means = truth
        .means
        .iter()
        .map(|m| flatten_observation(m, sig))
        .collect::<Result<Vec<_>>>()?;
    let var = truth.sigma * truth.sigma;
    let norm = -0.5 * sig.observation_dim() as f64 * (2.0 * std::f64::consts::PI * var).ln();
    seq.obs
        .iter()
        .map(|o| {
            let x = flatten_observation(o, sig)?;
            Ok(means
                .iter()
                .map(|m| {
                    let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    norm - sq / (2.0 * var)
                })
                .collect())
        })
        .collect()
}

/// Exact Viterbi under the true chain and Gaussian emissions.
pub fn bayes_oracle_decode(truth: &GeneratorTruth, seq: &LabeledSequence) -> Result<Vec<usize>> {
    let log_emit = gaussian_log_emissions(truth, seq)?;
    let log_pi: Vec<f64> = truth.pi.iter().map(|p| p.ln()).collect();
    let log_trans: Vec<Vec<f64>> = truth
        .trans
        .iter()
        .map(|r| r.iter().map(|p| p.ln()).collect())
        .collect();
    Ok(viterbi_log(&log_pi, &log_trans, &log_emit)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAccuracy {
    pub state: usize,
    pub support: usize,
    /// `None` when the state never occurs in the reference paths.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub positions: usize,
    pub per_state: Vec<StateAccuracy>,
}

/// Position-level accuracy of `decoded` against `reference`, with
/// per-state recall over `n_states` states.
pub fn evaluate_accuracy(
    decoded: &[Vec<usize>],
    reference: &[Vec<usize>],
    n_states: usize,
) -> Result<AccuracyReport> {
    if decoded.len() != reference.len() {
        return Err(crate::error::dim_err("sequence count", reference.len(), decoded.len()));
    }
    let mut hits = vec![0usize; n_states];
    let mut support = vec![0usize; n_states];
    let mut correct = 0;
    let mut positions = 0;
    for (d, r) in decoded.iter().zip(reference) {
        if d.len() != r.len() {
            return Err(crate::error::dim_err("path length", r.len(), d.len()));
        }
        for (&a, &b) in d.iter().zip(r) {
            if b >= n_states {
                return Err(BossError::OutOfRange { index: b, size: n_states });
            }
            support[b] += 1;
            if a == b {
                hits[b] += 1;
                correct += 1;
            }
            positions += 1;
        }
    }
    if positions == 0 {
        return Err(BossError::Empty("no positions to evaluate".into()));
    }
    let per_state = (0..n_states)
        .map(|s| StateAccuracy {
            state: s,
            support: support[s],
            recall: (support[s] > 0).then(|| hits[s] as f64 / support[s] as f64),
        })
        .collect();
    Ok(AccuracyReport {
        overall: correct as f64 / positions as f64,
        positions,
        per_state,
    })
}

/// Best label-independent accuracy: frequency of the most common state.
pub fn majority_rate(reference: &[Vec<usize>], n_states: usize) -> f64 {
    let mut counts = vec![0usize; n_states];
    let mut total = 0;
    for &s in reference.iter().flatten() {
        counts[s] += 1;
        total += 1;
    }
    counts.into_iter().max().unwrap_or(0) as f64 / total.max(1) as f64
}

pub fn oracle_accuracy(dataset_truth: &GeneratorTruth, seqs: &[LabeledSequence]) -> Result<AccuracyReport> {
    let decoded = seqs
        .par_iter()
        .map(|s| bayes_oracle_decode(dataset_truth, s))
        .collect::<Result<Vec<_>>>()?;
    let reference = labels_of(seqs)?;
    evaluate_accuracy(&decoded, &reference, dataset_truth.signature.n_states)
}

/// Ground-truth paths of labelled sequences.
pub fn labels_of(seqs: &[LabeledSequence]) -> Result<Vec<Vec<usize>>> {
    seqs.iter()
        .map(|s| {
            s.states
                .clone()
                .ok_or_else(|| BossError::MissingLabels(format!("sequence '{}'", s.id)))
        })
        .collect()
}
