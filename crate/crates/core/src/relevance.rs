//! Relevance scoring: cognitive effect, processing effort, their ratio and
//! the softmax emission distribution over hypotheses.
//!
//! Both scorers are one-hidden-layer tanh networks over the input
//! `onehot(H) ‖ flatten(O) ‖ flatten(C)`. Effort is mapped through
//! `softplus(raw) + epsilon` so it is strictly positive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, BossError, Result};
use crate::hmm::BossModel;
use crate::vectors::{
    flatten_context, flatten_observation, hypothesis_embedding, ContextVector, DimensionSignature,
    Hypothesis, ObservationVector,
};

pub const DEFAULT_EFFORT_EPSILON: f64 = 1e-3;
pub const RATIO_CLAMP: f64 = 50.0;
pub const DEFAULT_HIDDEN_WIDTH: usize = 16;

/// One-hidden-layer scorer: `w2 · tanh(w1·x + b1) + b2`.
///
/// `w1` is stored as `hidden_width` rows of length `input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerNet {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ScorerNet {
    pub fn zeros(input_dim: usize, hidden_width: usize) -> Self {
        Self {
            w1: vec![vec![0.0; input_dim]; hidden_width],
            b1: vec![0.0; hidden_width],
            w2: vec![0.0; hidden_width],
            b2: 0.0,
        }
    }

    /// Uniform in [-0.5, 0.5] scaled by 1/sqrt(input_dim).
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_width: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (input_dim as f64).sqrt();
        let mut draw = || (rng.random::<f64>() - 0.5) * scale;
        let w1 = (0..hidden_width)
            .map(|_| (0..input_dim).map(|_| draw()).collect())
            .collect();
        let b1 = (0..hidden_width).map(|_| draw()).collect();
        let w2 = (0..hidden_width).map(|_| draw()).collect();
        let b2 = draw();
        Self { w1, b1, w2, b2 }
    }

    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let h = self.b1.len();
        if h == 0 {
            return Err(BossError::InvalidParameter("hidden_width must be >= 1".into()));
        }
        if self.w1.len() != h {
            return Err(dim_err("w1 rows", h, self.w1.len()));
        }
        if self.w2.len() != h {
            return Err(dim_err("w2", h, self.w2.len()));
        }
        for row in &self.w1 {
            if row.len() != input_dim {
                return Err(dim_err("w1 columns", input_dim, row.len()));
            }
        }
        if !self.params().all(f64::is_finite) {
            return Err(BossError::NonFinite("scorer parameters".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.hidden_width() * (self.input_dim() + 2) + 1
    }

    /// Parameters in a fixed order: w1 (row-major), b1, w2, b2.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .flatten()
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .chain(std::iter::once(self.b2))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .flatten()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }

    /// Network output and hidden activations for input `x`.
    pub(crate) fn forward_cached(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let hidden: Vec<f64> = self
            .w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| (dot(row, x) + b).tanh())
            .collect();
        (dot(&self.w2, &hidden) + self.b2, hidden)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates `net` on `x`.
pub fn scorer_forward(net: &ScorerNet, x: &[f64]) -> Result<f64> {
    if x.len() != net.input_dim() {
        return Err(dim_err("scorer input", net.input_dim(), x.len()));
    }
    Ok(net.forward_cached(x).0)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn scorer_input(
    sig: &DimensionSignature,
    h: &Hypothesis,
    o: &ObservationVector,
    c: &ContextVector,
) -> Result<Vec<f64>> {
    let mut x = hypothesis_embedding(h, sig.n_states)?;
    x.extend(flatten_observation(o, sig)?);
    x.extend(flatten_context(c, sig)?);
    Ok(x)
}

/// Cognitive effect of hypothesis `h`.
pub fn effect_score(
    net_e: &ScorerNet,
    sig: &DimensionSignature,
    h: &Hypothesis,
    o: &ObservationVector,
    c: &ContextVector,
) -> Result<f64> {
    scorer_forward(net_e, &scorer_input(sig, h, o, c)?)
}

/// Processing effort of hypothesis `h`; always `>= epsilon > 0`.
pub fn effort_score(
    net_p: &ScorerNet,
    sig: &DimensionSignature,
    h: &Hypothesis,
    o: &ObservationVector,
    c: &ContextVector,
    epsilon: f64,
) -> Result<f64> {
    let raw = scorer_forward(net_p, &scorer_input(sig, h, o, c)?)?;
    Ok(softplus(raw) + epsilon)
}

/// `effect / effort`, clamped to `[-RATIO_CLAMP, RATIO_CLAMP]`.
pub fn relevance_ratio(effect: f64, effort: f64) -> Result<f64> {
    if !(effort > 0.0) {
        return Err(BossError::Contract(format!("effort must be positive, got {effort}")));
    }
    let r = effect / effort;
    if r.is_nan() {
        return Err(BossError::NonFinite("relevance ratio".into()));
    }
    Ok(r.clamp(-RATIO_CLAMP, RATIO_CLAMP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelevanceScores {
    pub effect: f64,
    pub effort: f64,
    pub ratio: f64,
}

/// Softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let ls = log_softmax(scores);
    ls.into_iter().map(f64::exp).collect()
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| (s - max) - log_norm).collect()
}

/// Everything the forward pass produces for one hypothesis; kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct HypothesisEval {
    pub effect: f64,
    pub raw_effort: f64,
    pub effort: f64,
    pub ratio: f64,
    pub clamped: bool,
    pub hidden_e: Vec<f64>,
    pub hidden_p: Vec<f64>,
}

/// Observation and context features shared by every hypothesis at one step.
pub(crate) fn step_features(
    model: &BossModel,
    o: &ObservationVector,
    c: &ContextVector,
) -> Result<Vec<f64>> {
    let sig = &model.signature;
    let mut f = flatten_observation(o, sig)?;
    f.extend(flatten_context(c, sig)?);
    Ok(f)
}

/// Scores every hypothesis given the shared step features. The one-hot slot
/// contributes only column `j` of `w1`, so the shared part is computed once.
pub(crate) fn evaluate_hypotheses(model: &BossModel, features: &[f64]) -> Vec<HypothesisEval> {
    let n = model.signature.n_states;
    let pre = |net: &ScorerNet| -> Vec<f64> {
        net.w1
            .iter()
            .zip(&net.b1)
            .map(|(row, b)| dot(&row[n..], features) + b)
            .collect()
    };
    let pre_e = pre(&model.net_e);
    let pre_p = pre(&model.net_p);
    (0..n)
        .map(|j| {
            let hidden_e: Vec<f64> = pre_e
                .iter()
                .zip(&model.net_e.w1)
                .map(|(z, row)| (z + row[j]).tanh())
                .collect();
            let hidden_p: Vec<f64> = pre_p
                .iter()
                .zip(&model.net_p.w1)
                .map(|(z, row)| (z + row[j]).tanh())
                .collect();
            let effect = dot(&model.net_e.w2, &hidden_e) + model.net_e.b2;
            let raw_effort = dot(&model.net_p.w2, &hidden_p) + model.net_p.b2;
            let effort = softplus(raw_effort) + model.epsilon_effort;
            let unclamped = effect / effort;
            let ratio = unclamped.clamp(-RATIO_CLAMP, RATIO_CLAMP);
            HypothesisEval {
                effect,
                raw_effort,
                effort,
                ratio,
                clamped: unclamped.abs() > RATIO_CLAMP,
                hidden_e,
                hidden_p,
            }
        })
        .collect()
}

/// Effect, effort and ratio for every hypothesis.
pub fn relevance_scores(
    model: &BossModel,
    o: &ObservationVector,
    c: &ContextVector,
) -> Result<Vec<RelevanceScores>> {
    let features = step_features(model, o, c)?;
    Ok(evaluate_hypotheses(model, &features)
        .into_iter()
        .map(|e| RelevanceScores {
            effect: e.effect,
            effort: e.effort,
            ratio: e.ratio,
        })
        .collect())
}

/// Log of the emission distribution `P(O | H_j)` for every `j`.
pub fn emission_log_probs(
    model: &BossModel,
    o: &ObservationVector,
    c: &ContextVector,
) -> Result<Vec<f64>> {
    let features = step_features(model, o, c)?;
    let ratios: Vec<f64> = evaluate_hypotheses(model, &features)
        .iter()
        .map(|e| e.ratio)
        .collect();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(BossError::Numerical("non-finite relevance ratio".into()));
    }
    Ok(log_softmax(&ratios))
}

/// Softmax over hypotheses of their relevance ratios.
pub fn emission_distribution(
    model: &BossModel,
    o: &ObservationVector,
    c: &ContextVector,
) -> Result<Vec<f64>> {
    Ok(emission_log_probs(model, o, c)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Per-step interpretation: the hypothesis with the largest relevance
/// ratio, lowest index on ties.
pub fn best_hypothesis(model: &BossModel, o: &ObservationVector, c: &ContextVector) -> Result<usize> {
    let scores = relevance_scores(model, o, c)?;
    let mut best = 0;
    for (j, s) in scores.iter().enumerate() {
        if s.ratio > scores[best].ratio {
            best = j;
        }
    }
    Ok(best)
}
