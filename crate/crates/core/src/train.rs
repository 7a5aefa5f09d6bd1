//! Parameter estimation.
//!
//! The chain (`pi`, `trans`) gets closed-form smoothed count updates; the
//! scorer networks get gradient ascent on emission log-likelihood with
//! hand-derived backpropagation through the softmax, the ratio and the
//! softplus effort map. Every accepted iteration is non-decreasing in the
//! tracked objective; a step that would lower it is halved, and training
//! stops with `halving_exhausted` set when halving runs out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BossError, Result};
use crate::hmm::{expected_transition_counts, forward_backward_log, BossModel};
use crate::relevance::{
    evaluate_hypotheses, log_softmax, sigmoid, step_features, ScorerNet,
};
use crate::vectors::{ContextVector, LabeledSequence, ObservationVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    Em,
}

impl std::str::FromStr for TrainMode {
    type Err = BossError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "em" => Ok(Self::Em),
            other => Err(BossError::InvalidParameter(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Convergence threshold. Supervised: change in the per-step mean
    /// objective. EM: change in total log-likelihood per sequence.
    pub tolerance: f64,
    pub step_halving_max: usize,
    /// Gradient steps on the emission networks per EM iteration.
    pub em_gradient_steps: usize,
    /// Additive pseudocount for the `pi` / `trans` count updates.
    pub pseudocount: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Supervised,
            iterations: 200,
            learning_rate: 50.0,
            seed: 0,
            tolerance: 1e-7,
            step_halving_max: 20,
            em_gradient_steps: 5,
            pseudocount: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(BossError::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BossError::InvalidParameter("learning_rate must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(BossError::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.pseudocount >= 0.0 && self.pseudocount.is_finite()) {
            return Err(BossError::InvalidParameter("pseudocount must be non-negative".into()));
        }
        if self.em_gradient_steps == 0 {
            return Err(BossError::InvalidParameter("em_gradient_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    /// Objective before the first update.
    pub initial_ll: f64,
    /// Objective after each accepted iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub halving_exhausted: bool,
    pub final_ll: f64,
}

/// Gradient with respect to every parameter of both scorer networks, laid
/// out like the networks themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub net_e: ScorerNet,
    pub net_p: ScorerNet,
}

impl ModelGradient {
    pub fn zeros_like(model: &BossModel) -> Self {
        let d = model.signature.scorer_input_dim();
        Self {
            net_e: ScorerNet::zeros(d, model.net_e.hidden_width()),
            net_p: ScorerNet::zeros(d, model.net_p.hidden_width()),
        }
    }

    /// Flattened as net_e parameters then net_p parameters.
    pub fn flat(&self) -> Vec<f64> {
        self.net_e.params().chain(self.net_p.params()).collect()
    }

    fn add_scaled(&mut self, other: &ModelGradient, scale: f64) {
        for (a, b) in self.net_e.params_mut().zip(other.net_e.params()) {
            *a += scale * b;
        }
        for (a, b) in self.net_p.params_mut().zip(other.net_p.params()) {
            *a += scale * b;
        }
    }
}

/// `∂ log P(O|H_j) / ∂ r_k = δ_jk − P(H_k|O)`.
pub fn log_emission_ratio_gradient(probs: &[f64], j: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| if k == j { 1.0 - p } else { -p })
        .collect()
}

fn backprop_net(
    grad: &mut ScorerNet,
    net: &ScorerNet,
    hidden: &[f64],
    features: &[f64],
    slot: usize,
    n_states: usize,
    upstream: f64,
) {
    grad.b2 += upstream;
    for i in 0..hidden.len() {
        grad.w2[i] += upstream * hidden[i];
        let dz = upstream * net.w2[i] * (1.0 - hidden[i] * hidden[i]);
        grad.b1[i] += dz;
        let row = &mut grad.w1[i];
        row[slot] += dz;
        for (w, f) in row[n_states..].iter_mut().zip(features) {
            *w += dz * f;
        }
    }
}

/// Adds `∇ Σ_j weights[j] · log P(O|H_j)` at one step into `grad` and returns
/// the weighted log-probability itself.
fn accumulate_weighted(
    model: &BossModel,
    features: &[f64],
    weights: &[f64],
    grad: &mut ModelGradient,
) -> f64 {
    let n = model.n_states();
    let evals = evaluate_hypotheses(model, features);
    let ratios: Vec<f64> = evals.iter().map(|e| e.ratio).collect();
    let log_probs = log_softmax(&ratios);
    let total_weight: f64 = weights.iter().sum();
    let mut value = 0.0;
    for (k, ev) in evals.iter().enumerate() {
        value += weights[k] * log_probs[k];
        let g_ratio = weights[k] - total_weight * log_probs[k].exp();
        if ev.clamped || g_ratio == 0.0 {
            continue;
        }
        let g_effect = g_ratio / ev.effort;
        let g_raw = -g_ratio * ev.effect / (ev.effort * ev.effort) * sigmoid(ev.raw_effort);
        backprop_net(&mut grad.net_e, &model.net_e, &ev.hidden_e, features, k, n, g_effect);
        backprop_net(&mut grad.net_p, &model.net_p, &ev.hidden_p, features, k, n, g_raw);
    }
    value
}

/// Gradient of `log P(O | H_j)` with respect to both scorer networks.
pub fn grad_emission_log_prob(
    model: &BossModel,
    o: &ObservationVector,
    c: &ContextVector,
    j: usize,
) -> Result<ModelGradient> {
    let n = model.n_states();
    if j >= n {
        return Err(BossError::OutOfRange { index: j, size: n });
    }
    let features = step_features(model, o, c)?;
    let mut weights = vec![0.0; n];
    weights[j] = 1.0;
    let mut grad = ModelGradient::zeros_like(model);
    accumulate_weighted(model, &features, &weights, &mut grad);
    Ok(grad)
}

/// Closed-form chain update from (possibly fractional) counts with an
/// additive pseudocount.
pub fn chain_m_step(
    initial_counts: &[f64],
    transition_counts: &[Vec<f64>],
    pseudocount: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let normalise = |row: &[f64]| -> Vec<f64> {
        let total: f64 = row.iter().map(|c| c + pseudocount).sum();
        if total > 0.0 {
            row.iter().map(|c| (c + pseudocount) / total).collect()
        } else {
            vec![1.0 / row.len() as f64; row.len()]
        }
    };
    let pi = normalise(initial_counts);
    let trans = transition_counts.iter().map(|r| normalise(r)).collect();
    (pi, trans)
}

struct Prepared {
    features: Vec<Vec<f64>>,
    states: Option<Vec<usize>>,
}

fn prepare(model: &BossModel, data: &[LabeledSequence]) -> Result<Vec<Prepared>> {
    if data.is_empty() {
        return Err(BossError::Empty("training data has no sequences".into()));
    }
    data.iter()
        .map(|seq| {
            seq.validate(&model.signature)?;
            let features = (0..seq.len())
                .map(|t| step_features(model, &seq.obs[t], seq.context_at(t)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared {
                features,
                states: seq.states.clone(),
            })
        })
        .collect()
}

fn log_emissions(model: &BossModel, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            let ratios: Vec<f64> = evaluate_hypotheses(model, f).iter().map(|e| e.ratio).collect();
            log_softmax(&ratios)
        })
        .collect()
}

fn step_model(model: &BossModel, grad: &ModelGradient, lr: f64) -> BossModel {
    let mut next = model.clone();
    for (p, g) in next.net_e.params_mut().zip(grad.net_e.params()) {
        *p += lr * g;
    }
    for (p, g) in next.net_p.params_mut().zip(grad.net_p.params()) {
        *p += lr * g;
    }
    next
}

/// `old + alpha · (new − old)` on every parameter; convex combinations of
/// distributions stay distributions.
fn blend(old: &BossModel, new: &BossModel, alpha: f64) -> BossModel {
    let mix = |a: f64, b: f64| a + alpha * (b - a);
    let mut out = old.clone();
    for (o, n) in out.pi.iter_mut().zip(&new.pi) {
        *o = mix(*o, *n);
    }
    for (ro, rn) in out.trans.iter_mut().zip(&new.trans) {
        for (o, n) in ro.iter_mut().zip(rn) {
            *o = mix(*o, *n);
        }
    }
    for (o, n) in out.net_e.params_mut().zip(new.net_e.params()) {
        *o = mix(*o, n);
    }
    for (o, n) in out.net_p.params_mut().zip(new.net_p.params()) {
        *o = mix(*o, n);
    }
    out
}

fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(BossError::Numerical(format!("{what} is not finite")))
    }
}

/// Σ over labelled steps of `log P(O_t | s_t)` and its gradient.
fn supervised_emission_pass(model: &BossModel, data: &[Prepared]) -> (f64, ModelGradient) {
    let n = model.n_states();
    let parts: Vec<(f64, ModelGradient)> = data
        .par_iter()
        .map(|seq| {
            let mut grad = ModelGradient::zeros_like(model);
            let mut value = 0.0;
            let states = seq.states.as_ref().expect("labels checked before training");
            let mut weights = vec![0.0; n];
            for (f, &s) in seq.features.iter().zip(states) {
                weights[s] = 1.0;
                value += accumulate_weighted(model, f, &weights, &mut grad);
                weights[s] = 0.0;
            }
            (value, grad)
        })
        .collect();
    combine(model, parts)
}

fn combine(model: &BossModel, parts: Vec<(f64, ModelGradient)>) -> (f64, ModelGradient) {
    let mut total = 0.0;
    let mut grad = ModelGradient::zeros_like(model);
    for (v, g) in parts {
        total += v;
        grad.add_scaled(&g, 1.0);
    }
    (total, grad)
}

fn supervised_emission_value(model: &BossModel, data: &[Prepared]) -> f64 {
    let parts: Vec<f64> = data
        .par_iter()
        .map(|seq| {
            let states = seq.states.as_ref().expect("labels checked before training");
            log_emissions(model, &seq.features)
                .iter()
                .zip(states)
                .map(|(le, &s)| le[s])
                .sum()
        })
        .collect();
    parts.into_iter().sum()
}

/// Full supervised objective: joint log-probability of every labelled path.
pub fn supervised_objective(model: &BossModel, data: &[LabeledSequence]) -> Result<f64> {
    let prepared = prepare(model, data)?;
    check_labels(&prepared)?;
    Ok(chain_log_prob(model, &prepared) + supervised_emission_value(model, &prepared))
}

fn chain_log_prob(model: &BossModel, data: &[Prepared]) -> f64 {
    let log_pi = model.log_pi();
    let log_trans = model.log_trans();
    let mut total = 0.0;
    for seq in data {
        let states = seq.states.as_ref().expect("labels checked before training");
        total += log_pi[states[0]];
        for w in states.windows(2) {
            total += log_trans[w[0]][w[1]];
        }
    }
    total
}

fn check_labels(data: &[Prepared]) -> Result<()> {
    match data.iter().position(|s| s.states.is_none()) {
        Some(i) => Err(BossError::MissingLabels(format!("sequence {i} has no states"))),
        None => Ok(()),
    }
}

/// Supervised maximum likelihood: smoothed empirical chain, then gradient
/// ascent on `Σ log P(O_t | s_t)` for the scorer networks.
pub fn fit_supervised(
    model: &BossModel,
    data: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<(BossModel, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    let prepared = prepare(model, data)?;
    check_labels(&prepared)?;
    let n = model.n_states();
    let steps: usize = prepared.iter().map(|s| s.features.len()).sum();

    let mut initial_counts = vec![0.0; n];
    let mut transition_counts = vec![vec![0.0; n]; n];
    for seq in &prepared {
        let states = seq.states.as_ref().expect("checked");
        initial_counts[states[0]] += 1.0;
        for w in states.windows(2) {
            transition_counts[w[0]][w[1]] += 1.0;
        }
    }
    let (pi, trans) = chain_m_step(&initial_counts, &transition_counts, cfg.pseudocount);
    let mut current = model.clone();
    current.pi = pi;
    current.trans = trans;

    let chain = chain_log_prob(&current, &prepared);
    let (mut emission, mut grad) = supervised_emission_pass(&current, &prepared);
    let initial_ll = ensure_finite(chain + emission, "supervised objective")?;
    let mut report = TrainReport {
        mode: TrainMode::Supervised,
        initial_ll,
        log_likelihood_trace: Vec::new(),
        converged: false,
        halving_exhausted: false,
        final_ll: initial_ll,
    };

    for iter in 0..cfg.iterations {
        let scale = 1.0 / steps as f64;
        let mut lr = cfg.learning_rate;
        let mut accepted = None;
        for _ in 0..=cfg.step_halving_max {
            let candidate = step_model(&current, &grad, lr * scale);
            let (value, cand_grad) = supervised_emission_pass(&candidate, &prepared);
            if value.is_finite() && value >= emission {
                accepted = Some((candidate, value, cand_grad));
                break;
            }
            lr *= 0.5;
        }
        let Some((candidate, value, cand_grad)) = accepted else {
            log::info!("supervised: step halving exhausted at iteration {iter}");
            report.halving_exhausted = true;
            break;
        };
        let gain = (value - emission) / steps as f64;
        current = candidate;
        emission = value;
        grad = cand_grad;
        report.log_likelihood_trace.push(chain + emission);
        log::debug!("supervised iter {iter}: objective {:.6}", chain + emission);
        if gain < cfg.tolerance {
            report.converged = true;
            break;
        }
    }
    report.final_ll = chain + emission;
    Ok((current, report))
}

/// E-step statistics summed over the data set.
#[derive(Debug, Clone)]
pub struct EStep {
    pub log_likelihood: f64,
    pub initial_counts: Vec<f64>,
    pub transition_counts: Vec<Vec<f64>>,
    /// Per-sequence, per-step state posteriors.
    pub posteriors: Vec<Vec<Vec<f64>>>,
}

fn e_step(model: &BossModel, data: &[Prepared]) -> Result<EStep> {
    let n = model.n_states();
    let log_pi = model.log_pi();
    let log_trans = model.log_trans();
    let parts: Vec<Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)>> = data
        .par_iter()
        .map(|seq| {
            let log_emit = log_emissions(model, &seq.features);
            let fb = forward_backward_log(&log_pi, &log_trans, &log_emit)?;
            let xi = expected_transition_counts(&fb, &log_trans, &log_emit);
            Ok((fb.log_likelihood, fb.posteriors, xi))
        })
        .collect();
    let mut out = EStep {
        log_likelihood: 0.0,
        initial_counts: vec![0.0; n],
        transition_counts: vec![vec![0.0; n]; n],
        posteriors: Vec::with_capacity(data.len()),
    };
    for part in parts {
        let (ll, post, xi) = part?;
        out.log_likelihood += ll;
        for (c, p) in out.initial_counts.iter_mut().zip(&post[0]) {
            *c += p;
        }
        for (row, xrow) in out.transition_counts.iter_mut().zip(&xi) {
            for (c, x) in row.iter_mut().zip(xrow) {
                *c += x;
            }
        }
        out.posteriors.push(post);
    }
    Ok(out)
}

/// Total data log-likelihood `Σ log P(O)` under `model`.
pub fn data_log_likelihood(model: &BossModel, data: &[LabeledSequence]) -> Result<f64> {
    let prepared = prepare(model, data)?;
    Ok(e_step(model, &prepared)?.log_likelihood)
}

/// Expected emission log-likelihood `Σ γ_tj log P(O_t|H_j)` and its gradient.
fn expected_emission_pass(
    model: &BossModel,
    data: &[Prepared],
    posteriors: &[Vec<Vec<f64>>],
) -> (f64, ModelGradient) {
    let parts: Vec<(f64, ModelGradient)> = data
        .par_iter()
        .zip(posteriors.par_iter())
        .map(|(seq, post)| {
            let mut grad = ModelGradient::zeros_like(model);
            let mut value = 0.0;
            for (f, w) in seq.features.iter().zip(post) {
                value += accumulate_weighted(model, f, w, &mut grad);
            }
            (value, grad)
        })
        .collect();
    combine(model, parts)
}

/// Generalized EM: forward–backward E-step, closed-form chain M-step and
/// `em_gradient_steps` ascent steps on the expected emission log-likelihood.
pub fn fit_em(
    model: &BossModel,
    data: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<(BossModel, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    let prepared = prepare(model, data)?;
    let steps: usize = prepared.iter().map(|s| s.features.len()).sum();
    let scale = 1.0 / steps as f64;

    let mut current = model.clone();
    let mut stats = e_step(&current, &prepared)?;
    let initial_ll = ensure_finite(stats.log_likelihood, "data log-likelihood")?;
    let mut report = TrainReport {
        mode: TrainMode::Em,
        initial_ll,
        log_likelihood_trace: Vec::new(),
        converged: false,
        halving_exhausted: false,
        final_ll: initial_ll,
    };

    for iter in 0..cfg.iterations {
        let (pi, trans) =
            chain_m_step(&stats.initial_counts, &stats.transition_counts, cfg.pseudocount);
        let mut proposal = current.clone();
        proposal.pi = pi;
        proposal.trans = trans;

        let (mut q_value, mut q_grad) = expected_emission_pass(&proposal, &prepared, &stats.posteriors);
        for _ in 0..cfg.em_gradient_steps {
            let mut lr = cfg.learning_rate;
            let mut moved = false;
            for _ in 0..=cfg.step_halving_max {
                let candidate = step_model(&proposal, &q_grad, lr * scale);
                let (value, grad) = expected_emission_pass(&candidate, &prepared, &stats.posteriors);
                if value.is_finite() && value >= q_value {
                    proposal = candidate;
                    q_value = value;
                    q_grad = grad;
                    moved = true;
                    break;
                }
                lr *= 0.5;
            }
            if !moved {
                break;
            }
        }

        // The pseudocount makes the chain update a MAP step, so the
        // likelihood is re-checked and the whole update shrunk on a drop.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.step_halving_max {
            let candidate = if alpha == 1.0 {
                proposal.clone()
            } else {
                blend(&current, &proposal, alpha)
            };
            let cand_stats = e_step(&candidate, &prepared)?;
            if cand_stats.log_likelihood.is_finite()
                && cand_stats.log_likelihood >= stats.log_likelihood
            {
                accepted = Some((candidate, cand_stats));
                break;
            }
            alpha *= 0.5;
        }
        let Some((candidate, cand_stats)) = accepted else {
            log::info!("em: step halving exhausted at iteration {iter}");
            report.halving_exhausted = true;
            break;
        };
        let delta = cand_stats.log_likelihood - stats.log_likelihood;
        current = candidate;
        stats = cand_stats;
        report.log_likelihood_trace.push(stats.log_likelihood);
        log::debug!("em iter {iter}: log-likelihood {:.6}", stats.log_likelihood);
        if delta.abs() < cfg.tolerance * prepared.len() as f64 {
            report.converged = true;
            break;
        }
    }
    report.final_ll = stats.log_likelihood;
    Ok((current, report))
}

/// Dispatches on `cfg.mode`.
pub fn fit(
    model: &BossModel,
    data: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<(BossModel, TrainReport)> {
    match cfg.mode {
        TrainMode::Supervised => fit_supervised(model, data, cfg),
        TrainMode::Em => fit_em(model, data, cfg),
    }
}

/// One gradient-check probe: observation, context and target hypothesis.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub obs: ObservationVector,
    pub ctx: ContextVector,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    /// Index into the flattened (net_e, net_p) parameter vector.
    pub worst_parameter: usize,
    pub parameters_checked: usize,
    pub passed: bool,
}

/// Denominator floor for the relative error. Gradients smaller than this
/// compare on an absolute scale, since central differences cannot resolve
/// them below roughly `1e-9` when `|log P|` is large.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn log_prob_at(model: &BossModel, features: &[f64], j: usize) -> f64 {
    let ratios: Vec<f64> = evaluate_hypotheses(model, features).iter().map(|e| e.ratio).collect();
    log_softmax(&ratios)[j]
}

fn param_mut(model: &mut BossModel, index: usize) -> &mut f64 {
    let ne = model.net_e.param_count();
    if index < ne {
        model.net_e.params_mut().nth(index).expect("index in range")
    } else {
        model.net_p.params_mut().nth(index - ne).expect("index in range")
    }
}

/// Compares [`grad_emission_log_prob`] against central finite differences
/// over every scorer parameter.
pub fn gradient_check(
    model: &BossModel,
    samples: &[GradientSample],
    step: f64,
    tol: f64,
) -> Result<GradientCheckReport> {
    gradient_check_with(model, samples, step, tol, grad_emission_log_prob)
}

/// [`gradient_check`] with a caller-supplied analytic gradient.
pub fn gradient_check_with<F>(
    model: &BossModel,
    samples: &[GradientSample],
    step: f64,
    tol: f64,
    analytic: F,
) -> Result<GradientCheckReport>
where
    F: Fn(&BossModel, &ObservationVector, &ContextVector, usize) -> Result<ModelGradient>,
{
    if !(step > 0.0) {
        return Err(BossError::InvalidParameter("finite-difference step must be positive".into()));
    }
    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        worst_parameter: 0,
        parameters_checked: 0,
        passed: true,
    };
    let mut probe = model.clone();
    for sample in samples {
        let features = step_features(model, &sample.obs, &sample.ctx)?;
        let grad = analytic(model, &sample.obs, &sample.ctx, sample.target)?.flat();
        for (index, g) in grad.iter().enumerate() {
            let original = *param_mut(&mut probe, index);
            *param_mut(&mut probe, index) = original + step;
            let up = log_prob_at(&probe, &features, sample.target);
            *param_mut(&mut probe, index) = original - step;
            let down = log_prob_at(&probe, &features, sample.target);
            *param_mut(&mut probe, index) = original;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(*g, numeric);
            if !(err <= report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_parameter = index;
            }
            report.parameters_checked += 1;
        }
    }
    report.passed = report.max_relative_error <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relevance::emission_distribution;
    use crate::vectors::{ContextTrack, DimensionSignature};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn random_point(sig: &DimensionSignature, rng: &mut ChaCha8Rng) -> (ObservationVector, ContextVector) {
        let mut v = |d: usize| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        (
            ObservationVector {
                v_l: v(sig.d_l),
                v_ac: v(sig.d_ac),
                v_cd: v(sig.d_cd),
                v_is: v(sig.d_is),
            },
            ContextVector {
                c_hist: v(sig.d_hist),
                c_env: v(sig.d_env),
                c_char: v(sig.d_char),
                c_task: v(sig.d_task),
            },
        )
    }

    #[test]
    fn symmetric_point_ratio_gradient() {
        // Constant networks give equal ratios; the target's effect carries
        // (1 - 1/n) / effort and the shared bias b2 cancels exactly.
        let sig = small_sig(4);
        let mut model = BossModel::zeros(sig, 3);
        model.net_e.b2 = 0.8;
        model.net_p.b2 = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (o, c) = random_point(&sig, &mut rng);
        let probs = emission_distribution(&model, &o, &c).unwrap();
        let effort = crate::relevance::softplus(0.3) + model.epsilon_effort;
        for j in 0..4 {
            let g = log_emission_ratio_gradient(&probs, j);
            let target_effect_grad = g[j] / effort;
            assert!(target_effect_grad > 0.0);
            assert!((target_effect_grad - 0.75 / effort).abs() < 1e-12);
            for k in (0..4).filter(|&k| k != j) {
                assert!((g[k] + 0.25).abs() < 1e-12);
            }
            let grad = grad_emission_log_prob(&model, &o, &c, j).unwrap();
            assert!(grad.net_e.b2.abs() < 1e-15);
            assert!(grad.net_p.b2.abs() < 1e-15);
        }
    }

    #[test]
    fn ratio_gradient_sums_to_zero() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        for j in 0..4 {
            let g = log_emission_ratio_gradient(&probs, j);
            assert!(g.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_check_zero_and_random_networks() {
        let sig = small_sig(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<GradientSample> = (0..3)
            .map(|j| {
                let (obs, ctx) = random_point(&sig, &mut rng);
                GradientSample { obs, ctx, target: j }
            })
            .collect();
        let zero = BossModel::zeros(sig, 4);
        let r = gradient_check(&zero, &samples, 1e-5, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        for seed in 0..5 {
            let model = BossModel::random(sig, 5, seed);
            let r = gradient_check(&model, &samples, 1e-5, 1e-4).unwrap();
            assert!(r.passed, "{r:?}");
            assert_eq!(r.parameters_checked, 3 * 2 * model.net_e.param_count());
        }
    }

    #[test]
    fn gradient_check_catches_corruption() {
        let sig = small_sig(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (obs, ctx) = random_point(&sig, &mut rng);
        let samples = vec![GradientSample { obs, ctx, target: 1 }];
        let model = BossModel::random(sig, 5, 9);
        let corrupt = |m: &BossModel, o: &ObservationVector, c: &ContextVector, j: usize| {
            let mut g = grad_emission_log_prob(m, o, c, j)?;
            let (i, _) = g
                .net_e
                .w2
                .iter()
                .enumerate()
                .fold((0, 0.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
            g.net_e.w2[i] *= 2.0;
            Ok(g)
        };
        let r = gradient_check_with(&model, &samples, 1e-5, 1e-4, corrupt).unwrap();
        assert!(!r.passed);
        assert!(gradient_check(&model, &samples, 0.0, 1e-4).is_err());
    }

    #[test]
    fn chain_m_step_hand_counts() {
        // Two states, hand-set expected counts.
        let initial = [0.7, 0.3];
        let xi = vec![vec![1.5, 0.5], vec![0.25, 0.75]];
        let (pi, trans) = chain_m_step(&initial, &xi, 0.0);
        assert!((pi[0] - 0.7).abs() < 1e-15);
        assert!((trans[0][0] - 0.75).abs() < 1e-15);
        assert!((trans[0][1] - 0.25).abs() < 1e-15);
        assert!((trans[1][0] - 0.25).abs() < 1e-15);
        assert!((trans[1][1] - 0.75).abs() < 1e-15);
        let (pi, trans) = chain_m_step(&initial, &xi, 1.0);
        assert!((pi[0] - 1.7 / 3.0).abs() < 1e-15);
        assert!((trans[0][0] - 2.5 / 4.0).abs() < 1e-15);
        assert!((trans[1][1] - 1.75 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn em_e_step_counts_on_two_state_toy() {
        // Hand-set posteriors: a two-step sequence whose emissions force the
        // path 0 -> 1 gives xi = [[0,1],[0,0]] and gamma_1 = (1,0).
        let log_pi = [0.5f64.ln(), 0.5f64.ln()];
        let log_trans = vec![vec![0.5f64.ln(); 2]; 2];
        let log_emit = vec![vec![0.0, f64::NEG_INFINITY], vec![f64::NEG_INFINITY, 0.0]];
        let fb = forward_backward_log(&log_pi, &log_trans, &log_emit).unwrap();
        let xi = expected_transition_counts(&fb, &log_trans, &log_emit);
        assert!((xi[0][1] - 1.0).abs() < 1e-12);
        assert!(xi[0][0].abs() < 1e-12 && xi[1][0].abs() < 1e-12 && xi[1][1].abs() < 1e-12);
        let (pi, trans) = chain_m_step(&fb.posteriors[0], &xi, 1.0);
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((trans[0][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((trans[1][0] - 0.5).abs() < 1e-12);
    }

    fn chain_data(sig: DimensionSignature, truth: &[Vec<f64>], n_seq: usize, steps: usize) -> Vec<LabeledSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = sig.n_states;
        let pi = vec![1.0 / n as f64; n];
        (0..n_seq)
            .map(|i| {
                let states = crate::hmm::sample_states(&pi, truth, steps, &mut rng);
                let obs = states
                    .iter()
                    .map(|&s| {
                        let mut o = ObservationVector::zeros(&sig);
                        o.v_l[0] = s as f64 + rng.random_range(-0.3..0.3);
                        o
                    })
                    .collect();
                LabeledSequence {
                    id: format!("seq-{i}"),
                    obs,
                    ctx: ContextTrack::Shared(ContextVector::zeros(&sig)),
                    states: Some(states),
                }
            })
            .collect()
    }

    #[test]
    fn supervised_recovers_chain_and_is_monotone() {
        let sig = small_sig(3);
        let truth = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.25, 0.25, 0.5],
        ];
        let data = chain_data(sig, &truth, 500, 20);
        let model = BossModel::random(sig, 6, 4);
        let cfg = TrainConfig {
            iterations: 30,
            ..TrainConfig::default()
        };
        let (fitted, report) = fit_supervised(&model, &data, &cfg).unwrap();
        for (row, trow) in fitted.trans.iter().zip(&truth) {
            for (a, b) in row.iter().zip(trow) {
                assert!((a - b).abs() < 0.05, "{row:?} vs {trow:?}");
            }
        }
        let mut prev = report.initial_ll;
        for v in &report.log_likelihood_trace {
            assert!(*v >= prev - 1e-6);
            prev = *v;
        }
        assert!(report.final_ll > report.initial_ll);
        assert!(fitted.validate().is_ok());
    }

    #[test]
    fn supervised_single_sequence_in_state_zero() {
        let sig = small_sig(3);
        let seq = LabeledSequence {
            id: "z".into(),
            obs: vec![ObservationVector::zeros(&sig); 4],
            ctx: ContextTrack::Shared(ContextVector::zeros(&sig)),
            states: Some(vec![0; 4]),
        };
        let cfg = TrainConfig {
            iterations: 2,
            ..TrainConfig::default()
        };
        let (m, _) = fit_supervised(&BossModel::zeros(sig, 2), &[seq.clone()], &cfg).unwrap();
        assert!((m.pi[0] - 0.5).abs() < 1e-15);
        assert!(m.pi[0] > m.pi[1] && m.pi[0] > m.pi[2]);

        let mut unlabeled = seq;
        unlabeled.states = None;
        assert!(matches!(
            fit_supervised(&BossModel::zeros(sig, 2), &[unlabeled], &cfg),
            Err(BossError::MissingLabels(_))
        ));
        assert!(matches!(
            fit_supervised(&BossModel::zeros(sig, 2), &[], &cfg),
            Err(BossError::Empty(_))
        ));
        assert!(matches!(
            fit_em(&BossModel::zeros(sig, 2), &[], &cfg),
            Err(BossError::Empty(_))
        ));
    }

    #[test]
    fn em_is_monotone_and_improves() {
        let sig = small_sig(3);
        let truth = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
        ];
        let mut data = chain_data(sig, &truth, 60, 15);
        for s in &mut data {
            s.states = None;
        }
        let cfg = TrainConfig {
            mode: TrainMode::Em,
            iterations: 15,
            tolerance: 1e-9,
            ..TrainConfig::default()
        };
        let (fitted, report) = fit_em(&BossModel::random(sig, 6, 8), &data, &cfg).unwrap();
        let mut prev = report.initial_ll;
        for v in &report.log_likelihood_trace {
            assert!(*v >= prev - 1e-6);
            prev = *v;
        }
        assert!(report.final_ll >= report.initial_ll);
        assert!(fitted.validate().is_ok());
        assert!((data_log_likelihood(&fitted, &data).unwrap() - report.final_ll).abs() < 1e-9);
    }

    #[test]
    fn training_is_reproducible() {
        let sig = small_sig(3);
        let truth = vec![vec![1.0 / 3.0; 3]; 3];
        let data = chain_data(sig, &truth, 30, 10);
        let cfg = TrainConfig {
            iterations: 5,
            ..TrainConfig::default()
        };
        let a = fit_supervised(&BossModel::random(sig, 4, 1), &data, &cfg).unwrap();
        let b = fit_supervised(&BossModel::random(sig, 4, 1), &data, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
