//! Observation and context records, their dimension signature, and the
//! flattening that turns them into scorer-network inputs.
//!
//! An observation carries four channels: explicit semantics (`v_l`),
//! affective cues (`v_ac`), contextual dynamics (`v_cd`) and implicit
//! semantics (`v_is`). A context record carries conversational history,
//! environment, speaker/listener characteristics and task channels.
//! Flattening always uses that fixed channel order.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, BossError, Result};

/// Per-channel dimensions plus the number of hidden states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSignature {
    pub d_l: usize,
    pub d_ac: usize,
    pub d_cd: usize,
    pub d_is: usize,
    pub d_hist: usize,
    pub d_env: usize,
    pub d_char: usize,
    pub d_task: usize,
    pub n_states: usize,
}

impl Default for DimensionSignature {
    fn default() -> Self {
        Self {
            d_l: 8,
            d_ac: 4,
            d_cd: 4,
            d_is: 4,
            d_hist: 4,
            d_env: 4,
            d_char: 4,
            d_task: 4,
            n_states: 4,
        }
    }
}

impl DimensionSignature {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_l", self.d_l),
            ("d_ac", self.d_ac),
            ("d_cd", self.d_cd),
            ("d_is", self.d_is),
            ("d_hist", self.d_hist),
            ("d_env", self.d_env),
            ("d_char", self.d_char),
            ("d_task", self.d_task),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(BossError::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.n_states < 2 {
            return Err(BossError::InvalidParameter(format!(
                "n_states must be >= 2, got {}",
                self.n_states
            )));
        }
        Ok(())
    }

    pub fn observation_dim(&self) -> usize {
        self.d_l + self.d_ac + self.d_cd + self.d_is
    }

    pub fn context_dim(&self) -> usize {
        self.d_hist + self.d_env + self.d_char + self.d_task
    }

    /// Scorer input width: one-hot hypothesis, observation, context.
    pub fn scorer_input_dim(&self) -> usize {
        self.n_states + self.observation_dim() + self.context_dim()
    }

    fn observation_channels(&self) -> [(&'static str, usize); 4] {
        [
            ("v_l", self.d_l),
            ("v_ac", self.d_ac),
            ("v_cd", self.d_cd),
            ("v_is", self.d_is),
        ]
    }

    fn context_channels(&self) -> [(&'static str, usize); 4] {
        [
            ("c_hist", self.d_hist),
            ("c_env", self.d_env),
            ("c_char", self.d_char),
            ("c_task", self.d_task),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub v_l: Vec<f64>,
    pub v_ac: Vec<f64>,
    pub v_cd: Vec<f64>,
    pub v_is: Vec<f64>,
}

impl ObservationVector {
    pub fn zeros(sig: &DimensionSignature) -> Self {
        Self {
            v_l: vec![0.0; sig.d_l],
            v_ac: vec![0.0; sig.d_ac],
            v_cd: vec![0.0; sig.d_cd],
            v_is: vec![0.0; sig.d_is],
        }
    }

    fn channels(&self) -> [&[f64]; 4] {
        [&self.v_l, &self.v_ac, &self.v_cd, &self.v_is]
    }

    pub fn validate(&self, sig: &DimensionSignature) -> Result<()> {
        validate_channels(&sig.observation_channels(), &self.channels())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub c_hist: Vec<f64>,
    pub c_env: Vec<f64>,
    pub c_char: Vec<f64>,
    pub c_task: Vec<f64>,
}

impl ContextVector {
    pub fn zeros(sig: &DimensionSignature) -> Self {
        Self {
            c_hist: vec![0.0; sig.d_hist],
            c_env: vec![0.0; sig.d_env],
            c_char: vec![0.0; sig.d_char],
            c_task: vec![0.0; sig.d_task],
        }
    }

    fn channels(&self) -> [&[f64]; 4] {
        [&self.c_hist, &self.c_env, &self.c_char, &self.c_task]
    }

    pub fn validate(&self, sig: &DimensionSignature) -> Result<()> {
        validate_channels(&sig.context_channels(), &self.channels())
    }
}

fn validate_channels(expected: &[(&'static str, usize); 4], got: &[&[f64]; 4]) -> Result<()> {
    for ((name, dim), values) in expected.iter().zip(got.iter()) {
        if values.len() != *dim {
            return Err(dim_err(name, *dim, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BossError::NonFinite((*name).to_string()));
        }
    }
    Ok(())
}

/// A candidate interpretation in the finite hypothesis set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub index: usize,
    pub label: String,
}

impl Hypothesis {
    pub fn new(index: usize, label: impl Into<String>) -> Self {
        Self {
            index,
            label: label.into(),
        }
    }
}

/// Concatenates `v_l ‖ v_ac ‖ v_cd ‖ v_is` after validating against `sig`.
pub fn flatten_observation(o: &ObservationVector, sig: &DimensionSignature) -> Result<Vec<f64>> {
    o.validate(sig)?;
    Ok(o.channels().concat())
}

pub fn unflatten_observation(flat: &[f64], sig: &DimensionSignature) -> Result<ObservationVector> {
    let [l, ac, cd, is] = split_channels(flat, &sig.observation_channels(), "observation")?;
    let o = ObservationVector {
        v_l: l,
        v_ac: ac,
        v_cd: cd,
        v_is: is,
    };
    o.validate(sig)?;
    Ok(o)
}

/// Concatenates `c_hist ‖ c_env ‖ c_char ‖ c_task` after validating against `sig`.
pub fn flatten_context(c: &ContextVector, sig: &DimensionSignature) -> Result<Vec<f64>> {
    c.validate(sig)?;
    Ok(c.channels().concat())
}

pub fn unflatten_context(flat: &[f64], sig: &DimensionSignature) -> Result<ContextVector> {
    let [hist, env, chr, task] = split_channels(flat, &sig.context_channels(), "context")?;
    let c = ContextVector {
        c_hist: hist,
        c_env: env,
        c_char: chr,
        c_task: task,
    };
    c.validate(sig)?;
    Ok(c)
}

fn split_channels(
    flat: &[f64],
    channels: &[(&'static str, usize); 4],
    what: &str,
) -> Result<[Vec<f64>; 4]> {
    let total: usize = channels.iter().map(|(_, d)| d).sum();
    if flat.len() != total {
        return Err(dim_err(what, total, flat.len()));
    }
    let mut offset = 0;
    Ok(channels.map(|(_, d)| {
        let part = flat[offset..offset + d].to_vec();
        offset += d;
        part
    }))
}

/// One-hot embedding of a hypothesis index.
pub fn hypothesis_embedding(h: &Hypothesis, n_states: usize) -> Result<Vec<f64>> {
    one_hot(h.index, n_states)
}

pub(crate) fn one_hot(index: usize, n: usize) -> Result<Vec<f64>> {
    if index >= n {
        return Err(BossError::OutOfRange { index, size: n });
    }
    let mut e = vec![0.0; n];
    e[index] = 1.0;
    Ok(e)
}

/// Context for a sequence: either one record shared by every step or one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextTrack {
    Shared(ContextVector),
    PerStep(Vec<ContextVector>),
}

impl ContextTrack {
    pub fn at(&self, t: usize) -> &ContextVector {
        match self {
            ContextTrack::Shared(c) => c,
            ContextTrack::PerStep(cs) => &cs[t],
        }
    }
}

/// A time-indexed series of (observation, context) pairs with optional
/// ground-truth state labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub id: String,
    pub obs: Vec<ObservationVector>,
    pub ctx: ContextTrack,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<usize>>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn context_at(&self, t: usize) -> &ContextVector {
        self.ctx.at(t)
    }

    /// Checks every record against `sig`, the per-step context length and
    /// (when present) the label range.
    pub fn validate(&self, sig: &DimensionSignature) -> Result<()> {
        if self.obs.is_empty() {
            return Err(BossError::Empty(format!("sequence '{}' has no steps", self.id)));
        }
        for o in &self.obs {
            o.validate(sig)?;
        }
        match &self.ctx {
            ContextTrack::Shared(c) => c.validate(sig)?,
            ContextTrack::PerStep(cs) => {
                if cs.len() != self.obs.len() {
                    return Err(dim_err("ctx steps", self.obs.len(), cs.len()));
                }
                for c in cs {
                    c.validate(sig)?;
                }
            }
        }
        if let Some(states) = &self.states {
            if states.len() != self.obs.len() {
                return Err(dim_err("states", self.obs.len(), states.len()));
            }
            if let Some(&bad) = states.iter().find(|&&s| s >= sig.n_states) {
                return Err(BossError::OutOfRange {
                    index: bad,
                    size: sig.n_states,
                });
            }
        }
        Ok(())
    }
}
