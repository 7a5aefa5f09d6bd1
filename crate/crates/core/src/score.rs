//! Power-scaled aggregation of 0–5 judge scores onto a 0–100 scale.

use serde::{Deserialize, Serialize};

use crate::error::{BossError, Result};

pub const MAX_SCORE: f64 = 5.0;
/// Shipped default exponent. No canonical value exists; 2 is arbitrary.
pub const DEFAULT_POWER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatch {
    pub raw_scores: Vec<f64>,
    pub power: f64,
}

fn check_power(power: f64) -> Result<()> {
    if !(power >= 1.0 && power.is_finite()) {
        return Err(BossError::InvalidParameter(format!("power must be >= 1, got {power}")));
    }
    Ok(())
}

fn check_score(s: f64, index: usize) -> Result<()> {
    if !(0.0..=MAX_SCORE).contains(&s) {
        return Err(BossError::InvalidParameter(format!(
            "score {s} at index {index} is outside [0, 5]"
        )));
    }
    Ok(())
}

impl ScoreBatch {
    pub fn new(raw_scores: Vec<f64>, power: f64) -> Result<Self> {
        let b = Self { raw_scores, power };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_power(self.power)?;
        if self.raw_scores.is_empty() {
            return Err(BossError::Empty("score batch is empty".into()));
        }
        for (i, &s) in self.raw_scores.iter().enumerate() {
            check_score(s, i)?;
        }
        Ok(())
    }
}

/// `(100 / |S|) Σ_s (s / 5)^p`.
pub fn power_scaled_average(batch: &ScoreBatch) -> Result<f64> {
    batch.validate()?;
    let total: f64 = batch
        .raw_scores
        .iter()
        .map(|s| (s / MAX_SCORE).powf(batch.power))
        .sum();
    Ok(100.0 * total / batch.raw_scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub mean: f64,
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub power: f64,
    pub items: Vec<ItemScore>,
    pub overall: f64,
}

/// Averages each item's repeated judgments, applies `(mean / 5)^p`, and
/// reports `100 ×` the mean of the scaled values.
pub fn aggregate_repeated(judgments: &[Vec<f64>], power: f64) -> Result<AggregateReport> {
    check_power(power)?;
    if judgments.is_empty() {
        return Err(BossError::Empty("no judged items".into()));
    }
    let items = judgments
        .iter()
        .enumerate()
        .map(|(i, item)| {
            if item.is_empty() {
                return Err(BossError::Empty(format!("item {i} has no judgments")));
            }
            for &s in item {
                check_score(s, i)?;
            }
            let mean = item.iter().sum::<f64>() / item.len() as f64;
            Ok(ItemScore {
                mean,
                scaled: (mean / MAX_SCORE).powf(power),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let overall = 100.0 * items.iter().map(|i| i.scaled).sum::<f64>() / items.len() as f64;
    Ok(AggregateReport {
        power,
        items,
        overall,
    })
}
