//! Information-theoretic identities on explicit finite distributions.
//!
//! A [`DiscreteChannel`] holds `P(Z | U = u)` for each input symbol and the
//! input marginal `P(U)`. For any reference distribution `V` over `Z`:
//!
//! * `KL(P(Z|u) ‖ V) = KL(P(Z|u) ‖ P(Z)) + Σ_z P(z|u) ln(P(z)/V(z))`
//! * `E_U[KL(P(Z|U) ‖ V)] = I(Z; U) + KL(P(Z) ‖ V) ≥ I(Z; U)`, tight iff `V = P(Z)`
//! * `E[ln q(Z|U) − ln P(Z)] = I(Z; U) − E_U[KL(P(Z|U) ‖ q(·|U))] ≤ I(Z; U)`
//!
//! All quantities are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, BossError, Result};

const SUM_TOL: f64 = 1e-12;
/// Maximum coordinate difference at which `V` counts as the marginal.
pub const TIGHTNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionDoc", into = "DistributionDoc")]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistributionDoc {
    probs: Vec<f64>,
}

impl TryFrom<DistributionDoc> for DiscreteDistribution {
    type Error = BossError;

    fn try_from(doc: DistributionDoc) -> Result<Self> {
        Self::new(doc.probs)
    }
}

impl From<DiscreteDistribution> for DistributionDoc {
    fn from(d: DiscreteDistribution) -> Self {
        Self { probs: d.probs }
    }
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(BossError::Empty("distribution has no support".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(BossError::InvalidParameter(format!(
                "probability at index {i} is negative or non-finite"
            )));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(BossError::InvalidParameter(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(BossError::InvalidParameter("weights must have positive sum".into()));
        }
        Self::new(weights.iter().map(|w| w / s).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }
}

/// Conditional distributions `P(Z | U = u)` plus the input marginal `P(U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelDoc", into = "ChannelDoc")]
pub struct DiscreteChannel {
    rows: Vec<DiscreteDistribution>,
    input_marginal: DiscreteDistribution,
}

#[derive(Serialize, Deserialize)]
struct ChannelDoc {
    input_marginal: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<ChannelDoc> for DiscreteChannel {
    type Error = BossError;

    fn try_from(doc: ChannelDoc) -> Result<Self> {
        let rows = doc
            .rows
            .into_iter()
            .map(DiscreteDistribution::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, DiscreteDistribution::new(doc.input_marginal)?)
    }
}

impl From<DiscreteChannel> for ChannelDoc {
    fn from(c: DiscreteChannel) -> Self {
        Self {
            input_marginal: c.input_marginal.probs,
            rows: c.rows.into_iter().map(|r| r.probs).collect(),
        }
    }
}

impl DiscreteChannel {
    pub fn new(rows: Vec<DiscreteDistribution>, input_marginal: DiscreteDistribution) -> Result<Self> {
        if rows.len() != input_marginal.support_size() {
            return Err(dim_err("channel rows", input_marginal.support_size(), rows.len()));
        }
        let width = rows[0].support_size();
        if let Some(bad) = rows.iter().find(|r| r.support_size() != width) {
            return Err(dim_err("channel row support", width, bad.support_size()));
        }
        Ok(Self {
            rows,
            input_marginal,
        })
    }

    pub fn rows(&self) -> &[DiscreteDistribution] {
        &self.rows
    }

    pub fn input_marginal(&self) -> &DiscreteDistribution {
        &self.input_marginal
    }

    pub fn output_size(&self) -> usize {
        self.rows[0].support_size()
    }

    /// `P(z) = Σ_u P(u) P(z|u)`.
    pub fn output_marginal(&self) -> DiscreteDistribution {
        let mut m = vec![0.0; self.output_size()];
        for (pu, row) in self.input_marginal.probs.iter().zip(&self.rows) {
            for (acc, p) in m.iter_mut().zip(&row.probs) {
                *acc += pu * p;
            }
        }
        // The sum is 1 up to rounding of the weighted average.
        DiscreteDistribution { probs: m }
    }
}

fn check_support(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.support_size() != q.support_size() {
        return Err(dim_err("support", p.support_size(), q.support_size()));
    }
    Ok(())
}

/// `Σ_i p_i ln(p_i / q_i)` with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_support(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(BossError::AbsoluteContinuity {
                index: i,
                detail: format!("p = {pi} where q = 0"),
            });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

/// Both sides of the KL decomposition for one input symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDecomposition {
    /// `KL(P(Z|u) ‖ V)`.
    pub lhs: f64,
    /// `KL(P(Z|u) ‖ P(Z))`.
    pub term_mi_part: f64,
    /// `Σ_z P(z|u) ln(P(z) / V(z))`.
    pub term_marginal_part: f64,
}

impl KlDecomposition {
    pub fn residual(&self) -> f64 {
        self.lhs - (self.term_mi_part + self.term_marginal_part)
    }
}

fn cross_log_ratio(
    weights: &DiscreteDistribution,
    num: &DiscreteDistribution,
    den: &DiscreteDistribution,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, &w) in weights.probs.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (a, b) = (num.probs[i], den.probs[i]);
        if a == 0.0 || b == 0.0 {
            return Err(BossError::AbsoluteContinuity {
                index: i,
                detail: format!("weight {w} where a reference probability is 0"),
            });
        }
        total += w * (a / b).ln();
    }
    Ok(total)
}

/// Splits `KL(P(Z|u) ‖ V)` into the mutual-information part and the
/// marginal-mismatch part.
pub fn decompose_kl(
    channel: &DiscreteChannel,
    u: usize,
    v: &DiscreteDistribution,
) -> Result<KlDecomposition> {
    let row = channel.rows.get(u).ok_or(BossError::OutOfRange {
        index: u,
        size: channel.rows.len(),
    })?;
    check_support(row, v)?;
    let marginal = channel.output_marginal();
    let out = KlDecomposition {
        lhs: kl_divergence(row, v)?,
        term_mi_part: kl_divergence(row, &marginal)?,
        term_marginal_part: cross_log_ratio(row, &marginal, v)?,
    };
    debug_assert!(out.residual().abs() <= 1e-9, "decomposition residual {}", out.residual());
    Ok(out)
}

/// `I(Z; U) = Σ_u P(u) KL(P(Z|u) ‖ P(Z))`.
pub fn mutual_information(channel: &DiscreteChannel) -> Result<f64> {
    let marginal = channel.output_marginal();
    let mut total = 0.0;
    for (pu, row) in channel.input_marginal.probs.iter().zip(&channel.rows) {
        if *pu > 0.0 {
            total += pu * kl_divergence(row, &marginal)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperBoundReport {
    pub mi: f64,
    /// `E_U[KL(P(Z|U) ‖ V)]`.
    pub expected_kl: f64,
    /// `expected_kl − mi`, which equals `KL(P(Z) ‖ V)`.
    pub slack: f64,
    /// `KL(P(Z) ‖ V)` evaluated directly.
    pub marginal_kl: f64,
    /// `V` matches `P(Z)` coordinate-wise within [`TIGHTNESS_TOL`].
    pub tight: bool,
}

/// Evaluates the expected-KL upper bound on `I(Z; U)` for reference `v`.
pub fn check_upper_bound(channel: &DiscreteChannel, v: &DiscreteDistribution) -> Result<UpperBoundReport> {
    check_support(&channel.rows[0], v)?;
    let marginal = channel.output_marginal();
    let mi = mutual_information(channel)?;
    let mut expected_kl = 0.0;
    for (pu, row) in channel.input_marginal.probs.iter().zip(&channel.rows) {
        if *pu > 0.0 {
            expected_kl += pu * kl_divergence(row, v)?;
        }
    }
    let marginal_kl = kl_divergence(&marginal, v)?;
    let tight = marginal
        .probs
        .iter()
        .zip(&v.probs)
        .all(|(a, b)| (a - b).abs() <= TIGHTNESS_TOL);
    Ok(UpperBoundReport {
        mi,
        expected_kl,
        slack: expected_kl - mi,
        marginal_kl,
        tight,
    })
}

/// `E_{U,Z}[ln q(Z|U) − ln P(Z)]` for an explicit conditional table `q`.
pub fn ba_lower_bound(channel: &DiscreteChannel, q_rows: &[DiscreteDistribution]) -> Result<f64> {
    if q_rows.len() != channel.rows.len() {
        return Err(dim_err("q rows", channel.rows.len(), q_rows.len()));
    }
    let marginal = channel.output_marginal();
    let mut total = 0.0;
    for ((pu, row), q) in channel.input_marginal.probs.iter().zip(&channel.rows).zip(q_rows) {
        check_support(row, q)?;
        if *pu > 0.0 {
            total += pu * cross_log_ratio(row, q, &marginal)?;
        }
    }
    Ok(total)
}

/// Gap `I(Z; U) − ba_lower_bound`, evaluated as `E_U[KL(P(Z|U) ‖ q(·|U))]`.
pub fn ba_gap(channel: &DiscreteChannel, q_rows: &[DiscreteDistribution]) -> Result<f64> {
    if q_rows.len() != channel.rows.len() {
        return Err(dim_err("q rows", channel.rows.len(), q_rows.len()));
    }
    let mut total = 0.0;
    for ((pu, row), q) in channel.input_marginal.probs.iter().zip(&channel.rows).zip(q_rows) {
        if *pu > 0.0 {
            total += pu * kl_divergence(row, q)?;
        }
    }
    Ok(total)
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(p.to_vec()).unwrap()
    }

    fn random_dist(n: usize, rng: &mut ChaCha8Rng) -> DiscreteDistribution {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        DiscreteDistribution::from_weights(&w).unwrap()
    }

    fn random_channel(rng: &mut ChaCha8Rng) -> DiscreteChannel {
        let nu = rng.random_range(2..6);
        let nz = rng.random_range(2..6);
        let rows = (0..nu).map(|_| random_dist(nz, rng)).collect();
        DiscreteChannel::new(rows, random_dist(nu, rng)).unwrap()
    }

    fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..p.len() {
            if p[i] > 0.0 {
                s += p[i] * p[i].ln() - p[i] * q[i].ln();
            }
        }
        s
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let v = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.693147).abs() < 1e-6);
        assert!(matches!(
            kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])),
            Err(BossError::AbsoluteContinuity { index: 1, .. })
        ));
        assert!(kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(2..8);
            let p = random_dist(n, &mut rng);
            let q = random_dist(n, &mut rng);
            let k = kl_divergence(&p, &q).unwrap();
            assert!(k >= 0.0);
            assert!((k - naive_kl(p.probs(), q.probs())).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![]).is_err());
        let d: std::result::Result<DiscreteDistribution, _> =
            serde_json::from_str(r#"{"probs":[0.25,0.75]}"#);
        assert_eq!(d.unwrap(), dist(&[0.25, 0.75]));
        let bad: std::result::Result<DiscreteDistribution, _> =
            serde_json::from_str(r#"{"probs":[0.25,0.7]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn decomposition_special_cases() {
        let ch = DiscreteChannel::new(
            vec![dist(&[0.9, 0.1]), dist(&[0.2, 0.8])],
            dist(&[0.5, 0.5]),
        )
        .unwrap();
        let marginal = ch.output_marginal();
        let d = decompose_kl(&ch, 0, &marginal).unwrap();
        assert!(d.term_marginal_part.abs() < 1e-15);
        assert!((d.lhs - d.term_mi_part).abs() < 1e-15);

        let ch2 = DiscreteChannel::new(
            vec![dist(&[0.3, 0.7]), dist(&[0.3, 0.7])],
            dist(&[0.4, 0.6]),
        )
        .unwrap();
        let v = dist(&[0.6, 0.4]);
        let d = decompose_kl(&ch2, 1, &v).unwrap();
        assert!(d.term_mi_part.abs() < 1e-15);
        let direct = kl_divergence(&ch2.output_marginal(), &v).unwrap();
        assert!((d.lhs - direct).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let ch = random_channel(&mut rng);
            let v = random_dist(ch.output_size(), &mut rng);
            let u = rng.random_range(0..ch.rows().len());
            let d = decompose_kl(&ch, u, &v).unwrap();
            assert!(d.residual().abs() <= 1e-12);
        }
    }

    #[test]
    fn mutual_information_fixtures() {
        let ind = DiscreteChannel::new(vec![dist(&[0.3, 0.7]); 3], dist(&[0.2, 0.3, 0.5])).unwrap();
        assert!(mutual_information(&ind).unwrap().abs() < 1e-15);

        let rows = (0..4)
            .map(|i| {
                let mut r = vec![0.0; 4];
                r[i] = 1.0;
                dist(&r)
            })
            .collect();
        let id = DiscreteChannel::new(rows, DiscreteDistribution::uniform(4).unwrap()).unwrap();
        let mi = mutual_information(&id).unwrap();
        assert!((mi - 4f64.ln()).abs() < 1e-12);
        assert!((nats_to_bits(mi) - 2.0).abs() < 1e-12);

        let bsc = DiscreteChannel::new(
            vec![dist(&[0.75, 0.25]), dist(&[0.25, 0.75])],
            dist(&[0.5, 0.5]),
        )
        .unwrap();
        let h = -0.25 * 0.25f64.ln() - 0.75 * 0.75f64.ln();
        let mi = mutual_information(&bsc).unwrap();
        assert!((mi - (2f64.ln() - h)).abs() < 1e-12);
        assert!((mi - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn upper_bound_cases() {
        let ch = DiscreteChannel::new(
            vec![dist(&[0.9, 0.1]), dist(&[0.2, 0.8])],
            dist(&[0.5, 0.5]),
        )
        .unwrap();
        let r = check_upper_bound(&ch, &ch.output_marginal()).unwrap();
        assert!(r.slack.abs() <= 1e-12 && r.tight);

        let v = dist(&[0.3, 0.7]);
        let r = check_upper_bound(&ch, &v).unwrap();
        // marginal is (0.55, 0.45)
        let direct = 0.55 * (0.55f64 / 0.3).ln() + 0.45 * (0.45f64 / 0.7).ln();
        assert!((r.slack - direct).abs() < 1e-12);
        assert!((r.marginal_kl - direct).abs() < 1e-12);
        assert!(r.slack > 0.0 && !r.tight);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let ch = random_channel(&mut rng);
            let v = random_dist(ch.output_size(), &mut rng);
            let r = check_upper_bound(&ch, &v).unwrap();
            assert!(r.slack >= -1e-12);
            assert!((r.slack - r.marginal_kl).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_bound_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let ch = random_channel(&mut rng);
            let mi = mutual_information(&ch).unwrap();
            let at_truth = ba_lower_bound(&ch, ch.rows()).unwrap();
            assert!((at_truth - mi).abs() < 1e-12);
            let marg = vec![ch.output_marginal(); ch.rows().len()];
            assert!(ba_lower_bound(&ch, &marg).unwrap().abs() < 1e-12);
            let q: Vec<_> = (0..ch.rows().len())
                .map(|_| random_dist(ch.output_size(), &mut rng))
                .collect();
            let lb = ba_lower_bound(&ch, &q).unwrap();
            assert!(lb <= mi + 1e-12);
            assert!((mi - lb - ba_gap(&ch, &q).unwrap()).abs() < 1e-12);
        }
        let ch = DiscreteChannel::new(vec![dist(&[0.5, 0.5]), dist(&[0.5, 0.5])], dist(&[0.5, 0.5]))
            .unwrap();
        let q = vec![dist(&[1.0, 0.0]), dist(&[0.5, 0.5])];
        assert!(matches!(
            ba_lower_bound(&ch, &q),
            Err(BossError::AbsoluteContinuity { index: 1, .. })
        ));
    }
}
