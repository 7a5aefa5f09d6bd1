#![allow(dead_code)]

use boss_core::relevance::ScorerNet;
use boss_core::vectors::{ContextVector, DimensionSignature, ObservationVector};
use boss_core::BossModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signature(rng: &mut ChaCha8Rng) -> DimensionSignature {
    let mut d = || rng.random_range(1..=4);
    DimensionSignature {
        d_l: d(),
        d_ac: d(),
        d_cd: d(),
        d_is: d(),
        d_hist: d(),
        d_env: d(),
        d_char: d(),
        d_task: d(),
        n_states: rng.random_range(2..=4),
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_point(
    sig: &DimensionSignature,
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> (ObservationVector, ContextVector) {
    let o = ObservationVector {
        v_l: random_vec(rng, sig.d_l, scale),
        v_ac: random_vec(rng, sig.d_ac, scale),
        v_cd: random_vec(rng, sig.d_cd, scale),
        v_is: random_vec(rng, sig.d_is, scale),
    };
    let c = ContextVector {
        c_hist: random_vec(rng, sig.d_hist, scale),
        c_env: random_vec(rng, sig.d_env, scale),
        c_char: random_vec(rng, sig.d_char, scale),
        c_task: random_vec(rng, sig.d_task, scale),
    };
    (o, c)
}

/// Probability vector with every entry at least `floor / n`.
pub fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn random_net(rng: &mut ChaCha8Rng, input_dim: usize, hidden: usize, scale: f64) -> ScorerNet {
    ScorerNet {
        w1: (0..hidden).map(|_| random_vec(rng, input_dim, scale)).collect(),
        b1: random_vec(rng, hidden, scale),
        w2: random_vec(rng, hidden, scale),
        b2: rng.random_range(-scale..scale),
    }
}

/// Random chain and scorer networks with weights uniform in `±scale`.
pub fn random_model(sig: DimensionSignature, rng: &mut ChaCha8Rng, scale: f64) -> BossModel {
    let hidden = rng.random_range(1..=8);
    let d = sig.scorer_input_dim();
    let n = sig.n_states;
    let mut m = BossModel::zeros(sig, hidden);
    m.pi = random_stochastic(rng, n, 0.05);
    m.trans = (0..n).map(|_| random_stochastic(rng, n, 0.05)).collect();
    m.net_e = random_net(rng, d, hidden, scale);
    m.net_p = random_net(rng, d, hidden, scale);
    m.validate().expect("random model is valid");
    m
}

pub struct ChainInstance {
    pub log_pi: Vec<f64>,
    pub log_trans: Vec<Vec<f64>>,
    pub log_emit: Vec<Vec<f64>>,
}

/// Random log-space chain. `tie_mode` 0 draws generic values, 1 uses a
/// uniform chain with emissions from a two-value set, 2 makes every
/// quantity uniform so that all paths tie.
pub fn chain_instance(rng: &mut ChaCha8Rng, n: usize, steps: usize, tie_mode: u8) -> ChainInstance {
    let uniform = vec![(1.0 / n as f64).ln(); n];
    match tie_mode {
        0 => ChainInstance {
            log_pi: random_stochastic(rng, n, 0.01).iter().map(|p| p.ln()).collect(),
            log_trans: (0..n)
                .map(|_| random_stochastic(rng, n, 0.01).iter().map(|p| p.ln()).collect())
                .collect(),
            log_emit: (0..steps)
                .map(|_| (0..n).map(|_| rng.random_range(-6.0..0.0)).collect())
                .collect(),
        },
        1 => ChainInstance {
            log_pi: uniform.clone(),
            log_trans: vec![uniform; n],
            log_emit: (0..steps)
                .map(|_| {
                    (0..n)
                        .map(|_| if rng.random::<bool>() { 0.5f64.ln() } else { 0.25f64.ln() })
                        .collect()
                })
                .collect(),
        },
        _ => ChainInstance {
            log_pi: uniform.clone(),
            log_trans: vec![uniform.clone(); n],
            log_emit: vec![uniform; steps],
        },
    }
}

/// Calls `f` on every path in colexicographic order: the first position
/// varies fastest and the last position slowest.
fn for_each_path(n: usize, steps: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; steps];
    loop {
        f(&path);
        let mut t = 0;
        while t < steps {
            path[t] += 1;
            if path[t] < n {
                break;
            }
            path[t] = 0;
            t += 1;
        }
        if t == steps {
            return;
        }
    }
}

/// Path score summed left to right: start, emission, then transition and
/// emission for each later step.
pub fn path_score(c: &ChainInstance, path: &[usize]) -> f64 {
    let mut s = c.log_pi[path[0]] + c.log_emit[0][path[0]];
    for t in 1..path.len() {
        s += c.log_trans[path[t - 1]][path[t]];
        s += c.log_emit[t][path[t]];
    }
    s
}

fn colex_less(a: &[usize], b: &[usize]) -> bool {
    for t in (0..a.len()).rev() {
        if a[t] != b[t] {
            return a[t] < b[t];
        }
    }
    false
}

/// Exhaustive maximum. Among exact ties the path that is smallest when
/// compared from the last position backwards wins.
pub fn brute_force_viterbi(c: &ChainInstance) -> (Vec<usize>, f64) {
    let n = c.log_pi.len();
    let steps = c.log_emit.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_path(n, steps, |p| {
        let s = path_score(c, p);
        let better = match &best {
            None => true,
            Some((bp, bs)) => s > *bs || (s == *bs && colex_less(p, bp)),
        };
        if better {
            best = Some((p.to_vec(), s));
        }
    });
    best.expect("at least one path")
}

/// `ln Σ_paths exp(score)` and the per-step state marginals.
pub fn brute_force_marginals(c: &ChainInstance) -> (f64, Vec<Vec<f64>>) {
    let n = c.log_pi.len();
    let steps = c.log_emit.len();
    let mut scores = Vec::new();
    let mut paths = Vec::new();
    for_each_path(n, steps, |p| {
        scores.push(path_score(c, p));
        paths.push(p.to_vec());
    });
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut marg = vec![vec![0.0; n]; steps];
    for (p, w) in paths.iter().zip(&weights) {
        for (t, &s) in p.iter().enumerate() {
            marg[t][s] += w / z;
        }
    }
    (max + z.ln(), marg)
}
