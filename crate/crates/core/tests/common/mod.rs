#![allow(dead_code)]

use pmd_core::generate::{generate, GeneratorSpec};
use pmd_core::mdp::{FiniteMdp, Policy};
use pmd_core::regularizer::Regularizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_0000)
}

/// Random MDP with 2..=10 states, 2..=5 actions and a discount in [0.3, 0.95].
pub fn random_mdp(seed: u64) -> FiniteMdp {
    let mut r = rng(seed);
    let ns = r.gen_range(2..=10);
    let na = r.gen_range(2..=5);
    let gamma = r.gen_range(0.3..0.95);
    let sparsity = r.gen_range(0.0..0.7);
    generate(&GeneratorSpec::new(seed, ns, na, gamma).with_sparsity(sparsity).with_costs(-1.0, 1.0)).unwrap()
}

pub fn random_policy(r: &mut ChaCha8Rng, ns: usize, na: usize) -> Policy {
    random_policy_scaled(r, ns, na, 2.0)
}

/// Softmax of Gaussian logits with standard deviation `scale`.
pub fn random_policy_scaled(r: &mut ChaCha8Rng, ns: usize, na: usize, scale: f64) -> Policy {
    let logits = (0..ns * na).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
    Policy::from_logits(ns, na, logits).unwrap()
}

pub fn random_row(r: &mut ChaCha8Rng, na: usize) -> Vec<f64> {
    random_policy(r, 1, na).row(0).to_vec()
}

/// One of the supported regularizers with random weights.
pub fn random_regularizer(r: &mut ChaCha8Rng) -> Regularizer {
    let w = r.gen_range(0.05..1.0);
    match r.gen_range(0..5) {
        0 => Regularizer::zero(),
        1 => Regularizer::negative_entropy(w),
        2 => Regularizer::scaled_kl(w),
        3 => Regularizer::squared_l2(w),
        _ => Regularizer::scaled_kl(w).plus(Regularizer::squared_l2(r.gen_range(0.1..2.0))),
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Draws an index from a probability vector.
pub fn sample(r: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = r.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Seed for property tests that build their own instances.
pub fn seeds() -> impl proptest::strategy::Strategy<Value = u64> {
    0u64..1_000_000
}
