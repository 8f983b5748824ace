//! Value estimators: exact evaluation, synthetic noise, Monte Carlo rollouts
//! and conditional temporal difference learning.

mod ctd;
mod mc;

pub use ctd::*;
pub use mc::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{PmdError, Result};
use crate::mdp::{eval_policy_exact, FiniteMdp, Policy};
use crate::regularizer::Regularizer;
use crate::schedule::Step;

/// An estimate `Q̂` of `Q^π_τ` with certified error levels.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueEstimate {
    /// Row-major `Q̂(s, a)`.
    pub q: Vec<f64>,
    /// Certified `ς ≥ ‖E Q̂ - Q‖∞`.
    pub bias_bound: f64,
    /// Certified `σ² ≥ E ‖Q̂ - Q‖∞²`.
    pub msq_bound: f64,
    /// Transitions sampled to build the estimate.
    pub samples: u64,
}

/// Source of action-value estimates for the solvers.
pub trait ValueOracle: Send {
    /// Estimates `Q^π_τ` at outer iteration `step.k`, aiming at the step's noise targets.
    fn estimate(
        &mut self,
        mdp: &FiniteMdp,
        policy: &Policy,
        reg: &Regularizer,
        tau: f64,
        step: &Step,
    ) -> Result<ValueEstimate>;

    fn name(&self) -> &'static str;
}

/// Exact evaluation by a linear solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactOracle;

impl ValueOracle for ExactOracle {
    fn estimate(
        &mut self,
        mdp: &FiniteMdp,
        policy: &Policy,
        reg: &Regularizer,
        tau: f64,
        _step: &Step,
    ) -> Result<ValueEstimate> {
        let v = eval_policy_exact(mdp, policy, reg, tau)?;
        Ok(ValueEstimate {
            q: v.q,
            bias_bound: 0.0,
            msq_bound: 0.0,
            samples: 0,
        })
    }

    fn name(&self) -> &'static str {
        "exact"
    }
}

/// Zero-mean noise shape added on top of the deterministic bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Independent `±a` signs.
    BoundedShift,
    /// Gaussian with standard deviation `a/2`, clipped symmetrically to `[-a, a]`.
    TruncatedGaussian,
}

/// `Q̂ = Q + b + w` with `‖b‖∞ = ς` exactly and `‖b + w‖∞ ≤ σ` surely.
///
/// The bias has the checkerboard pattern `b(s, a) = ±ς` by the parity of `s + a`,
/// and `w` has entries bounded by `a = σ - ς`.
#[derive(Clone, Debug)]
pub struct SyntheticNoiseOracle {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl SyntheticNoiseOracle {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Perturbs `q` to meet the given bias and mean-squared error levels.
    pub fn perturb(&self, q: &[f64], n_actions: usize, bias: f64, msq: f64, k: usize) -> Result<ValueEstimate> {
        if !(bias >= 0.0 && msq >= 0.0) {
            return Err(PmdError::Certification(format!("bias {bias}, msq {msq}")));
        }
        let sigma = msq.sqrt();
        if sigma < bias * (1.0 - 1e-12) {
            return Err(PmdError::Certification(format!(
                "mean-squared error {msq} cannot be below bias^2 = {}",
                bias * bias
            )));
        }
        let amp = (sigma - bias).max(0.0);
        let mut rng = keyed_rng(&[self.seed, k as u64, 0x5eed]);
        let out = q
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (s, a) = (i / n_actions, i % n_actions);
                let b = if (s + a) % 2 == 0 { bias } else { -bias };
                let w = if amp == 0.0 {
                    0.0
                } else {
                    match self.kind {
                        NoiseKind::BoundedShift => {
                            if rng.gen::<bool>() {
                                amp
                            } else {
                                -amp
                            }
                        }
                        NoiseKind::TruncatedGaussian => {
                            let z: f64 = rng.sample(StandardNormal);
                            (0.5 * amp * z).clamp(-amp, amp)
                        }
                    }
                };
                x + b + w
            })
            .collect();
        let reach = bias + amp;
        Ok(ValueEstimate {
            q: out,
            bias_bound: bias,
            msq_bound: reach * reach,
            samples: 0,
        })
    }
}

impl ValueOracle for SyntheticNoiseOracle {
    fn estimate(
        &mut self,
        mdp: &FiniteMdp,
        policy: &Policy,
        reg: &Regularizer,
        tau: f64,
        step: &Step,
    ) -> Result<ValueEstimate> {
        let v = eval_policy_exact(mdp, policy, reg, tau)?;
        self.perturb(&v.q, mdp.n_actions(), step.bias_target, step.msq_target, step.k)
    }

    fn name(&self) -> &'static str {
        "synthetic"
    }
}

/// `(T θ)(s, a) = c(s, a) + h^π(s) + γ Σ_{s'} P(s'|s, a) Σ_{a'} π(a'|s') θ(s', a')`.
pub fn bellman_apply(mdp: &FiniteMdp, policy: &Policy, reg: &Regularizer, theta: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if theta.len() != ns * na || policy.n_states() != ns || policy.n_actions() != na {
        return Err(PmdError::Dimension("Bellman operator shapes".into()));
    }
    let h = reg.policy_values(policy);
    let vbar: Vec<f64> = (0..ns)
        .map(|s| {
            policy
                .row(s)
                .iter()
                .zip(&theta[s * na..][..na])
                .map(|(p, t)| p * t)
                .sum()
        })
        .collect();
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            out[s * na + a] = mdp.cost(s, a) + h[s] + mdp.gamma() * mdp.expected_next(s, a, &vbar);
        }
    }
    Ok(out)
}

/// Deterministic RNG for a key tuple, independent across distinct keys.
pub fn keyed_rng(key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(key))
}

pub(crate) fn mix_key(key: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &k in key {
        h = splitmix(h ^ splitmix(k));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples an index from a cumulative distribution.
#[inline]
pub(crate) fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    for (i, &c) in cdf.iter().enumerate() {
        if u < c {
            return i;
        }
    }
    cdf.len() - 1
}

pub(crate) fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}
