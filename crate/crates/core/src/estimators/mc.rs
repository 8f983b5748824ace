use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{cumulative, keyed_rng, sample_cdf, ValueEstimate, ValueOracle};
use crate::error::{PmdError, Result};
use crate::mdp::{FiniteMdp, Policy};
use crate::regularizer::Regularizer;
use crate::schedule::{epoch_index, Step};

/// Rollout length `T` and number of independent trajectories `M` per pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McParams {
    pub horizon: u64,
    pub trajectories: u64,
}

/// Sample-size rule for the rollout estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum McRule {
    /// Targets `ς_k = σ_k² = 2^{-(⌊k/l⌋+2)}`.
    Linear,
    /// Targets `ς_k = 2^{-(⌊k/l⌋+2)}`, `σ_k² = 4^{-(⌊k/l⌋+2)}`.
    Quadratic,
}

/// Real-valued sample sizes `(T_k, M_k)` before rounding, so that very late
/// iterations can be analysed without integer overflow.
///
/// `bound` is the per-step cost bound `B` (`c̄ + h̄`, plus `τ0 log|A|` for the
/// perturbed methods).
pub fn mc_schedule_real(k: usize, gamma: f64, bound: f64, l: usize, rule: McRule) -> (f64, f64) {
    let p = epoch_index(k, l) as f64;
    let scale = bound / (1.0 - gamma);
    let lf = l as f64;
    match rule {
        McRule::Linear => {
            let t = (lf / 2.0 * (p + scale.log2() + 2.0)).ceil().max(1.0);
            let m = (scale * scale * 2f64.powf(p + 4.0)).ceil().max(1.0);
            (t, m)
        }
        McRule::Quadratic => {
            let t = (lf / 2.0 * (p + scale.log2() + 4.0)).ceil().max(1.0);
            let m = (scale * scale * 4f64.powf(p + 3.0)).ceil().max(1.0);
            (t, m)
        }
    }
}

/// Smallest integer sample sizes of the chosen rule at iteration `k`.
pub fn mc_schedule(k: usize, gamma: f64, bound: f64, l: usize, rule: McRule) -> Result<McParams> {
    let (t, m) = mc_schedule_real(k, gamma, bound, l, rule);
    if !(t < u64::MAX as f64 && m < u64::MAX as f64) {
        return Err(PmdError::TooLarge(format!("rollout schedule at k = {k}")));
    }
    Ok(McParams {
        horizon: t as u64,
        trajectories: m as u64,
    })
}

/// Certified `(ς, σ²)` of the rollout estimator with per-step cost bound `B`:
/// `ς = B γ^T / (1-γ)` and `σ² = 2 B² (γ^{2T} + 1/M) / (1-γ)²`.
pub fn mc_certified(gamma: f64, bound: f64, horizon: f64, trajectories: f64) -> (f64, f64) {
    let scale = bound / (1.0 - gamma);
    let gt = gamma.powf(horizon);
    (scale * gt, 2.0 * scale * scale * (gt * gt + 1.0 / trajectories))
}

/// Per-step cost bound `c̄ + h̄ + τ log|A|` of the perturbed problem.
pub fn step_cost_bound(mdp: &FiniteMdp, reg: &Regularizer, tau: f64) -> f64 {
    let na = mdp.n_actions();
    mdp.cost_bound() + reg.value_bound(na) + tau * (na as f64).ln()
}

/// Monte Carlo estimate of `Q^π_τ`: for every `(s, a)`, the mean of `M`
/// truncated discounted returns of length `T` started from `(s, a)`.
///
/// Trajectory `i` of pair `(s, a)` uses its own stream keyed by
/// `(seed, stream, s, a, i)`, so results do not depend on thread scheduling.
pub fn mc_estimate(
    mdp: &FiniteMdp,
    policy: &Policy,
    reg: &Regularizer,
    tau: f64,
    params: McParams,
    seed: u64,
    stream: u64,
) -> Result<ValueEstimate> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(PmdError::Dimension("policy shape".into()));
    }
    if params.horizon == 0 || params.trajectories == 0 {
        return Err(PmdError::Parameter("rollouts need T >= 1 and M >= 1".into()));
    }
    let gamma = mdp.gamma();
    let h = reg.policy_values(policy);
    let uniform = Policy::uniform(ns, na);
    let extra: Vec<f64> = (0..ns)
        .map(|s| h[s] + if tau > 0.0 { tau * policy.kl_row(&uniform, s) } else { 0.0 })
        .collect();
    let p_cdf: Vec<Vec<f64>> = (0..ns * na)
        .map(|i| cumulative(mdp.transition_row(i / na, i % na)))
        .collect();
    let pi_cdf: Vec<Vec<f64>> = (0..ns).map(|s| cumulative(policy.row(s))).collect();
    let q: Vec<f64> = (0..ns * na)
        .into_par_iter()
        .map(|i| {
            let base = keyed_rng(&[seed, stream, (i / na) as u64, (i % na) as u64]);
            let mut total = 0.0;
            for traj in 0..params.trajectories {
                let mut rng: ChaCha8Rng = base.clone();
                rng.set_stream(traj);
                rng.set_word_pos(0);
                let (mut s, mut a) = (i / na, i % na);
                let mut disc = 1.0;
                let mut ret = 0.0;
                for t in 0..params.horizon {
                    ret += disc * (mdp.cost(s, a) + extra[s]);
                    if t + 1 == params.horizon {
                        break;
                    }
                    disc *= gamma;
                    s = sample_cdf(&p_cdf[s * na + a], rng.gen::<f64>());
                    a = sample_cdf(&pi_cdf[s], rng.gen::<f64>());
                }
                total += ret;
            }
            total / params.trajectories as f64
        })
        .collect();
    let bound = step_cost_bound(mdp, reg, tau);
    let (bias, msq) = mc_certified(gamma, bound, params.horizon as f64, params.trajectories as f64);
    Ok(ValueEstimate {
        q,
        bias_bound: bias,
        msq_bound: msq,
        samples: (ns * na) as u64 * params.horizon * params.trajectories,
    })
}

/// Rollout oracle following a sample-size rule.
#[derive(Clone, Debug)]
pub struct MonteCarloOracle {
    pub rule: McRule,
    pub seed: u64,
    /// Largest perturbation used by the schedule, entering the cost bound of
    /// the [`McRule::Quadratic`] rule.
    pub tau0: f64,
    /// Epoch length `l`.
    pub epoch: usize,
}

impl ValueOracle for MonteCarloOracle {
    fn estimate(
        &mut self,
        mdp: &FiniteMdp,
        policy: &Policy,
        reg: &Regularizer,
        tau: f64,
        step: &Step,
    ) -> Result<ValueEstimate> {
        let tau_bound = match self.rule {
            McRule::Linear => tau,
            McRule::Quadratic => self.tau0.max(tau),
        };
        let bound = step_cost_bound(mdp, reg, tau_bound);
        let params = mc_schedule(step.k, mdp.gamma(), bound, self.epoch, self.rule)?;
        mc_estimate(mdp, policy, reg, tau, params, self.seed, step.k as u64)
    }

    fn name(&self) -> &'static str {
        "monte_carlo"
    }
}
