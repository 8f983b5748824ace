use nalgebra::DMatrix;
use rand::Rng;

use super::{cumulative, keyed_rng, sample_cdf, step_cost_bound, ValueEstimate, ValueOracle};
use crate::error::{PmdError, Result};
use crate::linalg::{eigenvalue_moduli, spectral_norm, strongly_connected};
use crate::mdp::{eval_policy_exact, stationary_of_kernel, FiniteMdp, Policy};
use crate::regularizer::Regularizer;
use crate::schedule::{epoch_index, Step};

/// Smallest geometric rate used in the bounds; a chain that mixes in one
/// step (`ρ = 0`) is modelled with this rate instead.
pub const MIN_MIXING_RATE: f64 = 1e-3;

/// Safety factor applied to the fitted mixing constant.
pub const MIXING_SAFETY: f64 = 1.5;

/// Geometric mixing model `‖F(θ) - E[F̃(θ, ζ^α) | past]‖₂ ≤ C ρ^α ‖θ - θ*‖₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingModel {
    /// Second largest eigenvalue modulus of `P^π`.
    pub rho: f64,
    /// Rate used in the bounds, `max(ρ, MIN_MIXING_RATE)`.
    pub rate: f64,
    /// Fitted constant `C`, including the safety factor.
    pub c: f64,
    /// Largest gap ratio `C_α / (C rate^α)` seen during the fit (at most `1/MIXING_SAFETY`).
    pub fit_ratio: f64,
}

/// Kernel of the state-action chain, `K((s,a), (s',a')) = P(s'|s,a) π(a'|s')`.
pub fn pair_kernel(mdp: &FiniteMdp, policy: &Policy) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    DMatrix::from_fn(n, n, |i, j| {
        let (s, a) = (i / na, i % na);
        let (t, b) = (j / na, j % na);
        mdp.transition_row(s, a)[t] * policy.row(t)[b]
    })
}

/// Stationary distribution `ν ⊗ π` of the state-action chain.
pub fn pair_stationary(mdp: &FiniteMdp, policy: &Policy) -> Result<Vec<f64>> {
    let nu = stationary_of_kernel(&mdp.policy_kernel(policy.probs()))?;
    let na = mdp.n_actions();
    Ok((0..mdp.n_states() * na)
        .map(|i| nu.weights[i / na] * policy.row(i / na)[i % na])
        .collect())
}

/// Fits `(C, ρ)` for the chain induced by `π`.
///
/// `ρ` is the second largest eigenvalue modulus of `P^π`. For each `α` the
/// smallest valid constant is `C_α = max_z ‖diag(K^{α-1}(z, ·) - ν⊗π)(I - γK)‖₂`,
/// the worst case over the pair the chain restarts from; `C` is the largest
/// `C_α / ρ^α` times [`MIXING_SAFETY`].
pub fn mixing_model(mdp: &FiniteMdp, policy: &Policy) -> Result<MixingModel> {
    let p = mdp.policy_kernel(policy.probs());
    if !strongly_connected(&p) {
        return Err(PmdError::Reducible);
    }
    let moduli = eigenvalue_moduli(&p);
    let rho = moduli.get(1).cloned().unwrap_or(0.0).min(1.0);
    if rho > 1.0 - 1e-9 {
        return Err(PmdError::Periodic(rho));
    }
    let rate = rho.max(MIN_MIXING_RATE);
    let k = pair_kernel(mdp, policy);
    let d = pair_stationary(mdp, policy)?;
    let n = d.len();
    let contraction = DMatrix::identity(n, n) - &k * mdp.gamma();
    let mut power = DMatrix::identity(n, n);
    let mut best = 0.0f64;
    let mut first = 0.0f64;
    let mut ratios = Vec::new();
    for alpha in 1..=2000usize {
        let mut c_alpha = 0.0f64;
        for z in 0..n {
            let mut m = contraction.clone();
            for i in 0..n {
                let w = power[(z, i)] - d[i];
                m.row_mut(i).scale_mut(w);
            }
            c_alpha = c_alpha.max(spectral_norm(&m));
        }
        if alpha == 1 {
            first = c_alpha;
        }
        if alpha > 1 && c_alpha <= 1e-10 * first {
            break;
        }
        let r = c_alpha / rate.powi(alpha as i32);
        ratios.push(r);
        best = best.max(r);
        power = &power * &k;
    }
    let c = MIXING_SAFETY * best.max(f64::MIN_POSITIVE);
    Ok(MixingModel {
        rho,
        rate,
        c,
        fit_ratio: ratios.iter().cloned().fold(0.0, f64::max) / c,
    })
}

/// How the distances `‖θ1 - θ*‖₂` and `‖θ*‖₂` entering the bounds are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ErrorScale {
    /// Known squared distances.
    Exact { theta1_dist2: f64, theta_star_norm2: f64 },
    /// A priori: `‖θ*‖₂ ≤ √n B/(1-γ)` and `‖θ1 - θ*‖₂ ≤ ‖θ1‖₂ + √n B/(1-γ)`.
    APriori { theta1_norm2: f64 },
}

/// Parameters and derived constants of conditional TD.
#[derive(Clone, Debug, PartialEq)]
pub struct CtdParams {
    pub gamma: f64,
    pub alpha: usize,
    pub mixing: MixingModel,
    /// Strong monotonicity `Λ_min = (1-γ) min_z (ν⊗π)(z)`.
    pub lambda_min: f64,
    /// Lipschitz constant `Λ_max = (1+γ) max_z (ν⊗π)(z)`.
    pub lambda_max: f64,
    pub t0: f64,
    /// Per-step cost bound `B` used in `R²` and `σ_F²`.
    pub cost_scale: f64,
    pub theta1_dist2: f64,
    pub theta_star_norm2: f64,
    pub r2: f64,
    pub sigma_f2: f64,
}

impl CtdParams {
    pub fn new(
        mdp: &FiniteMdp,
        policy: &Policy,
        reg: &Regularizer,
        tau: f64,
        mixing: MixingModel,
        alpha: usize,
        scale: ErrorScale,
    ) -> Result<Self> {
        if alpha == 0 {
            return Err(PmdError::Parameter("skip length alpha must be >= 1".into()));
        }
        let d = pair_stationary(mdp, policy)?;
        let gamma = mdp.gamma();
        let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = d.iter().cloned().fold(0.0, f64::max);
        let lambda_min = (1.0 - gamma) * dmin;
        let lambda_max = (1.0 + gamma) * dmax;
        let t0 = 8.0 * lambda_max.powi(2).max(8.0 * (1.0 + gamma).powi(2)) / lambda_min.powi(2);
        let b = step_cost_bound(mdp, reg, tau);
        let (theta1_dist2, theta_star_norm2) = match scale {
            ErrorScale::Exact {
                theta1_dist2,
                theta_star_norm2,
            } => (theta1_dist2, theta_star_norm2),
            ErrorScale::APriori { theta1_norm2 } => {
                let bar = (d.len() as f64).sqrt() * b / (1.0 - gamma);
                ((theta1_norm2.sqrt() + bar).powi(2), bar * bar)
            }
        };
        let g1 = (1.0 + gamma).powi(2);
        let r2 = 8.0 * theta1_dist2 + 3.0 * (theta_star_norm2 + 2.0 * b * b) / (4.0 * g1);
        let sigma_f2 = 4.0 * g1 * r2 + theta_star_norm2 + 2.0 * b * b;
        Ok(Self {
            gamma,
            alpha,
            mixing,
            lambda_min,
            lambda_max,
            t0,
            cost_scale: b,
            theta1_dist2,
            theta_star_norm2,
            r2,
            sigma_f2,
        })
    }

    /// Step size `β_t = 2 / (Λ_min (t + t0 - 1))`.
    pub fn beta(&self, t: usize) -> f64 {
        2.0 / (self.lambda_min * (t as f64 + self.t0 - 1.0))
    }

    /// Smallest skip length for which the error bounds hold,
    /// `⌈(log(1/Λ_min) + log(9C)) / log(1/ρ)⌉`.
    pub fn min_alpha(&self) -> usize {
        let v = (9.0 * self.mixing.c / self.lambda_min).ln() / (1.0 / self.mixing.rate).ln();
        v.ceil().max(1.0) as usize
    }
}

/// Mean-squared error bound on `E‖θ_{T+1} - θ*‖₂²` after `t` updates
/// (real-valued so that very large schedules can be checked).
pub fn ctd_mse_bound(p: &CtdParams, t: f64) -> f64 {
    let t0 = p.t0;
    let (u, w) = (t + t0, t + t0 + 1.0);
    2.0 * ((t0 + 1.0) / u) * ((t0 + 2.0) / w) * p.theta1_dist2
        + 12.0 * (t / u) / w * p.sigma_f2 / p.lambda_min.powi(2)
}

/// Squared bias bound on `‖E θ_{T+1} - θ*‖₂²` after `t` updates.
pub fn ctd_bias_bound(p: &CtdParams, t: f64) -> f64 {
    let t0 = p.t0;
    let ratio = ((t0 - 1.0) / (t + t0 - 1.0)) * ((t0 - 2.0) / (t + t0 - 2.0)) * ((t0 - 3.0) / (t + t0 - 3.0));
    let ra = p.mixing.rate.powi(p.alpha as i32);
    let (c, r2, lm) = (p.mixing.c, p.r2, p.lambda_min);
    ratio * p.theta1_dist2 + 8.0 * c * r2 * ra / (3.0 * lm) + c * c * r2 * ra * ra / (lm * lm)
}

/// Result of a conditional TD run.
#[derive(Clone, Debug)]
pub struct CtdRun {
    /// `θ_{T+1}` with certified bias `√min(bias bound, mse bound)` and mse bound.
    pub estimate: ValueEstimate,
    /// `(t, θ_{t+1})` at the requested checkpoints.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

/// Conditional TD with skipping: every update uses the last of `α` fresh
/// transitions, `θ ← θ - β_t e_z (θ(z) - c(z) - h(s) - τ KL(s) - γ θ(z'))`.
///
/// The chain starts from `ν ⊗ π`. Requires `α ≥` [`CtdParams::min_alpha`].
#[allow(clippy::too_many_arguments)]
pub fn ctd_evaluate(
    mdp: &FiniteMdp,
    policy: &Policy,
    reg: &Regularizer,
    tau: f64,
    params: &CtdParams,
    iterations: usize,
    seed: u64,
    theta1: &[f64],
    checkpoints: &[usize],
) -> Result<CtdRun> {
    if params.alpha < params.min_alpha() {
        return Err(PmdError::Parameter(format!(
            "alpha = {} is below the mixing requirement {}",
            params.alpha,
            params.min_alpha()
        )));
    }
    ctd_run_unchecked(mdp, policy, reg, tau, params, iterations, seed, theta1, checkpoints)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn ctd_run_unchecked(
    mdp: &FiniteMdp,
    policy: &Policy,
    reg: &Regularizer,
    tau: f64,
    params: &CtdParams,
    iterations: usize,
    seed: u64,
    theta1: &[f64],
    checkpoints: &[usize],
) -> Result<CtdRun> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    if theta1.len() != n {
        return Err(PmdError::Dimension("initial iterate length".into()));
    }
    let reward = pair_rewards(mdp, policy, reg, tau);
    let d = pair_stationary(mdp, policy)?;
    let d_cdf = cumulative(&d);
    let p_cdf: Vec<Vec<f64>> = (0..n).map(|i| cumulative(mdp.transition_row(i / na, i % na))).collect();
    let pi_cdf: Vec<Vec<f64>> = (0..ns).map(|s| cumulative(policy.row(s))).collect();
    let gamma = mdp.gamma();
    let mut rng = keyed_rng(&[seed, 0xc7d]);
    let mut theta = theta1.to_vec();
    let mut z = sample_cdf(&d_cdf, rng.gen::<f64>());
    let mut snapshots = Vec::new();
    let mut next_check = checkpoints.iter().peekable();
    for t in 1..=iterations {
        let mut prev = z;
        for _ in 0..params.alpha {
            prev = z;
            let s = sample_cdf(&p_cdf[z], rng.gen::<f64>());
            let a = sample_cdf(&pi_cdf[s], rng.gen::<f64>());
            z = s * na + a;
        }
        let beta = params.beta(t);
        theta[prev] -= beta * (theta[prev] - reward[prev] - gamma * theta[z]);
        while let Some(&&c) = next_check.peek() {
            if c == t {
                snapshots.push((t, theta.clone()));
                next_check.next();
            } else if c < t {
                next_check.next();
            } else {
                break;
            }
        }
    }
    let mse = ctd_mse_bound(params, iterations as f64);
    let bias2 = ctd_bias_bound(params, iterations as f64).min(mse);
    Ok(CtdRun {
        estimate: ValueEstimate {
            q: theta,
            bias_bound: bias2.sqrt(),
            msq_bound: mse,
            samples: (iterations * params.alpha) as u64,
        },
        snapshots,
    })
}

/// Per-pair reward `c(s, a) + h^π(s) + τ KL(π(·|s) ‖ uniform)`.
fn pair_rewards(mdp: &FiniteMdp, policy: &Policy, reg: &Regularizer, tau: f64) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let h = reg.policy_values(policy);
    let uniform = Policy::uniform(ns, na);
    (0..ns * na)
        .map(|i| {
            let s = i / na;
            let kl = if tau > 0.0 { tau * policy.kl_row(&uniform, s) } else { 0.0 };
            mdp.cost(s, i % na) + h[s] + kl
        })
        .collect()
}

/// Exact `E[θ_{T+1}] - θ*` of conditional TD, by propagating the first
/// moments `E[(θ_t - θ*) 1{z_t = z}]` jointly with the chain.
///
/// The chain starts from `ν ⊗ π`; `alpha` and the step sizes come from `params`.
pub fn ctd_expected_error(
    mdp: &FiniteMdp,
    policy: &Policy,
    reg: &Regularizer,
    tau: f64,
    params: &CtdParams,
    iterations: usize,
    theta1: &[f64],
) -> Result<Vec<f64>> {
    let n = mdp.n_states() * mdp.n_actions();
    if theta1.len() != n {
        return Err(PmdError::Dimension("initial iterate length".into()));
    }
    let theta_star = eval_policy_exact(mdp, policy, reg, tau)?.q;
    let reward = pair_rewards(mdp, policy, reg, tau);
    let gamma = mdp.gamma();
    let k = pair_kernel(mdp, policy);
    let d = pair_stationary(mdp, policy)?;
    let mut k_skip = DMatrix::identity(n, n);
    for _ in 1..params.alpha {
        k_skip = &k_skip * &k;
    }
    let k_alpha_t = (&k * &k_skip).transpose();
    // ξ(z, z') = r(z) + γ θ*(z') - θ*(z), the temporal difference at θ*.
    let xi = DMatrix::from_fn(n, n, |z, zp| reward[z] + gamma * theta_star[zp] - theta_star[z]);
    let mut m = DMatrix::from_fn(n, n, |z, j| (theta1[j] - theta_star[j]) * d[z]);
    for t in 1..=iterations {
        let beta = params.beta(t);
        let g = DMatrix::from_fn(n, n, |z, zp| {
            k[(z, zp)] * beta * (-m[(z, z)] + gamma * m[(z, zp)] + xi[(z, zp)] * d[z])
        });
        let w = (&g * &k_skip).transpose();
        let mut next = &k_alpha_t * &m;
        for zpp in 0..n {
            for z in 0..n {
                next[(zpp, z)] += w[(zpp, z)];
            }
        }
        m = next;
    }
    Ok((0..n).map(|j| m.column(j).sum()).collect())
}

/// Which sample-size rule to use for conditional TD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CtdRule {
    /// Targets `ς_k = σ_k² = 2^{-(⌊k/l⌋+2)}`, `θ̄ = √n B/(1-γ)`.
    Linear,
    /// Targets `ς_k = 2^{-(⌊k/l⌋+2)}`, `σ_k² = 4^{-(⌊k/l⌋+2)}`, `θ̄ = B'/(1-γ)`.
    Quadratic,
}

/// Iteration count `T_k` and skip length `α_k` of the chosen rule.
///
/// `params` must carry the a priori scale for `θ1 = 0`.
pub fn ctd_schedule_for_targets(params: &CtdParams, n_pairs: usize, k: usize, l: usize, rule: CtdRule) -> (f64, usize) {
    let p = epoch_index(k, l) as f64;
    let t0 = params.t0;
    let b = params.cost_scale / (1.0 - params.gamma);
    let (theta_bar, growth) = match rule {
        CtdRule::Linear => ((n_pairs as f64).sqrt() * b, 2f64.powf(p + 2.0)),
        CtdRule::Quadratic => (b, 4f64.powf(p + 2.0)),
    };
    let lm2 = params.lambda_min.powi(2);
    let t = t0 * (3.0 * theta_bar * 2f64.powf(p + 2.0)).powf(2.0 / 3.0)
        + (4.0 * t0 * t0 * theta_bar * theta_bar * growth).sqrt()
        + 24.0 * params.sigma_f2 / lm2 * growth;
    let log_rate = params.mixing.rate.ln();
    let log_r = |x: f64| x.ln() / log_rate;
    let cr2 = params.mixing.c * params.r2;
    let a1 = 2.0 * (p + 2.0) * log_r(0.5) + log_r(params.lambda_min / (24.0 * cr2));
    let a2 = (p + 2.0) * log_r(0.5) + log_r(params.lambda_min / (3.0 * cr2));
    let alpha = a1.max(a2).ceil().max(1.0) as usize;
    (t.ceil(), alpha.max(params.min_alpha()))
}

/// Conditional TD oracle: fits the mixing model of the current policy, then
/// runs the sample-size rule from `θ1 = 0`.
#[derive(Clone, Debug)]
pub struct CtdOracle {
    pub rule: CtdRule,
    pub seed: u64,
    pub epoch: usize,
    /// Largest perturbation of the schedule, for [`CtdRule::Quadratic`].
    pub tau0: f64,
    /// Largest allowed number of sampled transitions per call.
    pub max_samples: f64,
}

impl ValueOracle for CtdOracle {
    fn estimate(
        &mut self,
        mdp: &FiniteMdp,
        policy: &Policy,
        reg: &Regularizer,
        tau: f64,
        step: &Step,
    ) -> Result<ValueEstimate> {
        let mixing = mixing_model(mdp, policy)?;
        let n = mdp.n_states() * mdp.n_actions();
        let tau_bound = match self.rule {
            CtdRule::Linear => tau,
            CtdRule::Quadratic => self.tau0.max(tau),
        };
        let probe = CtdParams::new(mdp, policy, reg, tau_bound, mixing, 1, ErrorScale::APriori { theta1_norm2: 0.0 })?;
        let (t, alpha) = ctd_schedule_for_targets(&probe, n, step.k, self.epoch, self.rule);
        if t * alpha as f64 > self.max_samples {
            return Err(PmdError::TooLarge(format!(
                "conditional TD needs {t} updates with skip {alpha}"
            )));
        }
        let params = CtdParams { alpha, ..probe };
        let seed = super::mix_key(&[self.seed, step.k as u64]);
        let run = ctd_evaluate(mdp, policy, reg, tau, &params, t as usize, seed, &vec![0.0; n], &[])?;
        Ok(run.estimate)
    }

    fn name(&self) -> &'static str {
        "ctd"
    }
}
