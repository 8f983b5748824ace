//! Step-size, perturbation, noise-target and inner-accuracy schedules.

use crate::error::{PmdError, Result};

/// Epoch length `l = ⌈log_γ(1/4)⌉`, the smallest `l` with `γ^l ≤ 1/4`.
pub fn epoch_length(gamma: f64) -> usize {
    let mut l = 1usize;
    let mut g = gamma;
    while g > 0.25 {
        g *= gamma;
        l += 1;
    }
    l
}

/// Index `⌊k/l⌋` of the epoch containing iteration `k`.
pub fn epoch_index(k: usize, l: usize) -> i32 {
    (k / l) as i32
}

/// Solver family and parameter rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    /// Exact PMD with `η = (1-γ)/(γμ)`, for `μ > 0`.
    PmdStrong,
    /// Exact PMD with a constant step.
    PmdPlain,
    /// Exact approximate PMD with `τ_k = τ0 γ^k` and `1 + η_k τ_k = 1/γ`.
    ApmdGeometric,
    /// Exact approximate PMD with `τ_k = 2^{-(⌊k/l⌋+1)}` and `1 + η_k τ_k = 1/γ`.
    ApmdEpoch,
    /// Stochastic PMD with `η = (1-γ)/(γμ)` and `ς_k = σ_k² = 2^{-(⌊k/l⌋+2)}`.
    SpmdStrong,
    /// Stochastic PMD with constant step and constant noise levels.
    SpmdPlain,
    /// Stochastic approximate PMD with `τ_k = 2^{-(⌊k/l⌋+1)}/√(γ log|A|)`.
    Sapmd,
    /// Stochastic PMD with inexact accelerated prox, `μ > 0`.
    InexactSpmd,
    /// Stochastic approximate PMD with inexact accelerated prox.
    InexactSapmd,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::PmdStrong => "pmd_strong",
            Variant::PmdPlain => "pmd_plain",
            Variant::ApmdGeometric => "apmd_geometric",
            Variant::ApmdEpoch => "apmd_epoch",
            Variant::SpmdStrong => "spmd_strong",
            Variant::SpmdPlain => "spmd_plain",
            Variant::Sapmd => "sapmd",
            Variant::InexactSpmd => "inexact_spmd",
            Variant::InexactSapmd => "inexact_sapmd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let all = [
            Variant::PmdStrong,
            Variant::PmdPlain,
            Variant::ApmdGeometric,
            Variant::ApmdEpoch,
            Variant::SpmdStrong,
            Variant::SpmdPlain,
            Variant::Sapmd,
            Variant::InexactSpmd,
            Variant::InexactSapmd,
        ];
        all.into_iter().find(|v| v.name() == name)
    }

    /// Whether the value oracle is allowed to be noisy.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Variant::SpmdStrong
                | Variant::SpmdPlain
                | Variant::Sapmd
                | Variant::InexactSpmd
                | Variant::InexactSapmd
        )
    }

    /// Whether the prox step is solved approximately by the accelerated method.
    pub fn is_inexact(&self) -> bool {
        matches!(self, Variant::InexactSpmd | Variant::InexactSapmd)
    }
}

/// Parameters of one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub k: usize,
    pub eta: f64,
    pub tau: f64,
    /// Target `ς_k` on `‖E Q̂ - Q‖∞`.
    pub bias_target: f64,
    /// Target `σ_k²` on `E ‖Q̂ - Q‖∞²`.
    pub msq_target: f64,
    /// Target `ε_k` of the inexact prox, if any.
    pub prox_accuracy: Option<f64>,
}

/// A parameter schedule `k ↦ (η_k, τ_k, ς_k, σ_k², ε_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub variant: Variant,
    pub gamma: f64,
    pub epoch: usize,
    /// Strong convexity modulus `μ` of the regularizer, where used.
    pub mu: f64,
    /// Constant step for the plain variants.
    pub eta: f64,
    /// Initial perturbation for the geometric and stochastic approximate variants.
    pub tau0: f64,
    /// Constant bias level for the plain stochastic variant.
    pub bias: f64,
    /// Constant mean-squared error level for the plain stochastic variant.
    pub msq: f64,
    /// Replaces the prescribed `ε_k` of the inexact variants.
    pub prox_override: Option<f64>,
}

impl Schedule {
    fn base(variant: Variant, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(PmdError::Discount(gamma));
        }
        Ok(Self {
            variant,
            gamma,
            epoch: epoch_length(gamma),
            mu: 0.0,
            eta: 0.0,
            tau0: 0.0,
            bias: 0.0,
            msq: 0.0,
            prox_override: None,
        })
    }

    fn strong(variant: Variant, gamma: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(PmdError::Schedule(format!(
                "{} needs a strongly convex regularizer, got mu = {mu}",
                variant.name()
            )));
        }
        let mut s = Self::base(variant, gamma)?;
        s.mu = mu;
        s.eta = (1.0 - gamma) / (gamma * mu);
        Ok(s)
    }

    fn perturbed(variant: Variant, gamma: f64, n_actions: usize) -> Result<Self> {
        if n_actions < 2 {
            return Err(PmdError::Schedule(format!(
                "{} needs at least two actions",
                variant.name()
            )));
        }
        let mut s = Self::base(variant, gamma)?;
        s.tau0 = 0.5 / (gamma * (n_actions as f64).ln()).sqrt();
        Ok(s)
    }

    pub fn pmd_strong(gamma: f64, mu: f64) -> Result<Self> {
        Self::strong(Variant::PmdStrong, gamma, mu)
    }

    pub fn pmd_plain(gamma: f64, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let mut s = Self::base(Variant::PmdPlain, gamma)?;
        s.eta = eta;
        Ok(s)
    }

    pub fn apmd_geometric(gamma: f64, tau0: f64) -> Result<Self> {
        if !(tau0 > 0.0 && tau0.is_finite()) {
            return Err(PmdError::Schedule(format!("initial perturbation tau0 = {tau0} must be > 0")));
        }
        let mut s = Self::base(Variant::ApmdGeometric, gamma)?;
        s.tau0 = tau0;
        Ok(s)
    }

    pub fn apmd_epoch(gamma: f64) -> Result<Self> {
        let mut s = Self::base(Variant::ApmdEpoch, gamma)?;
        s.tau0 = 0.5;
        Ok(s)
    }

    pub fn spmd_strong(gamma: f64, mu: f64) -> Result<Self> {
        Self::strong(Variant::SpmdStrong, gamma, mu)
    }

    /// Constant step with constant noise levels `ς` and `σ²`.
    pub fn spmd_plain(gamma: f64, eta: f64, bias: f64, msq: f64) -> Result<Self> {
        check_eta(eta)?;
        if !(bias >= 0.0 && msq >= bias * bias) {
            return Err(PmdError::Schedule("need 0 <= bias and bias^2 <= msq".into()));
        }
        let mut s = Self::base(Variant::SpmdPlain, gamma)?;
        s.eta = eta;
        s.bias = bias;
        s.msq = msq;
        Ok(s)
    }

    /// Constant step `η = √(2(1-γ) log|A| / (K σ²))` tuned for a horizon `K`.
    pub fn spmd_plain_tuned(gamma: f64, n_actions: usize, horizon: usize, bias: f64, msq: f64) -> Result<Self> {
        if !(msq > 0.0) || horizon == 0 || n_actions < 2 {
            return Err(PmdError::Schedule("tuned step needs msq > 0, K >= 1 and |A| >= 2".into()));
        }
        let eta = (2.0 * (1.0 - gamma) * (n_actions as f64).ln() / (horizon as f64 * msq)).sqrt();
        Self::spmd_plain(gamma, eta, bias, msq)
    }

    pub fn sapmd(gamma: f64, n_actions: usize) -> Result<Self> {
        Self::perturbed(Variant::Sapmd, gamma, n_actions)
    }

    pub fn inexact_spmd(gamma: f64, mu: f64) -> Result<Self> {
        Self::strong(Variant::InexactSpmd, gamma, mu)
    }

    pub fn inexact_sapmd(gamma: f64, n_actions: usize) -> Result<Self> {
        Self::perturbed(Variant::InexactSapmd, gamma, n_actions)
    }

    /// Parameters of iteration `k`.
    pub fn step(&self, k: usize) -> Step {
        let g = self.gamma;
        let p = epoch_index(k, self.epoch);
        let half = |e: i32| 2f64.powi(-e);
        let from_tau = |tau: f64| (1.0 - g) / (g * tau);
        let mut st = Step {
            k,
            eta: self.eta,
            tau: 0.0,
            bias_target: 0.0,
            msq_target: 0.0,
            prox_accuracy: None,
        };
        match self.variant {
            Variant::PmdStrong | Variant::PmdPlain => {}
            Variant::ApmdGeometric => {
                st.tau = self.tau0 * g.powi(k as i32);
                st.eta = from_tau(st.tau);
            }
            Variant::ApmdEpoch => {
                st.tau = half(p + 1);
                st.eta = from_tau(st.tau);
            }
            Variant::SpmdStrong => {
                st.bias_target = half(p + 2);
                st.msq_target = half(p + 2);
            }
            Variant::SpmdPlain => {
                st.bias_target = self.bias;
                st.msq_target = self.msq;
            }
            Variant::Sapmd | Variant::InexactSapmd => {
                st.tau = self.tau0 * half(p);
                st.eta = from_tau(st.tau);
                st.bias_target = half(p + 2);
                st.msq_target = half(2 * (p + 2));
                if self.variant == Variant::InexactSapmd {
                    st.prox_accuracy = Some((1.0 - g).powi(2) / (2.0 * g * g * (1.0 + g)));
                }
            }
            Variant::InexactSpmd => {
                st.bias_target = (1.0 - g) * half(p + 2);
                st.msq_target = half(p + 2);
                let p1 = epoch_index(k + 1, self.epoch);
                st.prox_accuracy = Some((1.0 - g).powi(2) * half(p1 + 2));
            }
        }
        if st.prox_accuracy.is_some() && self.prox_override.is_some() {
            st.prox_accuracy = self.prox_override;
        }
        st
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(PmdError::Parameter(format!("step size {eta}")));
    }
    Ok(())
}
