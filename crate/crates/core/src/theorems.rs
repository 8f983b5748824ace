//! Right-hand sides of the convergence guarantees, as functions of `k`.

use crate::schedule::epoch_index;

/// Which convergence guarantee to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guarantee {
    /// Exact PMD, `μ > 0`, `η = (1-γ)/(γμ)`: linear rate `γ^k`.
    PmdStrong,
    /// Exact PMD with constant step: `O(1/k)` bound on `f(π_k) - f*`.
    PmdPlain,
    /// Approximate PMD with `τ_k = τ0 γ^k`.
    ApmdGeometric,
    /// Approximate PMD with `τ_k = 2^{-(⌊k/l⌋+1)}`.
    ApmdEpoch,
    /// Stochastic PMD, `μ > 0`.
    SpmdStrong,
    /// Stochastic PMD with constant step; bounds `E f(π_R) - f*` with `R` uniform on `1..k`.
    SpmdPlain,
    /// Stochastic approximate PMD.
    Sapmd,
    /// Stochastic PMD with inexact prox, `μ > 0`.
    InexactSpmd,
    /// Stochastic approximate PMD with inexact prox.
    InexactSapmd,
}

impl Guarantee {
    /// Whether the left-hand side includes `μ/(1-γ) · D(π_k, π*)`.
    pub fn includes_divergence(&self) -> bool {
        matches!(
            self,
            Guarantee::PmdStrong | Guarantee::SpmdStrong | Guarantee::InexactSpmd
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Guarantee::PmdStrong => "pmd_strong",
            Guarantee::PmdPlain => "pmd_plain",
            Guarantee::ApmdGeometric => "apmd_geometric",
            Guarantee::ApmdEpoch => "apmd_epoch",
            Guarantee::SpmdStrong => "spmd_strong",
            Guarantee::SpmdPlain => "spmd_plain",
            Guarantee::Sapmd => "sapmd",
            Guarantee::InexactSpmd => "inexact_spmd",
            Guarantee::InexactSapmd => "inexact_sapmd",
        }
    }
}

/// Problem constants entering the bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    /// `f(π0) - f(π*)`.
    pub initial_gap: f64,
    pub gamma: f64,
    pub n_actions: usize,
    /// Regularizer modulus `μ`.
    pub mu: f64,
    /// Constant step, for the plain variants.
    pub eta: f64,
    /// Initial perturbation, for the geometric variant.
    pub tau0: f64,
    /// Constant bias level `ς`, for the plain stochastic variant.
    pub bias: f64,
    /// Constant mean-squared error level `σ²`, for the plain stochastic variant.
    pub msq: f64,
}

impl BoundInputs {
    pub fn new(initial_gap: f64, gamma: f64, n_actions: usize) -> Self {
        Self {
            initial_gap,
            gamma,
            n_actions,
            mu: 0.0,
            eta: 0.0,
            tau0: 0.0,
            bias: 0.0,
            msq: 0.0,
        }
    }
}

/// Right-hand side of a guarantee at iteration `k` with epoch length `l`.
///
/// For [`Guarantee::PmdPlain`] the value bounds `f(π_k) - f*` and is infinite at `k = 0`.
/// For [`Guarantee::SpmdPlain`] it bounds the average of `E f(π_j) - f*` over `j = 1..k`.
pub fn theorem_bound(g: Guarantee, k: usize, l: usize, c: &BoundInputs) -> f64 {
    let gm = c.gamma;
    let log_a = (c.n_actions as f64).ln();
    let kf = k as f64;
    let gap = c.initial_gap;
    let decay = 2f64.powi(-epoch_index(k, l));
    let inv = 1.0 / (1.0 - gm);
    match g {
        Guarantee::PmdStrong => gm.powi(k as i32) * (gap + c.mu * log_a * inv),
        Guarantee::PmdPlain => {
            if k == 0 {
                f64::INFINITY
            } else {
                (c.eta * gm * gap + log_a) / (c.eta * (1.0 - gm) * kf)
            }
        }
        Guarantee::ApmdGeometric => {
            gm.powi(k as i32) * (gap + c.tau0 * (2.0 * inv + kf / gm) * log_a)
        }
        Guarantee::ApmdEpoch => decay * (gap + 2.0 * log_a * inv),
        Guarantee::SpmdStrong => {
            decay * (gap + inv * (c.mu * log_a + 2.5 + 5.0 / (8.0 * gm * c.mu)))
        }
        Guarantee::SpmdPlain => {
            if k == 0 {
                f64::INFINITY
            } else {
                gm * gap * inv / kf
                    + log_a / (c.eta * (1.0 - gm) * kf)
                    + 2.0 * c.bias * inv
                    + c.eta * c.msq * inv * inv / 2.0
            }
        }
        Guarantee::Sapmd => {
            decay * (gap + 3.0 * log_a.sqrt() * inv / gm.sqrt() + 2.5 * inv)
        }
        Guarantee::InexactSpmd => {
            decay
                * (gap
                    + inv
                        * (c.mu * log_a
                            + 2.5 * (2.0 - gm)
                            + 5.0 / (8.0 * gm * c.mu)
                            + 1.25 * c.mu * gm * gm * (1.0 + gm) * log_a))
        }
        Guarantee::InexactSapmd => {
            let r = log_a.sqrt() / gm.sqrt();
            decay * (gap + inv * (3.0 * r + 2.5 * (2.0 - gm) + 1.25 * r))
        }
    }
}

/// Bound of the tuned constant-step stochastic method,
/// `γ gap/((1-γ)k) + 2ς/(1-γ) + σ √(2 log|A|) / ((1-γ)^{3/2} √k)`.
pub fn spmd_plain_tuned_bound(k: usize, c: &BoundInputs) -> f64 {
    let gm = c.gamma;
    let kf = k as f64;
    gm * c.initial_gap / ((1.0 - gm) * kf)
        + 2.0 * c.bias / (1.0 - gm)
        + c.msq.sqrt() * (2.0 * (c.n_actions as f64).ln()).sqrt() / ((1.0 - gm).powf(1.5) * kf.sqrt())
}

/// Bound from the epoch recursion: if
/// `X_{k+1} ≤ γ X_k + (Y_k - Y_{k+1}) + Z_k` with `Y_k = Y 2^{-(⌊k/l⌋+1)}` and
/// `Z_k = Z 2^{-(⌊k/l⌋+2)}`, then `X_k ≤ 2^{-⌊k/l⌋} (X_0 + Y + 5Z/(4(1-γ)))`.
pub fn recursion_bound(x0: f64, y: f64, z: f64, gamma: f64, l: usize, k: usize) -> f64 {
    2f64.powi(-epoch_index(k, l)) * (x0 + y + 1.25 * z / (1.0 - gamma))
}

/// Iterates the recursion with equality, the worst case it allows.
pub fn recursion_worst_case(x0: f64, y: f64, z: f64, gamma: f64, l: usize, k: usize) -> Vec<f64> {
    let yk = |j: usize| y * 2f64.powi(-(epoch_index(j, l) + 1));
    let zk = |j: usize| z * 2f64.powi(-(epoch_index(j, l) + 2));
    let mut xs = vec![x0];
    for j in 0..k {
        let x = gamma * xs[j] + (yk(j) - yk(j + 1)) + zk(j);
        xs.push(x);
    }
    xs
}
