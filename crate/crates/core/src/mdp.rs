//! Finite discounted MDPs, stochastic policies and exact policy evaluation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use crate::error::{PmdError, Result};
use crate::linalg::{normalize_logs, solve_refined, strongly_connected};
use crate::regularizer::{checked_logs, xlogy_sum, Regularizer};

/// Tolerance on row sums of transition kernels and policies.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP with costs `c(s, a)`, kernel `P(s' | s, a)` and discount `γ`.
///
/// Storage is row-major: `cost[s * A + a]` and `transition[(s * A + a) * S + s']`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    cost: Vec<f64>,
    transition: Vec<f64>,
    cost_bound: f64,
}

impl FiniteMdp {
    /// Validates and builds an MDP. `cost_bound` defaults to `max |c|`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        cost: Vec<f64>,
        transition: Vec<f64>,
        cost_bound: Option<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(PmdError::Dimension("need at least one state and one action".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(PmdError::Discount(gamma));
        }
        if cost.len() != n_states * n_actions {
            return Err(PmdError::Dimension(format!(
                "cost has {} entries, expected {}",
                cost.len(),
                n_states * n_actions
            )));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(PmdError::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                if let Some(j) = row.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(PmdError::TransitionRow {
                        s,
                        a,
                        reason: format!("entry {j} is {}", row[j]),
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(PmdError::TransitionRow {
                        s,
                        a,
                        reason: format!("sums to {sum}"),
                    });
                }
            }
        }
        let max_abs = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let bound = cost_bound.unwrap_or(max_abs);
        for s in 0..n_states {
            for a in 0..n_actions {
                let c = cost[s * n_actions + a];
                if !c.is_finite() || c.abs() > bound {
                    return Err(PmdError::CostBound { s, a, bound });
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            cost,
            transition,
            cost_bound: bound,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `c̄ ≥ max |c(s, a)|`.
    pub fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// `P(· | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        &self.transition[(s * self.n_actions + a) * n..][..n]
    }

    /// Same model with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(PmdError::Discount(gamma));
        }
        let mut m = self.clone();
        m.gamma = gamma;
        Ok(m)
    }

    /// State transition matrix `P^π(s, s') = Σ_a π(a|s) P(s'|s, a)` for a row table.
    pub fn policy_kernel(&self, probs: &[f64]) -> DMatrix<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut m = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..na {
                let p = probs[s * na + a];
                if p == 0.0 {
                    continue;
                }
                for (t, &q) in self.transition_row(s, a).iter().enumerate() {
                    m[(s, t)] += p * q;
                }
            }
        }
        m
    }

    /// `Σ_s' P(s'|s, a) v(s')`.
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum()
    }
}

/// A stochastic policy stored as probabilities together with their logarithms.
///
/// Every entry has a finite logarithm, so the policy is interior even when a
/// probability is too small to be represented as a positive `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    logs: Vec<f64>,
}

impl Policy {
    /// The uniform policy `π0`.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
            logs: vec![p.ln(); n_states * n_actions],
        }
    }

    /// Builds a policy from probability rows, each positive and summing to one.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(PmdError::Dimension("policy table size".into()));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..][..n_actions];
            if let Some(a) = row.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(PmdError::PolicyRow {
                    s,
                    reason: format!("entry {a} is {}", row[a]),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(PmdError::PolicyRow {
                    s,
                    reason: format!("sums to {sum}"),
                });
            }
        }
        let logs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            n_states,
            n_actions,
            probs,
            logs,
        })
    }

    /// Builds a policy from unnormalized log-weights (softmax per row).
    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(PmdError::Dimension("policy table size".into()));
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(PmdError::PolicyRow {
                s: i / n_actions,
                reason: "non-finite logit".into(),
            });
        }
        let mut logs = logits;
        let mut probs = Vec::with_capacity(logs.len());
        for row in logs.chunks_mut(n_actions) {
            probs.extend(normalize_logs(row));
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
            logs,
        })
    }

    /// Builds a policy from normalized log rows, as produced by the prox operators.
    pub(crate) fn from_log_rows(n_states: usize, n_actions: usize, logs: Vec<f64>) -> Self {
        let probs = logs.iter().map(|l| l.exp()).collect();
        Self {
            n_states,
            n_actions,
            probs,
            logs,
        }
    }

    /// Deterministic choice `actions[s]`, with mass `floor` on every other action.
    pub fn clipped_deterministic(n_actions: usize, actions: &[usize], floor: f64) -> Self {
        let n_states = actions.len();
        let mut probs = vec![floor; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0 - floor * (n_actions - 1) as f64;
        }
        let logs = probs.iter().map(|p: &f64| p.ln()).collect();
        Self {
            n_states,
            n_actions,
            probs,
            logs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..][..self.n_actions]
    }

    pub fn log_row(&self, s: usize) -> &[f64] {
        &self.logs[s * self.n_actions..][..self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.logs
    }

    /// Stable hash of the log-probability table, for trajectory records.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.logs {
            l.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// `KL(self(·|s) ‖ other(·|s))` computed from the log tables.
    pub fn kl_row(&self, other: &Policy, s: usize) -> f64 {
        let lo = other.log_row(s);
        xlogy_sum(self.row(s), self.log_row(s), |a| lo[a]).max(0.0)
    }
}

/// Action values `Q(s, a)` and state values `V(s)` of a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables {
    n_actions: usize,
    /// Row-major `Q(s, a)`.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Perturbation strength used in the evaluation.
    pub tau: f64,
}

impl ValueTables {
    pub fn new(n_actions: usize, q: Vec<f64>, v: Vec<f64>, tau: f64) -> Self {
        Self {
            n_actions,
            q,
            v,
            tau,
        }
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..][..self.n_actions]
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// A probability vector over states.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDistribution {
    pub weights: Vec<f64>,
}

impl StateDistribution {
    /// `Σ_s w(s) x(s)`.
    pub fn expect(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }
}

/// `KL(p ‖ q) = Σ p log(p / q)` with `0 · log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PmdError::Dimension(format!("{} vs {}", p.len(), q.len())));
    }
    let mut s = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(PmdError::Support);
            }
            s += pi * (pi / qi).ln();
        }
    }
    Ok(s.max(0.0))
}

/// Exact `(Q^π_τ, V^π_τ)` by a dense linear solve, perturbation centered at the uniform policy.
pub fn eval_policy_exact(
    mdp: &FiniteMdp,
    policy: &Policy,
    reg: &Regularizer,
    tau: f64,
) -> Result<ValueTables> {
    check_shape(mdp, policy)?;
    evaluate(mdp, policy.probs(), policy.log_probs(), reg, tau)
}

/// Exact evaluation for a raw row table, which need not be normalized.
///
/// Log-based terms (a KL regularizer or `τ > 0`) require positive entries;
/// with the zero or squared ℓ2 regularizer and `τ = 0` zeros are allowed.
pub fn eval_rows_exact(
    mdp: &FiniteMdp,
    rows: &[f64],
    reg: &Regularizer,
    tau: f64,
) -> Result<ValueTables> {
    if rows.len() != mdp.n_states() * mdp.n_actions() {
        return Err(PmdError::Dimension("policy table size".into()));
    }
    let logs = checked_logs(rows, reg.uses_logs() || tau > 0.0)?;
    evaluate(mdp, rows, &logs, reg, tau)
}

fn evaluate(
    mdp: &FiniteMdp,
    probs: &[f64],
    logs: &[f64],
    reg: &Regularizer,
    tau: f64,
) -> Result<ValueTables> {
    reg.validate(mdp.n_states(), mdp.n_actions())?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(PmdError::Parameter(format!("perturbation tau = {tau}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let extra = state_extra_cost(mdp, probs, logs, reg, tau);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        let mut acc = extra[s];
        for a in 0..na {
            acc += probs[s * na + a] * mdp.cost(s, a);
        }
        r[s] = acc;
    }
    let a_mat = DMatrix::identity(ns, ns) - mdp.policy_kernel(probs) * mdp.gamma();
    let v = solve_refined(&a_mat, &r)?;
    let v: Vec<f64> = v.iter().cloned().collect();
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = mdp.cost(s, a) + extra[s] + mdp.gamma() * mdp.expected_next(s, a, &v);
        }
    }
    Ok(ValueTables::new(na, q, v, tau))
}

/// Per-state `h(s, π_s) + τ KL(π_s ‖ uniform)`.
fn state_extra_cost(
    mdp: &FiniteMdp,
    probs: &[f64],
    logs: &[f64],
    reg: &Regularizer,
    tau: f64,
) -> Vec<f64> {
    let na = mdp.n_actions();
    let lu = -(na as f64).ln();
    (0..mdp.n_states())
        .map(|s| {
            let p = &probs[s * na..][..na];
            let lp = &logs[s * na..][..na];
            let mut e = reg.value_with_logs(s, p, lp);
            if tau > 0.0 {
                e += tau * xlogy_sum(p, lp, |_| lu);
            }
            e
        })
        .collect()
}

fn check_shape(mdp: &FiniteMdp, policy: &Policy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(PmdError::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Discounted visitation `d_{s0}(s) = (1-γ) Σ_t γ^t Pr(s_t = s | s_0 = s0)`.
pub fn discounted_visitation(mdp: &FiniteMdp, policy: &Policy, s0: usize) -> Result<StateDistribution> {
    check_shape(mdp, policy)?;
    let ns = mdp.n_states();
    if s0 >= ns {
        return Err(PmdError::Dimension(format!("start state {s0} >= {ns}")));
    }
    let pt = mdp.policy_kernel(policy.probs()).transpose();
    let a = DMatrix::identity(ns, ns) - pt * mdp.gamma();
    let mut b = DVector::zeros(ns);
    b[s0] = 1.0 - mdp.gamma();
    let d = solve_refined(&a, &b)?;
    Ok(StateDistribution {
        weights: d.iter().cloned().collect(),
    })
}

/// Stationary distribution of `P^π`; the chain must be irreducible.
pub fn stationary_distribution(mdp: &FiniteMdp, policy: &Policy) -> Result<StateDistribution> {
    check_shape(mdp, policy)?;
    stationary_of_kernel(&mdp.policy_kernel(policy.probs()))
}

pub(crate) fn stationary_of_kernel(p: &DMatrix<f64>) -> Result<StateDistribution> {
    let n = p.nrows();
    if !strongly_connected(p) {
        return Err(PmdError::Reducible);
    }
    // Solve (I - Pᵀ) ν = 0 with the last equation replaced by Σ ν = 1.
    let mut a = DMatrix::identity(n, n) - p.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let nu = solve_refined(&a, &b)?;
    let w: Vec<f64> = nu.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    Ok(StateDistribution {
        weights: w.into_iter().map(|x| x / total).collect(),
    })
}

/// `A(s, a) = Q(s, a) - V(s)`, row-major.
pub fn advantage(values: &ValueTables) -> Vec<f64> {
    let na = values.n_actions();
    values
        .q
        .iter()
        .enumerate()
        .map(|(i, q)| q - values.v[i / na])
        .collect()
}

/// `∂V^π(s0) / ∂π(a|s) = d_{s0}(s) (Q(s, a) + ∂h(s, π_s)/∂π(a)) / (1 - γ)`,
/// treating the table entries as free coordinates.
pub fn value_gradient(mdp: &FiniteMdp, policy: &Policy, reg: &Regularizer, s0: usize) -> Result<Vec<f64>> {
    let values = eval_policy_exact(mdp, policy, reg, 0.0)?;
    let d = discounted_visitation(mdp, policy, s0)?;
    let na = mdp.n_actions();
    let mut g = vec![0.0; mdp.n_states() * na];
    for s in 0..mdp.n_states() {
        let dh = reg.gradient(s, policy.row(s))?;
        for a in 0..na {
            g[s * na + a] = d.weights[s] * (values.q(s, a) + dh[a]) / (1.0 - mdp.gamma());
        }
    }
    Ok(g)
}

/// `f(π) = Σ_s w(s) V^π(s)`.
pub fn weighted_objective(
    mdp: &FiniteMdp,
    policy: &Policy,
    reg: &Regularizer,
    weights: &StateDistribution,
) -> Result<f64> {
    if weights.weights.len() != mdp.n_states() {
        return Err(PmdError::Dimension("weight vector length".into()));
    }
    let v = eval_policy_exact(mdp, policy, reg, 0.0)?;
    Ok(weights.expect(&v.v))
}

/// `Σ_s ν(s) KL(a(·|s) ‖ b(·|s))`, the weighted divergence `D(b, a)` used in the
/// convergence statements (`a` plays the role of the optimal policy).
pub fn weighted_kl(a: &Policy, b: &Policy, nu: &StateDistribution) -> f64 {
    (0..a.n_states()).map(|s| nu.weights[s] * a.kl_row(b, s)).sum()
}
