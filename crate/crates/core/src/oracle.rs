//! Reference solutions: regularized value iteration and, for tiny
//! unregularized instances, exhaustive search over deterministic policies.

use rayon::prelude::*;

use crate::error::{PmdError, Result};
use crate::linalg::normalize_logs;
use crate::mdp::{eval_rows_exact, stationary_distribution, FiniteMdp, Policy, StateDistribution};
use crate::prox::{agd_prox, kl_argmin_logs, AgdStop, CompositeProblem};
use crate::regularizer::Regularizer;

/// Mass kept on non-chosen actions when a deterministic policy is returned.
pub const POLICY_FLOOR: f64 = 1e-12;

/// Largest number of deterministic policies [`enumerate_deterministic`] visits.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Optimal policy and value with a certified accuracy.
#[derive(Clone, Debug)]
pub struct OptimalSolution {
    pub pi_star: Policy,
    /// `V*(s)`, accurate to `delta` in `‖·‖∞`.
    pub v_star: Vec<f64>,
    /// `Q*(s, a) = c(s, a) + γ Σ P(s'|s, a) V*(s')`, before the regularizer.
    pub q_star: Vec<f64>,
    /// Stationary distribution of `π*`.
    pub nu_star: StateDistribution,
    /// `Σ_s ν*(s) V*(s)`.
    pub f_star: f64,
    pub delta: f64,
    pub iterations: usize,
}

/// Minimizer of `⟨y, p⟩ + h(s, p)` over the simplex with a bound on the
/// suboptimality of the returned value.
struct InnerSolution {
    probs: Vec<f64>,
    value: f64,
    error: f64,
}

fn inner_minimize(y: &[f64], reg: &Regularizer, s: usize, tol: f64) -> Result<InnerSolution> {
    let na = y.len();
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let roundoff = 1e-15 * scale;
    if reg.is_zero() {
        let (best, &value) = y
            .iter()
            .enumerate()
            .fold((0, &y[0]), |acc, (a, v)| if *v < *acc.1 { (a, v) } else { acc });
        let mut probs = vec![0.0; na];
        probs[best] = 1.0;
        return Ok(InnerSolution { probs, value, error: 0.0 });
    }
    let centers = reg.kl_centers(s, na);
    let lw = reg.smooth_weight();
    if lw == 0.0 {
        let refs: Vec<(f64, &[f64])> = centers.iter().map(|(w, c)| (*w, c.as_slice())).collect();
        let mut logs = kl_argmin_logs(y, &refs);
        let logs_kept = logs.clone();
        let probs = normalize_logs(&mut logs);
        let value = dot(y, &probs) + reg.value_with_logs(s, &probs, &logs_kept);
        return Ok(InnerSolution { probs, value, error: roundoff });
    }
    if centers.is_empty() {
        let target: Vec<f64> = y.iter().map(|v| -v / lw).collect();
        let probs = project_simplex(&target);
        let value = dot(y, &probs) + reg.value(s, &probs)?;
        return Ok(InnerSolution { probs, value, error: roundoff });
    }
    let problem = CompositeProblem {
        lin: y.to_vec(),
        hessian: Some(nalgebra::DMatrix::identity(na, na) * lw),
        kl_terms: centers,
    };
    // From the uniform start KL(x ‖ x0) ≤ log|A|.
    let log_a = (na as f64).ln().max(f64::MIN_POSITIVE);
    let out = agd_prox(&problem, &vec![-(na as f64).ln(); na], AgdStop::Accuracy(tol / log_a))?;
    let logs = out.y_logs;
    let probs: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let value = dot(y, &probs) + reg.value_with_logs(s, &probs, &logs);
    Ok(InnerSolution {
        probs,
        value,
        error: out.epsilon * log_a + roundoff,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Moves mass `floor` onto every zero entry, taking it from the largest entry.
fn floor_row(row: &mut [f64], floor: f64) {
    let top = (0..row.len())
        .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
        .unwrap_or(0);
    let mut moved = 0.0;
    for (a, p) in row.iter_mut().enumerate() {
        if a != top && *p < floor {
            moved += floor - *p;
            *p = floor;
        }
    }
    row[top] -= moved;
}

/// Value iteration with per-state regularized minimization.
///
/// Iterates `V ← min_p ⟨c(s,·) + γ P V, p⟩ + h(s, p)` until successive iterates
/// differ by at most `δ(1-γ)/2`; inner problems without a closed form are
/// solved by the accelerated method to accuracy `δ(1-γ)/4`.
pub fn regularized_value_iteration(mdp: &FiniteMdp, reg: &Regularizer, target_delta: f64) -> Result<OptimalSolution> {
    if !(target_delta > 0.0) {
        return Err(PmdError::Parameter(format!("target accuracy {target_delta}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    reg.validate(ns, na)?;
    let gamma = mdp.gamma();
    let stop = target_delta * (1.0 - gamma) / 2.0;
    let inner_tol = target_delta * (1.0 - gamma) / 4.0;
    let cap = ((stop / (2.0 * mdp.cost_bound() + 1.0)).ln() / gamma.ln()).ceil().max(0.0) as usize + 1000;
    let mut v = vec![0.0; ns];
    let mut diff = f64::INFINITY;
    let mut inner_err = 0.0f64;
    let mut iterations = 0;
    while diff > stop && iterations < cap {
        let q = bellman_q(mdp, &v);
        let mut next = vec![0.0; ns];
        inner_err = 0.0;
        for s in 0..ns {
            let sol = inner_minimize(&q[s * na..][..na], reg, s, inner_tol)?;
            next[s] = sol.value;
            inner_err = inner_err.max(sol.error);
        }
        diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
    }
    let delta = (gamma * diff + inner_err) / (1.0 - gamma);
    let q_star = bellman_q(mdp, &v);
    let mut probs = Vec::with_capacity(ns * na);
    for s in 0..ns {
        let mut row = inner_minimize(&q_star[s * na..][..na], reg, s, inner_tol)?.probs;
        floor_row(&mut row, POLICY_FLOOR);
        probs.extend(row);
    }
    let pi_star = Policy::from_probs(ns, na, renormalize(probs, na))?;
    finish(mdp, pi_star, v, q_star, delta, iterations)
}

fn renormalize(mut probs: Vec<f64>, na: usize) -> Vec<f64> {
    for row in probs.chunks_mut(na) {
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= t);
    }
    probs
}

fn bellman_q(mdp: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = mdp.cost(s, a) + mdp.gamma() * mdp.expected_next(s, a, v);
        }
    }
    q
}

fn finish(
    mdp: &FiniteMdp,
    pi_star: Policy,
    v_star: Vec<f64>,
    q_star: Vec<f64>,
    delta: f64,
    iterations: usize,
) -> Result<OptimalSolution> {
    let nu_star = stationary_distribution(mdp, &pi_star)?;
    let f_star = nu_star.expect(&v_star);
    Ok(OptimalSolution {
        pi_star,
        v_star,
        q_star,
        nu_star,
        f_star,
        delta,
        iterations,
    })
}

/// Exhaustive search over deterministic policies of an unregularized MDP.
///
/// Returns the policy minimizing `Σ_s V^π(s)`, ties broken towards the lowest
/// action indices (state 0 most significant).
pub fn enumerate_deterministic(mdp: &FiniteMdp) -> Result<OptimalSolution> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let count = (0..ns).try_fold(1usize, |acc, _| acc.checked_mul(na).filter(|c| *c <= MAX_ENUMERATION));
    let count = count.ok_or_else(|| PmdError::TooLarge(format!("{na}^{ns} deterministic policies")))?;
    let decode = |mut idx: usize| {
        let mut actions = vec![0usize; ns];
        for s in (0..ns).rev() {
            actions[s] = idx % na;
            idx /= na;
        }
        actions
    };
    let rows = |actions: &[usize]| {
        let mut r = vec![0.0; ns * na];
        for (s, &a) in actions.iter().enumerate() {
            r[s * na + a] = 1.0;
        }
        r
    };
    let zero = Regularizer::zero();
    let totals: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| {
            eval_rows_exact(mdp, &rows(&decode(i)), &zero, 0.0)
                .map(|v| v.v.iter().sum::<f64>())
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let mut best = 0;
    for (i, t) in totals.iter().enumerate() {
        if *t < totals[best] - 1e-12 * totals[best].abs().max(1.0) {
            best = i;
        }
    }
    let actions = decode(best);
    let values = eval_rows_exact(mdp, &rows(&actions), &zero, 0.0)?;
    let delta = 1e-12 * values.v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let q_star = bellman_q(mdp, &values.v);
    let pi_star = Policy::clipped_deterministic(na, &actions, POLICY_FLOOR);
    finish(mdp, pi_star, values.v, q_star, delta, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::two_cycle;

    #[test]
    fn two_cycle_values() {
        let m = two_cycle();
        let a = regularized_value_iteration(&m, &Regularizer::zero(), 1e-10).unwrap();
        assert!((a.v_star[0] - 2.0 / 3.0).abs() <= a.delta);
        assert!((a.v_star[1] - 4.0 / 3.0).abs() <= a.delta);
        let b = enumerate_deterministic(&m).unwrap();
        assert!((b.v_star[0] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn bandit_prefers_cheap_action() {
        let m = FiniteMdp::new(1, 2, 0.5, vec![0.0, 1.0], vec![1.0, 1.0], None).unwrap();
        let s = regularized_value_iteration(&m, &Regularizer::zero(), 1e-10).unwrap();
        assert!(s.f_star.abs() <= s.delta);
        assert_eq!(s.pi_star.row(0)[1], POLICY_FLOOR);
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, 0.1, -0.5]);
        assert!((p[0] - 0.7).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn too_many_policies() {
        let m = crate::generate::generate(&crate::generate::GeneratorSpec::new(0, 30, 3, 0.5)).unwrap();
        assert!(matches!(enumerate_deterministic(&m), Err(PmdError::TooLarge(_))));
    }
}
