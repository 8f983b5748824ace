//! Proximal steps on the probability simplex.
//!
//! Closed-form steps minimize a linear term plus a positive combination of
//! KL divergences; they are computed in log space. [`agd_prox`] handles a
//! smooth quadratic part with the accelerated scheme whose per-iteration
//! subproblem is again of the closed form.

use nalgebra::DMatrix;

use crate::error::{PmdError, Result};
use crate::linalg::{log_sum_exp, normalize_logs, shift_logs};
use crate::regularizer::Regularizer;

/// `argmin_p ⟨lin, p⟩ + Σ_i w_i KL(p ‖ c_i)` over the simplex, returned as
/// normalized log-probabilities. `centers` holds `(w_i, log c_i)` with `Σ w_i > 0`.
pub fn kl_argmin_logs(lin: &[f64], centers: &[(f64, &[f64])]) -> Vec<f64> {
    let total: f64 = centers.iter().map(|(w, _)| w).sum();
    let mut z: Vec<f64> = lin.iter().map(|g| -g).collect();
    for (w, c) in centers {
        if *w == 0.0 {
            continue;
        }
        for (zi, ci) in z.iter_mut().zip(c.iter()) {
            *zi += w * ci;
        }
    }
    for zi in z.iter_mut() {
        *zi /= total;
    }
    shift_logs(&mut z);
    z
}

/// Mirror step `p ∝ base · exp(-η g)`.
pub fn entropy_prox(g: &[f64], base: &[f64], eta: f64) -> Result<Vec<f64>> {
    if g.len() != base.len() {
        return Err(PmdError::Dimension("gradient and base lengths differ".into()));
    }
    check_step(eta)?;
    if let Some(a) = g.iter().position(|x| !x.is_finite()) {
        return Err(PmdError::Parameter(format!("gradient entry {a} is {}", g[a])));
    }
    let logs = positive_logs(base)?;
    let lin: Vec<f64> = g.iter().map(|x| eta * x).collect();
    let mut out = kl_argmin_logs(&lin, &[(1.0, &logs)]);
    Ok(normalize_logs(&mut out))
}

/// Closed-form policy mirror descent step for one state,
/// `argmin_p η⟨q, p⟩ + η h(s, p) + ητ KL(p ‖ uniform) + KL(p ‖ base)`.
///
/// Requires every regularizer term to be a multiple of a KL divergence.
pub fn pmd_prox_closed(
    q_row: &[f64],
    base: &[f64],
    eta: f64,
    reg: &Regularizer,
    s: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    if q_row.len() != base.len() {
        return Err(PmdError::Dimension("q row and base lengths differ".into()));
    }
    let logs = positive_logs(base)?;
    let mut out = pmd_prox_logs(q_row, &logs, eta, reg, s, tau)?;
    Ok(normalize_logs(&mut out))
}

/// Log-space version of [`pmd_prox_closed`] taking and returning log rows.
pub fn pmd_prox_logs(
    q_row: &[f64],
    base_logs: &[f64],
    eta: f64,
    reg: &Regularizer,
    s: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    check_step(eta)?;
    if !reg.is_closed_form() {
        return Err(PmdError::Regularizer(
            "closed-form prox needs a KL-type regularizer".into(),
        ));
    }
    let na = q_row.len();
    let kl = reg.kl_centers(s, na);
    let uniform = vec![-(na as f64).ln(); na];
    let lin: Vec<f64> = q_row.iter().map(|x| eta * x).collect();
    let mut centers: Vec<(f64, &[f64])> = vec![(1.0, base_logs)];
    for (w, c) in &kl {
        centers.push((eta * w, c));
    }
    if tau > 0.0 {
        centers.push((eta * tau, &uniform));
    }
    Ok(kl_argmin_logs(&lin, &centers))
}

fn check_step(eta: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(PmdError::Parameter(format!("step size {eta}")));
    }
    Ok(())
}

fn positive_logs(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(a) = p.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(PmdError::PolicyRow {
            s: 0,
            reason: format!("base entry {a} is {}", p[a]),
        });
    }
    Ok(p.iter().map(|x| x.ln()).collect())
}

/// Composite objective `Φ = φ + χ` on the simplex with
/// `φ(x) = ⟨lin, x⟩ + ½ xᵀ H x` and `χ(x) = Σ_i w_i KL(x ‖ c_i)`.
#[derive(Clone, Debug)]
pub struct CompositeProblem {
    pub lin: Vec<f64>,
    /// Symmetric positive semidefinite curvature of the smooth part.
    pub hessian: Option<DMatrix<f64>>,
    /// `(w_i, log c_i)`; the weights must be positive.
    pub kl_terms: Vec<(f64, Vec<f64>)>,
}

impl CompositeProblem {
    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    /// Smoothness of `φ` w.r.t. `(‖·‖₁, ‖·‖∞)`: the largest entry of `|H|`.
    pub fn smoothness(&self) -> f64 {
        self.hessian
            .as_ref()
            .map(|h| h.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .unwrap_or(0.0)
    }

    /// Modulus of `Φ` w.r.t. KL, contributed by `χ`.
    pub fn modulus(&self) -> f64 {
        self.kl_terms.iter().map(|(w, _)| w).sum()
    }

    pub fn smooth_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.lin.clone();
        if let Some(h) = &self.hessian {
            for i in 0..g.len() {
                for j in 0..g.len() {
                    g[i] += h[(i, j)] * x[j];
                }
            }
        }
        g
    }

    /// `Φ(x)` at a point given by probabilities and their logs.
    pub fn value(&self, x: &[f64], logx: &[f64]) -> f64 {
        let mut v: f64 = self.lin.iter().zip(x).map(|(g, p)| g * p).sum();
        if let Some(h) = &self.hessian {
            let mut quad = 0.0;
            for i in 0..x.len() {
                for j in 0..x.len() {
                    quad += x[i] * h[(i, j)] * x[j];
                }
            }
            v += 0.5 * quad;
        }
        for (w, c) in &self.kl_terms {
            v += w * crate::regularizer::xlogy_sum(x, logx, |a| c[a]);
        }
        v
    }
}

/// Step parameters `(q_t, r_t, ρ_t)` of the accelerated scheme for smoothness
/// `l` and modulus `mu` (requires `l > mu > 0`).
pub fn agd_step_params(t: usize, l: f64, mu: f64) -> (f64, f64, f64) {
    let t0 = switch_index(l, mu);
    let tf = t as f64;
    if t <= t0 {
        let q = 2.0 / (tf + 1.0);
        (q, tf / (2.0 * l), q)
    } else {
        let ratio = mu / l;
        let s = ratio.sqrt();
        let q = (s - ratio) / (1.0 - ratio);
        let r = 1.0 / ((l * mu).sqrt() - mu);
        (q, r, s)
    }
}

/// Last iteration of the sublinear phase, `⌊2√(L/μ) - 1⌋`.
pub fn switch_index(l: f64, mu: f64) -> usize {
    (2.0 * (l / mu).sqrt() - 1.0).floor().max(0.0) as usize
}

/// `ε(t) = 2L · min{(1 - √(μ/L))^{t-1}, 2 / (t(t+1))}`.
pub fn epsilon_bound(l: f64, mu: f64, t: usize) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let tf = t as f64;
    let s = (mu / l).sqrt().min(1.0);
    let geo = if t <= 1 { 1.0 } else { (1.0 - s).powi(t as i32 - 1) };
    2.0 * l * geo.min(2.0 / (tf * (tf + 1.0)))
}

/// Smallest `t ≥ 1` with `ε(t) ≤ target`.
pub fn iterations_for(l: f64, mu: f64, target: f64) -> Result<usize> {
    if !(target > 0.0) {
        return Err(PmdError::Parameter(format!("target accuracy {target}")));
    }
    if !(mu > 0.0) || l < 0.0 {
        return Err(PmdError::Parameter(format!("L = {l}, mu = {mu}")));
    }
    if epsilon_bound(l, mu, 1) <= target {
        return Ok(1);
    }
    // ε(t) is nonincreasing; bracket then bisect.
    let mut hi = 2usize;
    while epsilon_bound(l, mu, hi) > target {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if epsilon_bound(l, mu, mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Ratio `L/μ` below which the accelerated schedule is run with `L` raised
/// to `AGD_MIN_CONDITION · μ`; a smooth function is also smooth for any
/// larger constant, and the certificate is only valid away from `L ≈ μ`.
pub const AGD_MIN_CONDITION: f64 = 4.0;

/// Smoothness constant actually used by [`agd_prox`] for a problem.
pub fn effective_smoothness(l: f64, mu: f64) -> f64 {
    if l == 0.0 {
        0.0
    } else {
        l.max(AGD_MIN_CONDITION * mu)
    }
}

/// When to stop the accelerated solver.
#[derive(Clone, Copy, Debug)]
pub enum AgdStop {
    Iterations(usize),
    /// Run `iterations_for(L, μ, ε)` iterations.
    Accuracy(f64),
}

/// Output of [`agd_prox`]: the averaged iterate `y`, the prox sequence
/// iterate `x`, both as log rows, and the certified factor `ε(T)`.
#[derive(Clone, Debug)]
pub struct AgdOutcome {
    pub y_logs: Vec<f64>,
    pub x_logs: Vec<f64>,
    pub iterations: usize,
    pub epsilon: f64,
    pub smoothness: f64,
    pub modulus: f64,
}

/// Accelerated solver for `min_x φ(x) + χ(x)` started at `x0 = y0`.
///
/// Guarantees `Φ(y_T) - Φ(x) + μ KL(x ‖ x_T) ≤ ε(T) KL(x ‖ x0)` for every `x`.
/// An affine `φ` is solved exactly in one step.
pub fn agd_prox(problem: &CompositeProblem, x0_logs: &[f64], stop: AgdStop) -> Result<AgdOutcome> {
    let n = problem.dim();
    if x0_logs.len() != n || problem.kl_terms.iter().any(|(_, c)| c.len() != n) {
        return Err(PmdError::Dimension("composite problem rows".into()));
    }
    let mu = problem.modulus();
    if !(mu > 0.0) || problem.kl_terms.iter().any(|(w, _)| !(*w > 0.0)) {
        return Err(PmdError::Parameter("composite part must have positive KL weights".into()));
    }
    let l = effective_smoothness(problem.smoothness(), mu);
    let iters = match stop {
        AgdStop::Iterations(t) => t.max(1),
        AgdStop::Accuracy(eps) => iterations_for(l, mu, eps)?,
    };
    agd_run(problem, x0_logs, iters, l)
}

/// Runs `iters` accelerated iterations with an explicit smoothness constant
/// `l`, which must be at least the smoothness of `φ`.
pub fn agd_run(problem: &CompositeProblem, x0_logs: &[f64], iters: usize, l: f64) -> Result<AgdOutcome> {
    let mu = problem.modulus();
    let terms: Vec<(f64, &[f64])> = problem
        .kl_terms
        .iter()
        .map(|(w, c)| (*w, c.as_slice()))
        .collect();
    if l == 0.0 {
        let x = kl_argmin_logs(&problem.lin, &terms);
        return Ok(AgdOutcome {
            y_logs: x.clone(),
            x_logs: x,
            iterations: 1,
            epsilon: 0.0,
            smoothness: 0.0,
            modulus: mu,
        });
    }
    let mut x = x0_logs.to_vec();
    let mut y = x0_logs.to_vec();
    for t in 1..=iters {
        let (q, r, rho) = agd_step_params(t, l, mu);
        let lower = mix_logs(&y, &x, q);
        let lower_p: Vec<f64> = lower.iter().map(|v| v.exp()).collect();
        let g: Vec<f64> = problem.smooth_gradient(&lower_p).iter().map(|v| r * v).collect();
        let mut centers: Vec<(f64, &[f64])> = Vec::with_capacity(terms.len() + 1);
        centers.push((1.0, &x));
        for (w, c) in &terms {
            centers.push((r * w, c));
        }
        let x_new = kl_argmin_logs(&g, &centers);
        y = mix_logs(&y, &x_new, rho);
        x = x_new;
    }
    Ok(AgdOutcome {
        y_logs: y,
        x_logs: x,
        iterations: iters,
        epsilon: epsilon_bound(l, mu, iters),
        smoothness: l,
        modulus: mu,
    })
}

/// Log of `(1 - w) a + w b` for log rows `a`, `b`.
fn mix_logs(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    if w >= 1.0 {
        return b.to_vec();
    }
    if w <= 0.0 {
        return a.to_vec();
    }
    let (la, lb) = ((1.0 - w).ln(), w.ln());
    let mut out: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| log_sum_exp(&[la + x, lb + y]))
        .collect();
    shift_logs(&mut out);
    out
}
