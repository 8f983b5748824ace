//! Outer loops of the policy mirror descent family.
//!
//! Every variant shares one loop: estimate `Q^{π_k}_{τ_k}`, then take a
//! per-state proximal step. The variants differ in their [`Schedule`], in the
//! oracle they accept and in how the prox step is solved.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{PmdError, Result};
use crate::estimators::{keyed_rng, ExactOracle, ValueEstimate, ValueOracle};
use crate::mdp::{eval_policy_exact, weighted_kl, FiniteMdp, Policy, StateDistribution};
use crate::oracle::OptimalSolution;
use crate::prox::{agd_prox, pmd_prox_logs, AgdStop, CompositeProblem};
use crate::regularizer::Regularizer;
use crate::schedule::{Schedule, Step, Variant};

/// Accuracy factor used when a prox step without closed form is solved by
/// the accelerated method inside an exact variant.
pub const EXACT_PROX_ACCURACY: f64 = 1e-13;

/// Relative slack allowed between an oracle's certified levels and the targets.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

/// Run settings shared by all variants.
#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    /// Number of outer iterations `K`; records cover `π_0, …, π_K`.
    pub iterations: usize,
    pub seed: u64,
    /// Reference solution for the gap and divergence columns.
    pub reference: Option<&'a OptimalSolution>,
    /// Weights of the objective `f(π) = Σ_s w(s) V^π(s)`. Defaults to `ν*` of the
    /// reference, else uniform.
    pub weights: Option<StateDistribution>,
    /// Keep every iterate in the trajectory.
    pub keep_policies: bool,
    /// Feed the prox step `Q̂(s, a) - Σ_a' π_k(a'|s) Q̂(s, a')` instead of `Q̂`.
    /// The update is unchanged in exact arithmetic; the shift helps conditioning
    /// when values are large.
    pub advantage: bool,
}

/// Diagnostics of one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `f(π_k)`.
    pub objective: f64,
    /// `f(π_k) - f*`, when a reference is available.
    pub gap: Option<f64>,
    /// `D(π_k, π*) = Σ_s ν*(s) KL(π*(·|s) ‖ π_k(·|s))`, when a reference is available.
    pub divergence: Option<f64>,
    /// `V^{π_k}(s)`.
    pub values: Vec<f64>,
    /// Parameters of the step leaving `π_k`; `None` for the final record.
    pub step: Option<Step>,
    /// Certified `(ς, σ²)` of the estimate used by that step.
    pub certified: Option<(f64, f64)>,
    pub samples: u64,
    /// Largest accelerated iteration count over states (0 for closed-form steps).
    pub prox_iterations: usize,
    pub policy_hash: u64,
    pub wall_seconds: f64,
}

/// Result of a run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub variant: Variant,
    pub records: Vec<IterationRecord>,
    pub final_policy: Policy,
    /// `π_0, …, π_K` when requested.
    pub policies: Vec<Policy>,
    /// Random output index `R` uniform on `1..=K`, for the constant-step stochastic method.
    pub output_index: Option<usize>,
    pub total_samples: u64,
}

impl Trajectory {
    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.gap).collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }
}

/// Exact policy mirror descent (strongly convex or constant step).
pub fn pmd_run(mdp: &FiniteMdp, reg: &Regularizer, schedule: &Schedule, opts: &RunOptions) -> Result<Trajectory> {
    expect_variant(schedule, &[Variant::PmdStrong, Variant::PmdPlain])?;
    run(mdp, reg, schedule, &mut ExactOracle, opts)
}

/// Approximate policy mirror descent with exact perturbed values.
///
/// Any deterministic schedule is accepted; with `τ_k = 0` this is [`pmd_run`].
pub fn apmd_run(mdp: &FiniteMdp, reg: &Regularizer, schedule: &Schedule, opts: &RunOptions) -> Result<Trajectory> {
    if schedule.variant.is_stochastic() {
        return Err(PmdError::Schedule(format!(
            "{} is a stochastic schedule",
            schedule.variant.name()
        )));
    }
    run(mdp, reg, schedule, &mut ExactOracle, opts)
}

/// Stochastic policy mirror descent.
pub fn spmd_run(
    mdp: &FiniteMdp,
    reg: &Regularizer,
    schedule: &Schedule,
    oracle: &mut dyn ValueOracle,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(schedule, &[Variant::SpmdStrong, Variant::SpmdPlain])?;
    run(mdp, reg, schedule, oracle, opts)
}

/// Stochastic approximate policy mirror descent; the last iterate is the output.
pub fn sapmd_run(
    mdp: &FiniteMdp,
    reg: &Regularizer,
    schedule: &Schedule,
    oracle: &mut dyn ValueOracle,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(schedule, &[Variant::Sapmd])?;
    run(mdp, reg, schedule, oracle, opts)
}

/// Stochastic methods whose prox steps are solved by a fixed number of
/// accelerated iterations started at `π_0`.
pub fn inexact_run(
    mdp: &FiniteMdp,
    reg: &Regularizer,
    schedule: &Schedule,
    oracle: &mut dyn ValueOracle,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(schedule, &[Variant::InexactSpmd, Variant::InexactSapmd])?;
    run(mdp, reg, schedule, oracle, opts)
}

fn expect_variant(schedule: &Schedule, allowed: &[Variant]) -> Result<()> {
    if allowed.contains(&schedule.variant) {
        Ok(())
    } else {
        Err(PmdError::Schedule(format!(
            "schedule {} does not fit this method",
            schedule.variant.name()
        )))
    }
}

/// The shared outer loop; dispatches on the schedule's variant.
pub fn run(
    mdp: &FiniteMdp,
    reg: &Regularizer,
    schedule: &Schedule,
    oracle: &mut dyn ValueOracle,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    reg.validate(ns, na)?;
    if (schedule.gamma - mdp.gamma()).abs() > 1e-15 {
        return Err(PmdError::Schedule(format!(
            "schedule built for gamma = {}, MDP has {}",
            schedule.gamma,
            mdp.gamma()
        )));
    }
    if schedule.mu > reg.strong_convexity() * (1.0 + 1e-12) {
        return Err(PmdError::Schedule(format!(
            "schedule assumes mu = {}, regularizer has {}",
            schedule.mu,
            reg.strong_convexity()
        )));
    }
    let weights = match (&opts.weights, opts.reference) {
        (Some(w), _) => w.clone(),
        (None, Some(r)) => r.nu_star.clone(),
        (None, None) => StateDistribution {
            weights: vec![1.0 / ns as f64; ns],
        },
    };
    if weights.weights.len() != ns {
        return Err(PmdError::Dimension("objective weights".into()));
    }
    let start = Instant::now();
    let pi0 = Policy::uniform(ns, na);
    let mut pi = pi0.clone();
    let mut center = pi0.log_probs().to_vec();
    let mut records: Vec<IterationRecord> = Vec::with_capacity(opts.iterations + 1);
    let mut policies = Vec::new();
    let mut total_samples = 0;
    for k in 0..=opts.iterations {
        let values = eval_policy_exact(mdp, &pi, reg, 0.0)?.v;
        let objective = weights.expect(&values);
        if !objective.is_finite() {
            return Err(PmdError::Certification(format!("objective is {objective} at k = {k}")));
        }
        let mut record = IterationRecord {
            k,
            objective,
            gap: opts.reference.map(|r| objective - r.f_star),
            divergence: opts.reference.map(|r| weighted_kl(&r.pi_star, &pi, &r.nu_star)),
            values,
            step: None,
            certified: None,
            samples: 0,
            prox_iterations: 0,
            policy_hash: pi.fingerprint(),
            wall_seconds: 0.0,
        };
        if opts.keep_policies {
            policies.push(pi.clone());
        }
        if k == opts.iterations {
            record.wall_seconds = start.elapsed().as_secs_f64();
            records.push(record);
            break;
        }
        let step = schedule.step(k);
        let est = oracle.estimate(mdp, &pi, reg, step.tau, &step)?;
        certify(schedule.variant, &step, &est)?;
        let q = if opts.advantage { centered(&est.q, &pi, na) } else { est.q.clone() };
        let (next, next_center, iters) = if schedule.variant.is_inexact() {
            inexact_step(&q, &pi0, &center, &step, reg, na)?
        } else {
            let (p, it) = exact_step(&q, &pi, &step, reg, na)?;
            let c = p.log_probs().to_vec();
            (p, c, it)
        };
        total_samples += est.samples;
        record.step = Some(step);
        record.certified = Some((est.bias_bound, est.msq_bound));
        record.samples = est.samples;
        record.prox_iterations = iters;
        record.wall_seconds = start.elapsed().as_secs_f64();
        records.push(record);
        pi = next;
        center = next_center;
    }
    let output_index = if schedule.variant == Variant::SpmdPlain && opts.iterations > 0 {
        Some(keyed_rng(&[opts.seed, 0x0a7]).gen_range(1..=opts.iterations))
    } else {
        None
    };
    Ok(Trajectory {
        variant: schedule.variant,
        records,
        final_policy: pi,
        policies,
        output_index,
        total_samples,
    })
}

fn certify(variant: Variant, step: &Step, est: &ValueEstimate) -> Result<()> {
    let within = |have: f64, want: f64| have <= want * (1.0 + CERTIFICATE_SLACK) + f64::MIN_POSITIVE;
    if !variant.is_stochastic() {
        if est.bias_bound != 0.0 || est.msq_bound != 0.0 {
            return Err(PmdError::Certification(format!(
                "{} needs exact values",
                variant.name()
            )));
        }
        return Ok(());
    }
    if !within(est.bias_bound, step.bias_target) || !within(est.msq_bound, step.msq_target) {
        return Err(PmdError::Certification(format!(
            "oracle certifies bias {} and msq {} at k = {}, targets are {} and {}",
            est.bias_bound, est.msq_bound, step.k, step.bias_target, step.msq_target
        )));
    }
    Ok(())
}

/// Subtracts the `π`-average from every row of `q`.
fn centered(q: &[f64], pi: &Policy, na: usize) -> Vec<f64> {
    let mut out = q.to_vec();
    for (s, row) in out.chunks_mut(na).enumerate() {
        let m: f64 = row.iter().zip(pi.row(s)).map(|(x, p)| x * p).sum();
        row.iter_mut().for_each(|x| *x -= m);
    }
    out
}

/// Per-state problem `η⟨q, p⟩ + η h(s, p) + ητ KL(p ‖ π0) + KL(p ‖ center)` in composite form.
fn composite(q_row: &[f64], center: &[f64], step: &Step, reg: &Regularizer, s: usize) -> CompositeProblem {
    let na = q_row.len();
    let eta = step.eta;
    let mut kl_terms = vec![(1.0, center.to_vec())];
    for (w, c) in reg.kl_centers(s, na) {
        kl_terms.push((eta * w, c));
    }
    if step.tau > 0.0 {
        kl_terms.push((eta * step.tau, vec![-(na as f64).ln(); na]));
    }
    let lw = reg.smooth_weight();
    CompositeProblem {
        lin: q_row.iter().map(|x| eta * x).collect(),
        hessian: (lw > 0.0).then(|| DMatrix::identity(na, na) * (eta * lw)),
        kl_terms,
    }
}

fn exact_step(q: &[f64], pi: &Policy, step: &Step, reg: &Regularizer, na: usize) -> Result<(Policy, usize)> {
    let ns = pi.n_states();
    let mut logs = Vec::with_capacity(ns * na);
    let mut iters = 0;
    for s in 0..ns {
        let q_row = &q[s * na..][..na];
        if reg.is_closed_form() {
            logs.extend(pmd_prox_logs(q_row, pi.log_row(s), step.eta, reg, s, step.tau)?);
        } else {
            let problem = composite(q_row, pi.log_row(s), step, reg, s);
            let out = agd_prox(&problem, pi.log_row(s), AgdStop::Accuracy(EXACT_PROX_ACCURACY))?;
            iters = iters.max(out.iterations);
            logs.extend(out.y_logs);
        }
    }
    Ok((Policy::from_log_rows(ns, na, logs), iters))
}

fn inexact_step(
    q: &[f64],
    pi0: &Policy,
    center: &[f64],
    step: &Step,
    reg: &Regularizer,
    na: usize,
) -> Result<(Policy, Vec<f64>, usize)> {
    let eps = step
        .prox_accuracy
        .ok_or_else(|| PmdError::Schedule("inexact step without a prox accuracy".into()))?;
    let ns = pi0.n_states();
    let mut ys = Vec::with_capacity(ns * na);
    let mut xs = Vec::with_capacity(ns * na);
    let mut iters = 0;
    for s in 0..ns {
        let problem = composite(&q[s * na..][..na], &center[s * na..][..na], step, reg, s);
        let out = agd_prox(&problem, pi0.log_row(s), AgdStop::Accuracy(eps))?;
        iters = iters.max(out.iterations);
        ys.extend(out.y_logs);
        xs.extend(out.x_logs);
    }
    Ok((Policy::from_log_rows(ns, na, ys), xs, iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::single_state;

    #[test]
    fn single_action_is_constant() {
        let m = single_state();
        let s = Schedule::pmd_plain(0.5, 1.0).unwrap();
        let t = pmd_run(
            &m,
            &Regularizer::zero(),
            &s,
            &RunOptions {
                iterations: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.records.len(), 6);
        assert!(t.objectives().iter().all(|f| (f - 2.0).abs() < 1e-14));
    }

    #[test]
    fn bandit_first_step() {
        let m = FiniteMdp::new(1, 2, 0.5, vec![0.0, 1.0], vec![1.0, 1.0], None).unwrap();
        let s = Schedule::pmd_plain(0.5, 1.0).unwrap();
        let opts = RunOptions {
            iterations: 1,
            keep_policies: true,
            ..Default::default()
        };
        let t = pmd_run(&m, &Regularizer::zero(), &s, &opts).unwrap();
        let p = t.policies[1].row(0);
        assert!((p[0] - 0.731059).abs() < 1e-6 && (p[1] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn mismatched_schedule_is_rejected() {
        let m = single_state();
        let s = Schedule::pmd_strong(0.5, 0.1).unwrap();
        let opts = RunOptions::default();
        assert!(pmd_run(&m, &Regularizer::zero(), &s, &opts).is_err());
        let sp = Schedule::spmd_strong(0.5, 0.1).unwrap();
        assert!(pmd_run(&m, &Regularizer::scaled_kl(0.1), &sp, &opts).is_err());
    }
}
