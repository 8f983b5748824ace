//! Invariant suites behind `pmd check`.

use pmd_core::estimators::{
    bellman_apply, keyed_rng, mc_estimate, mc_schedule, step_cost_bound, McRule, NoiseKind, SyntheticNoiseOracle,
};
use pmd_core::generate::{generate, standard_instance, GeneratorSpec};
use pmd_core::mdp::{
    advantage, discounted_visitation, eval_policy_exact, kl_divergence, stationary_distribution, FiniteMdp, Policy,
};
use pmd_core::oracle::regularized_value_iteration;
use pmd_core::prox::{agd_run, entropy_prox, iterations_for, pmd_prox_closed, CompositeProblem};
use pmd_core::regularizer::Regularizer;
use pmd_core::schedule::{epoch_length, Schedule};
use pmd_core::solvers::{pmd_run, RunOptions};
use pmd_core::theorems::{recursion_bound, recursion_worst_case, theorem_bound, BoundInputs, Guarantee};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Identities,
    Estimators,
    Prox,
    Solvers,
}

/// One invariant: `measured <= threshold` passes, or `measured >= threshold`
/// when `lower` is set.
#[derive(Clone, Debug, Serialize)]
pub struct Line {
    pub invariant: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub lower: bool,
    pub pass: bool,
}

fn at_most(invariant: &'static str, measured: f64, threshold: f64) -> Line {
    Line {
        invariant,
        measured,
        threshold,
        lower: false,
        pass: measured <= threshold,
    }
}

fn at_least(invariant: &'static str, measured: f64, threshold: f64) -> Line {
    Line {
        invariant,
        measured,
        threshold,
        lower: true,
        pass: measured >= threshold,
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Line> {
    match suite {
        Suite::Identities => identities(seed),
        Suite::Estimators => estimators(seed),
        Suite::Prox => prox(seed),
        Suite::Solvers => solvers(seed),
    }
}

fn rng(seed: u64, i: u64, tag: u64) -> ChaCha8Rng {
    keyed_rng(&[seed, i, tag])
}

fn random_mdp(r: &mut ChaCha8Rng) -> FiniteMdp {
    let spec = GeneratorSpec::new(r.gen(), r.gen_range(2..=8), r.gen_range(2..=4), r.gen_range(0.3..0.95))
        .with_sparsity(r.gen_range(0.0..0.7))
        .with_costs(-1.0, 1.0);
    generate(&spec).expect("valid spec")
}

fn random_policy(r: &mut ChaCha8Rng, ns: usize, na: usize) -> Policy {
    let logits = (0..ns * na).map(|_| r.gen_range(-3.0..3.0)).collect();
    Policy::from_logits(ns, na, logits).expect("finite logits")
}

fn random_regularizer(r: &mut ChaCha8Rng) -> Regularizer {
    let w = r.gen_range(0.05..1.0);
    match r.gen_range(0..4) {
        0 => Regularizer::zero(),
        1 => Regularizer::scaled_kl(w),
        2 => Regularizer::negative_entropy(w),
        _ => Regularizer::scaled_kl(w).plus(Regularizer::squared_l2(w)),
    }
}

fn max_of(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, f64::max)
}

fn min_of(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(f64::INFINITY, f64::min)
}

fn identities(seed: u64) -> Vec<Line> {
    let per: Vec<[f64; 4]> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(seed, i, 1);
            let mdp = random_mdp(&mut r);
            let (ns, na) = (mdp.n_states(), mdp.n_actions());
            let reg = random_regularizer(&mut r);
            let (pi, pi2) = (random_policy(&mut r, ns, na), random_policy(&mut r, ns, na));
            let g = mdp.gamma();
            let vals = eval_policy_exact(&mdp, &pi, &reg, 0.0).unwrap();
            let vals2 = eval_policy_exact(&mdp, &pi2, &reg, 0.0).unwrap();
            let adv = advantage(&vals);
            let (h, h2) = (reg.policy_values(&pi), reg.policy_values(&pi2));
            let mut pd = 0.0f64;
            let mut mass = 0.0f64;
            for s in 0..ns {
                let d = discounted_visitation(&mdp, &pi2, s).unwrap();
                mass = mass.max((d.weights.iter().sum::<f64>() - 1.0).abs());
                let rhs: f64 = (0..ns)
                    .map(|t| {
                        let inner: f64 = (0..na).map(|a| adv[t * na + a] * pi2.row(t)[a]).sum();
                        d.weights[t] * (inner + h2[t] - h[t])
                    })
                    .sum::<f64>()
                    / (1.0 - g);
                pd = pd.max((vals2.v[s] - vals.v[s] - rhs).abs());
            }
            let avg = max_of((0..ns).map(|s| {
                let m: f64 = (0..na).map(|a| pi.row(s)[a] * vals.q(s, a)).sum();
                (m - vals.v[s]).abs()
            }));
            let nu = stationary_distribution(&mdp, &pi).unwrap();
            let kernel = mdp.policy_kernel(pi.probs());
            let inv = max_of((0..ns).map(|t| {
                let x: f64 = (0..ns).map(|s| nu.weights[s] * kernel[(s, t)]).sum();
                (x - nu.weights[t]).abs()
            }));
            [pd, avg, mass, inv]
        })
        .collect();
    vec![
        at_most("performance difference residual", max_of(per.iter().map(|p| p[0])), 1e-8),
        at_most("V = sum_a pi Q residual", max_of(per.iter().map(|p| p[1])), 1e-10),
        at_most("visitation mass defect", max_of(per.iter().map(|p| p[2])), 1e-12),
        at_most("stationarity residual", max_of(per.iter().map(|p| p[3])), 1e-12),
    ]
}

fn estimators(seed: u64) -> Vec<Line> {
    let mut contraction = f64::INFINITY;
    for i in 0..50 {
        let mut r = rng(seed, i, 2);
        let mdp = random_mdp(&mut r);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let reg = random_regularizer(&mut r);
        let pi = random_policy(&mut r, ns, na);
        let a: Vec<f64> = (0..ns * na).map(|_| r.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..ns * na).map(|_| r.gen_range(-5.0..5.0)).collect();
        let ta = bellman_apply(&mdp, &pi, &reg, &a).unwrap();
        let tb = bellman_apply(&mdp, &pi, &reg, &b).unwrap();
        let sup = |x: &[f64], y: &[f64]| max_of(x.iter().zip(y).map(|(u, v)| (u - v).abs()));
        contraction = contraction.min(mdp.gamma() * sup(&a, &b) - sup(&ta, &tb));
    }

    let mdp = standard_instance(0.5);
    let reg = Regularizer::zero();
    let pi = Policy::uniform(mdp.n_states(), mdp.n_actions());
    let q = eval_policy_exact(&mdp, &pi, &reg, 0.0).unwrap().q;
    let n = q.len();

    let noise = SyntheticNoiseOracle::new(NoiseKind::TruncatedGaussian, seed);
    let (bias, msq) = (0.1, 0.04);
    let draws: Vec<Vec<f64>> = (0..2000)
        .map(|k| noise.perturb(&q, mdp.n_actions(), bias, msq, k).unwrap().q)
        .collect();
    let (syn_bias, syn_msq) = empirical(&draws, &q);
    let half_width = (msq.sqrt() - bias) * 3.0 / (draws.len() as f64).sqrt();

    let l = epoch_length(0.5);
    let params = mc_schedule(0, 0.5, step_cost_bound(&mdp, &reg, 0.0), l, McRule::Linear).unwrap();
    let runs: Vec<(Vec<f64>, f64, f64)> = (0..40u64)
        .into_par_iter()
        .map(|j| {
            let est = mc_estimate(&mdp, &pi, &reg, 0.0, params, seed ^ (j << 20), 0).unwrap();
            (est.q, est.bias_bound, est.msq_bound)
        })
        .collect();
    let mc_draws: Vec<Vec<f64>> = runs.iter().map(|r| r.0.clone()).collect();
    let (mc_bias, mc_msq) = empirical(&mc_draws, &q);
    let spread = max_of((0..n).map(|i| {
        let xs: Vec<f64> = mc_draws.iter().map(|d| d[i]).collect();
        std_error(&xs)
    }));
    let (cert_bias, cert_msq) = (runs[0].1, runs[0].2);
    vec![
        at_least("Bellman contraction margin", contraction, -1e-12),
        at_most("synthetic bias over certificate", syn_bias - bias, half_width),
        at_most("synthetic mean-square error over certificate", syn_msq - msq, 0.0),
        at_most("rollout bias over certificate", mc_bias - cert_bias, 3.0 * spread),
        at_most("rollout mean-square error over certificate", mc_msq / cert_msq, 1.0),
    ]
}

/// Sup-norm of the mean error and mean squared sup-norm error.
fn empirical(draws: &[Vec<f64>], q: &[f64]) -> (f64, f64) {
    let m = draws.len() as f64;
    let bias = max_of((0..q.len()).map(|i| (draws.iter().map(|d| d[i]).sum::<f64>() / m - q[i]).abs()));
    let msq = draws
        .iter()
        .map(|d| max_of(d.iter().zip(q).map(|(a, b)| (a - b).abs())).powi(2))
        .sum::<f64>()
        / m;
    (bias, msq)
}

fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

fn prox(seed: u64) -> Vec<Line> {
    let mut agree = 0.0f64;
    let mut three_point = f64::INFINITY;
    let mut shift = 0.0f64;
    for i in 0..100 {
        let mut r = rng(seed, i, 3);
        let na = r.gen_range(2..8);
        let q: Vec<f64> = (0..na).map(|_| r.gen_range(-3.0..3.0)).collect();
        let base = random_policy(&mut r, 1, na).row(0).to_vec();
        let eta = r.gen_range(0.1..5.0);
        let w = r.gen_range(0.05..2.0);
        let reg = Regularizer::scaled_kl(w);
        let closed = pmd_prox_closed(&q, &base, eta, &reg, 0, 0.0).unwrap();
        // Zero curvature block forces the accelerated path on the same step.
        let lu = -(na as f64).ln();
        let problem = CompositeProblem {
            lin: q.iter().map(|v| eta * v).collect(),
            hessian: Some(nalgebra::DMatrix::zeros(na, na)),
            kl_terms: vec![(1.0, base.iter().map(|v| v.ln()).collect()), (eta * w, vec![lu; na])],
        };
        let l = 4.0 * problem.modulus();
        let t = iterations_for(l, problem.modulus(), 1e-10).unwrap();
        let out = agd_run(&problem, &vec![lu; na], t, l).unwrap();
        agree = agree.max(max_of(out.y_logs.iter().zip(&closed).map(|(y, c)| (y.exp() - c).abs())));

        let hp = reg.value(0, &closed).unwrap();
        for _ in 0..20 {
            let p = random_policy(&mut r, 1, na).row(0).to_vec();
            let lin: f64 = q.iter().zip(closed.iter().zip(&p)).map(|(g, (a, b))| g * (a - b)).sum();
            let lhs = eta * (lin + hp - reg.value(0, &p).unwrap()) + kl_divergence(&closed, &base).unwrap();
            let rhs = kl_divergence(&p, &base).unwrap() - (1.0 + eta * w) * kl_divergence(&p, &closed).unwrap();
            three_point = three_point.min(rhs - lhs);
        }

        let c = r.gen_range(-10.0..10.0);
        let a = entropy_prox(&q, &base, eta).unwrap();
        let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
        let b = entropy_prox(&shifted, &base, eta).unwrap();
        shift = shift.max(max_of(a.iter().zip(&b).map(|(x, y)| (x - y).abs())));
    }
    vec![
        at_most("closed form vs accelerated", agree, 1e-6),
        at_least("three-point inequality slack", three_point, -1e-9),
        at_most("shift invariance", shift, 1e-12),
    ]
}

fn solvers(seed: u64) -> Vec<Line> {
    let per: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(seed, i, 4);
            let mdp = random_mdp(&mut r);
            let (ns, na) = (mdp.n_states(), mdp.n_actions());
            let reg = random_regularizer(&mut r);
            let sched = Schedule::pmd_plain(mdp.gamma(), r.gen_range(0.1..5.0)).unwrap();
            let opts = RunOptions {
                iterations: 15,
                keep_policies: true,
                ..Default::default()
            };
            let traj = pmd_run(&mdp, &reg, &sched, &opts).unwrap();
            let mut descent = f64::INFINITY;
            let mut estimate = f64::INFINITY;
            for w in traj.policies.windows(2) {
                let (p, q) = (&w[0], &w[1]);
                let vp = eval_policy_exact(&mdp, p, &reg, 0.0).unwrap();
                let vq = eval_policy_exact(&mdp, q, &reg, 0.0).unwrap();
                let (hp, hq) = (reg.policy_values(p), reg.policy_values(q));
                for s in 0..ns {
                    descent = descent.min(vp.v[s] - vq.v[s]);
                    let inner: f64 = (0..na).map(|a| vp.q(s, a) * (q.row(s)[a] - p.row(s)[a])).sum();
                    estimate = estimate.min(inner + hq[s] - hp[s] - (vq.v[s] - vp.v[s]));
                }
            }
            (descent, estimate)
        })
        .collect();

    let mut recursion = f64::INFINITY;
    for i in 0..50 {
        let mut r = rng(seed, i, 5);
        let (x0, y, z) = (r.gen_range(0.0..10.0), r.gen_range(0.0..10.0), r.gen_range(0.0..10.0));
        let gamma = r.gen_range(0.1..0.99);
        let l = epoch_length(gamma);
        let xs = recursion_worst_case(x0, y, z, gamma, l, 1000);
        for (k, x) in xs.iter().enumerate() {
            let b = recursion_bound(x0, y, z, gamma, l, k);
            recursion = recursion.min((b - x) / b.max(1e-300));
        }
    }

    let (gamma, mu) = (0.9, 0.1);
    let mdp = standard_instance(gamma);
    let reg = Regularizer::scaled_kl(mu);
    let sol = regularized_value_iteration(&mdp, &reg, 1e-12).unwrap();
    let sched = Schedule::pmd_strong(gamma, mu).unwrap();
    let opts = RunOptions {
        iterations: 120,
        reference: Some(&sol),
        ..Default::default()
    };
    let traj = pmd_run(&mdp, &reg, &sched, &opts).unwrap();
    let mut c = BoundInputs::new(traj.records[0].gap.unwrap(), gamma, mdp.n_actions());
    c.mu = mu;
    let linear = min_of(traj.records.iter().map(|rec| {
        let lhs = rec.gap.unwrap() + mu / (1.0 - gamma) * rec.divergence.unwrap();
        theorem_bound(Guarantee::PmdStrong, rec.k, sched.epoch, &c) - lhs
    }));
    vec![
        at_least("monotone descent margin", min_of(per.iter().map(|p| p.0)), -1e-10),
        at_least("descent estimate margin", min_of(per.iter().map(|p| p.1)), -1e-9),
        at_least("recursion bound relative margin", recursion, -1e-12),
        at_least("strongly convex linear-rate slack", linear, -1e-8),
    ]
}
