mod common;

use common::*;
use pmd_core::estimators::*;
use pmd_core::generate::{single_state, standard_instance};
use pmd_core::mdp::*;
use pmd_core::oracle::regularized_value_iteration;
use pmd_core::regularizer::Regularizer;
use pmd_core::schedule::Schedule;
use pmd_core::solvers::*;
use pmd_core::theorems::*;
use proptest::prelude::*;
use rand::Rng;
use rayon::prelude::*;

fn exact_opts(iterations: usize) -> RunOptions<'static> {
    RunOptions {
        iterations,
        keep_policies: true,
        ..Default::default()
    }
}

fn same_trajectory(a: &Trajectory, b: &Trajectory, tol: f64) -> bool {
    a.records.len() == b.records.len()
        && a.policies.iter().zip(&b.policies).all(|(p, q)| max_abs_diff(p.probs(), q.probs()) <= tol)
        && a.records.iter().zip(&b.records).all(|(x, y)| (x.objective - y.objective).abs() <= tol)
}

#[test]
fn single_action_is_stationary() {
    let mdp = single_state();
    let sched = Schedule::pmd_plain(0.5, 1.0).unwrap();
    let traj = pmd_run(&mdp, &Regularizer::zero(), &sched, &exact_opts(5)).unwrap();
    assert!(traj.records.iter().all(|r| r.objective == 2.0));
    assert!(traj.policies.iter().all(|p| p.probs() == [1.0]));
}

#[test]
fn bandit_first_step() {
    let mdp = FiniteMdp::new(1, 2, 0.5, vec![0.0, 1.0], vec![1.0, 1.0], None).unwrap();
    let sched = Schedule::pmd_plain(0.5, 1.0).unwrap();
    let traj = pmd_run(&mdp, &Regularizer::zero(), &sched, &exact_opts(1)).unwrap();
    let p = traj.policies[1].row(0);
    assert!((p[0] - 0.731059).abs() < 1e-6 && (p[1] - 0.268941).abs() < 1e-6);
}

#[test]
fn strong_convexity_is_required() {
    assert!(Schedule::pmd_strong(0.5, 0.0).is_err());
    let mdp = standard_instance(0.5);
    let sched = Schedule::pmd_strong(0.5, 0.1).unwrap();
    assert!(pmd_run(&mdp, &Regularizer::zero(), &sched, &exact_opts(1)).is_err());
    let reg = Regularizer::squared_l2(1.0);
    let mut o = ExactOracle;
    assert!(inexact_run(&mdp, &reg, &Schedule::inexact_sapmd(0.5, 3).unwrap(), &mut o, &exact_opts(1)).is_ok());
}

#[test]
fn zero_noise_matches_exact_iteration() {
    let mdp = standard_instance(0.5);
    let reg = Regularizer::scaled_kl(0.1);
    let exact = pmd_run(&mdp, &reg, &Schedule::pmd_strong(0.5, 0.1).unwrap(), &exact_opts(30)).unwrap();
    let mut quiet = SyntheticNoiseOracle::new(NoiseKind::BoundedShift, 9);
    let sched = Schedule::spmd_plain(0.5, (1.0 - 0.5) / (0.5 * 0.1), 0.0, 0.0).unwrap();
    let noisy = spmd_run(&mdp, &reg, &sched, &mut quiet, &exact_opts(30)).unwrap();
    assert!(same_trajectory(&exact, &noisy, 1e-12));
    assert!(noisy.output_index.map_or(false, |r| (1..=30).contains(&r)));
}

#[test]
fn unperturbed_schedule_through_the_approximate_driver() {
    let mdp = standard_instance(0.9);
    let reg = Regularizer::zero();
    let sched = Schedule::pmd_plain(0.9, 2.0).unwrap();
    let a = pmd_run(&mdp, &reg, &sched, &exact_opts(40)).unwrap();
    let b = apmd_run(&mdp, &reg, &sched, &exact_opts(40)).unwrap();
    assert!(same_trajectory(&a, &b, 1e-12));
}

#[test]
fn tight_inexact_prox_matches_exact_steps() {
    let mdp = standard_instance(0.5);
    let reg = Regularizer::squared_l2(1.0).plus(Regularizer::scaled_kl(0.1));
    let exact = spmd_run(&mdp, &reg, &Schedule::spmd_strong(0.5, 0.1).unwrap(), &mut ExactOracle, &exact_opts(20)).unwrap();
    let mut sched = Schedule::inexact_spmd(0.5, 0.1).unwrap();
    sched.prox_override = Some(1e-14);
    let inexact = inexact_run(&mdp, &reg, &sched, &mut ExactOracle, &exact_opts(20)).unwrap();
    assert!(same_trajectory(&exact, &inexact, 1e-6));
}

#[test]
fn advantage_input_gives_the_same_iterates() {
    let mdp = standard_instance(0.9);
    for (reg, sched) in [
        (Regularizer::scaled_kl(0.1), Schedule::pmd_strong(0.9, 0.1).unwrap()),
        (Regularizer::zero(), Schedule::apmd_epoch(0.9).unwrap()),
        (Regularizer::squared_l2(1.0).plus(Regularizer::scaled_kl(0.1)), Schedule::inexact_spmd(0.9, 0.1).unwrap()),
    ] {
        let plain = run(&mdp, &reg, &sched, &mut ExactOracle, &exact_opts(20)).unwrap();
        let opts = RunOptions {
            advantage: true,
            ..exact_opts(20)
        };
        let shifted = run(&mdp, &reg, &sched, &mut ExactOracle, &opts).unwrap();
        assert!(same_trajectory(&plain, &shifted, 1e-10), "{:?}", sched.variant);
    }
}

#[test]
fn runs_are_reproducible() {
    let mdp = standard_instance(0.5);
    let reg = Regularizer::zero();
    let sched = Schedule::sapmd(0.5, 3).unwrap();
    let go = |seed| {
        let mut o = MonteCarloOracle {
            rule: McRule::Quadratic,
            seed,
            tau0: sched.tau0,
            epoch: sched.epoch,
        };
        let opts = RunOptions {
            iterations: 6,
            seed,
            ..Default::default()
        };
        sapmd_run(&mdp, &reg, &sched, &mut o, &opts).unwrap()
    };
    let (a, b, c) = (go(1), go(1), go(2));
    let bits = |t: &Trajectory| t.records.iter().map(|r| (r.policy_hash, r.objective.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
    assert_eq!(a.total_samples, b.total_samples);
    let plain = Schedule::spmd_plain(0.5, 1.0, 0.1, 0.04).unwrap();
    let idx = |seed| {
        let mut o = SyntheticNoiseOracle::new(NoiseKind::TruncatedGaussian, seed);
        let opts = RunOptions {
            iterations: 50,
            seed,
            ..Default::default()
        };
        spmd_run(&mdp, &reg, &plain, &mut o, &opts).unwrap().output_index
    };
    assert_eq!(idx(4), idx(4));
}

#[test]
fn geometric_perturbation_bound() {
    for gamma in [0.5, 0.9] {
        let mdp = standard_instance(gamma);
        let reg = Regularizer::zero();
        let sol = regularized_value_iteration(&mdp, &reg, 1e-12).unwrap();
        for tau0 in [0.1, 1.0] {
            let sched = Schedule::apmd_geometric(gamma, tau0).unwrap();
            let opts = RunOptions {
                iterations: 100,
                reference: Some(&sol),
                ..Default::default()
            };
            let traj = apmd_run(&mdp, &reg, &sched, &opts).unwrap();
            let mut c = BoundInputs::new(traj.records[0].gap.unwrap(), gamma, 3);
            c.tau0 = tau0;
            for rec in &traj.records {
                let rhs = theorem_bound(Guarantee::ApmdGeometric, rec.k, sched.epoch, &c);
                assert!(rec.gap.unwrap() <= rhs + 1e-8, "k = {}: {} > {rhs}", rec.k, rec.gap.unwrap());
            }
        }
    }
    assert!(Schedule::apmd_geometric(0.5, 0.0).is_err());
}

#[test]
fn constant_step_stochastic_bound() {
    let gamma = 0.5;
    let mdp = standard_instance(gamma);
    let reg = Regularizer::zero();
    let sol = regularized_value_iteration(&mdp, &reg, 1e-12).unwrap();
    let (bias, msq) = (0.05, 0.01);
    let k = 40;
    for tuned in [false, true] {
        let sched = if tuned {
            Schedule::spmd_plain_tuned(gamma, 3, k, bias, msq).unwrap()
        } else {
            Schedule::spmd_plain(gamma, 1.0, bias, msq).unwrap()
        };
        let avg: Vec<f64> = (0..200u64)
            .into_par_iter()
            .map(|seed| {
                let mut o = SyntheticNoiseOracle::new(NoiseKind::BoundedShift, seed);
                let opts = RunOptions {
                    iterations: k,
                    seed,
                    reference: Some(&sol),
                    ..Default::default()
                };
                let traj = spmd_run(&mdp, &reg, &sched, &mut o, &opts).unwrap();
                let r = traj.output_index.unwrap();
                traj.records[r].gap.unwrap()
            })
            .collect();
        let (m, se) = mean_se(&avg);
        let mut c = BoundInputs::new(sol_gap(&mdp, &reg, &sol), gamma, 3);
        c.eta = sched.eta;
        c.bias = bias;
        c.msq = msq;
        let rhs = if tuned {
            spmd_plain_tuned_bound(k, &c)
        } else {
            theorem_bound(Guarantee::SpmdPlain, k, sched.epoch, &c)
        };
        assert!(m <= rhs + 3.0 * se, "tuned {tuned}: {m} > {rhs}");
    }
}

fn sol_gap(mdp: &FiniteMdp, reg: &Regularizer, sol: &pmd_core::oracle::OptimalSolution) -> f64 {
    let pi0 = Policy::uniform(mdp.n_states(), mdp.n_actions());
    weighted_objective(mdp, &pi0, reg, &sol.nu_star).unwrap() - sol.f_star
}

#[test]
fn uncertifiable_oracle_is_rejected() {
    let mdp = standard_instance(0.5);
    let reg = Regularizer::zero();
    let sched = Schedule::sapmd(0.5, 3).unwrap();
    let mut rough = MonteCarloOracle {
        rule: McRule::Linear,
        seed: 0,
        tau0: sched.tau0,
        epoch: sched.epoch,
    };
    let opts = RunOptions {
        iterations: 2,
        ..Default::default()
    };
    assert!(sapmd_run(&mdp, &reg, &sched, &mut rough, &opts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_iteration_descends(seed in seeds()) {
        let mdp = random_mdp(seed);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut r = rng(seed);
        let reg = random_regularizer(&mut r);
        let sched = if reg.strong_convexity() > 0.0 && r.gen::<bool>() {
            Schedule::pmd_strong(mdp.gamma(), reg.strong_convexity()).unwrap()
        } else {
            Schedule::pmd_plain(mdp.gamma(), r.gen_range(0.1..5.0)).unwrap()
        };
        let traj = pmd_run(&mdp, &reg, &sched, &exact_opts(15)).unwrap();
        for k in 0..15 {
            let (p, q) = (&traj.policies[k], &traj.policies[k + 1]);
            let vp = eval_policy_exact(&mdp, p, &reg, 0.0).unwrap();
            let vq = eval_policy_exact(&mdp, q, &reg, 0.0).unwrap();
            let (hp, hq) = (reg.policy_values(p), reg.policy_values(q));
            for s in 0..ns {
                prop_assert!(vq.v[s] <= vp.v[s] + 1e-10);
                let inner: f64 = (0..na).map(|a| vp.q(s, a) * (q.row(s)[a] - p.row(s)[a])).sum();
                prop_assert!(inner + hq[s] - hp[s] >= vq.v[s] - vp.v[s] - 1e-9);
            }
        }
    }
}
