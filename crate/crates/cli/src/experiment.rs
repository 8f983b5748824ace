//! Seeded runs, bound checks and their artifacts.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use pmd_core::estimators::{CtdOracle, ExactOracle, MonteCarloOracle, SyntheticNoiseOracle, ValueOracle};
use pmd_core::oracle::{regularized_value_iteration, OptimalSolution};
use pmd_core::schedule::Variant;
use pmd_core::solvers::{run, RunOptions, Trajectory};
use pmd_core::theorems::{theorem_bound, BoundInputs, Guarantee};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ctd_rule, mc_rule, noise_kind, rule_name, Experiment};

/// Accuracy of the reference solution.
pub const REFERENCE_ACCURACY: f64 = 1e-12;

/// Monotone descent is checked up to this slack.
pub const DESCENT_SLACK: f64 = 1e-10;

/// Default cap on transitions per conditional TD call.
pub const CTD_MAX_SAMPLES: f64 = 1e9;

pub const CSV_COLUMNS: [&str; 15] = [
    "seed",
    "k",
    "f",
    "gap",
    "kl",
    "lhs",
    "rhs",
    "slack",
    "eta",
    "tau",
    "bias_target",
    "msq_target",
    "prox_accuracy",
    "prox_iterations",
    "samples",
];

pub const BOUND_COLUMNS: [&str; 6] = ["k", "mean_lhs", "std_error", "rhs", "slack", "seeds"];

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub inequality: String,
    pub pass: bool,
    pub worst_slack: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub variant: String,
    pub oracle: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub epoch_length: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub f_star: f64,
    pub reference_delta: f64,
    pub final_gap: f64,
    pub final_gap_per_seed: Vec<f64>,
    pub output_index: Vec<Option<usize>>,
    pub total_samples: u64,
    /// Sum over iterations of the largest per-state accelerated iteration count.
    pub total_agd_steps: u64,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
    pub wall_seconds: f64,
}

pub struct Outcome {
    pub summary: Summary,
    pub rows: Vec<Vec<String>>,
    pub bound_rows: Vec<Vec<String>>,
}

/// Seventeen significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn guarantee(v: Variant) -> Guarantee {
    match v {
        Variant::PmdStrong => Guarantee::PmdStrong,
        Variant::PmdPlain => Guarantee::PmdPlain,
        Variant::ApmdGeometric => Guarantee::ApmdGeometric,
        Variant::ApmdEpoch => Guarantee::ApmdEpoch,
        Variant::SpmdStrong => Guarantee::SpmdStrong,
        Variant::SpmdPlain => Guarantee::SpmdPlain,
        Variant::Sapmd => Guarantee::Sapmd,
        Variant::InexactSpmd => Guarantee::InexactSpmd,
        Variant::InexactSapmd => Guarantee::InexactSapmd,
    }
}

fn inequality(g: Guarantee) -> String {
    let lhs = match g {
        _ if g.includes_divergence() => "E[f(pi_k) - f* + mu/(1-gamma) D(pi_k, pi*)]",
        Guarantee::SpmdPlain => "mean over j = 1..k of E[f(pi_j) - f*]",
        Guarantee::PmdPlain | Guarantee::ApmdGeometric | Guarantee::ApmdEpoch => "f(pi_k) - f*",
        _ => "E[f(pi_k) - f*]",
    };
    format!("{lhs} <= {} bound", g.name())
}

fn make_oracle(e: &Experiment, seed: u64) -> Result<Box<dyn ValueOracle>> {
    let s = &e.schedule;
    let o = &e.oracle;
    Ok(match o.kind.as_str() {
        "synthetic" => Box::new(SyntheticNoiseOracle::new(noise_kind(o.noise.as_deref())?, seed)),
        "mc" => Box::new(MonteCarloOracle {
            rule: mc_rule(rule_name(o.rule.as_deref())?),
            seed,
            tau0: s.tau0,
            epoch: s.epoch,
        }),
        "ctd" => Box::new(CtdOracle {
            rule: ctd_rule(rule_name(o.rule.as_deref())?),
            seed,
            epoch: s.epoch,
            tau0: s.tau0,
            max_samples: o.max_samples.unwrap_or(CTD_MAX_SAMPLES),
        }),
        _ => Box::new(ExactOracle),
    })
}

/// Left-hand sides of the bound along one trajectory.
fn bound_lhs(e: &Experiment, g: Guarantee, traj: &Trajectory) -> Vec<f64> {
    let weight = e.schedule.mu / (1.0 - e.mdp.gamma());
    let gaps: Vec<f64> = traj.records.iter().map(|r| r.gap.unwrap_or(f64::NAN)).collect();
    match g {
        Guarantee::SpmdPlain => {
            let mut acc = 0.0;
            (0..gaps.len())
                .map(|k| {
                    if k == 0 {
                        gaps[0]
                    } else {
                        acc += gaps[k];
                        acc / k as f64
                    }
                })
                .collect()
        }
        _ if g.includes_divergence() => traj
            .records
            .iter()
            .zip(&gaps)
            .map(|(r, gap)| gap + weight * r.divergence.unwrap_or(f64::NAN))
            .collect(),
        _ => gaps,
    }
}

pub fn run_experiment(e: &Experiment) -> Result<Outcome> {
    let start = Instant::now();
    let sol: OptimalSolution =
        regularized_value_iteration(&e.mdp, &e.reg, REFERENCE_ACCURACY).context("computing the reference solution")?;
    let trajectories: Vec<Trajectory> = e
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut oracle = make_oracle(e, seed)?;
            let opts = RunOptions {
                iterations: e.iterations,
                seed,
                reference: Some(&sol),
                advantage: e.advantage,
                ..Default::default()
            };
            run(&e.mdp, &e.reg, &e.schedule, oracle.as_mut(), &opts).with_context(|| format!("seed {seed}"))
        })
        .collect::<Result<_>>()?;

    let gamma = e.mdp.gamma();
    let g = guarantee(e.schedule.variant);
    let mut inputs = BoundInputs::new(trajectories[0].records[0].gap.unwrap(), gamma, e.mdp.n_actions());
    inputs.mu = e.schedule.mu;
    inputs.eta = e.schedule.eta;
    inputs.tau0 = e.schedule.tau0;
    inputs.bias = e.schedule.bias;
    inputs.msq = e.schedule.msq;
    let rhs: Vec<f64> = (0..=e.iterations)
        .map(|k| theorem_bound(g, k, e.schedule.epoch, &inputs))
        .collect();
    let lhs: Vec<Vec<f64>> = trajectories.iter().map(|t| bound_lhs(e, g, t)).collect();

    let mut rows = Vec::new();
    for ((seed, traj), lhs) in e.seeds.iter().zip(&trajectories).zip(&lhs) {
        for (r, (l, b)) in traj.records.iter().zip(lhs.iter().zip(&rhs)) {
            let st = r.step.as_ref();
            rows.push(vec![
                seed.to_string(),
                r.k.to_string(),
                fmt(r.objective),
                fmt_opt(r.gap),
                fmt_opt(r.divergence),
                fmt(*l),
                fmt(*b),
                fmt(b - l),
                fmt_opt(st.map(|s| s.eta)),
                fmt_opt(st.map(|s| s.tau)),
                fmt_opt(st.map(|s| s.bias_target)),
                fmt_opt(st.map(|s| s.msq_target)),
                fmt_opt(st.and_then(|s| s.prox_accuracy)),
                r.prox_iterations.to_string(),
                r.samples.to_string(),
            ]);
        }
    }

    let tol = e.checks.tolerance;
    let n = e.seeds.len() as f64;
    let mut checks = Vec::new();
    let mut bound_rows = Vec::new();
    if e.checks.bound {
        let mut worst = f64::INFINITY;
        for k in 0..=e.iterations {
            let xs: Vec<f64> = lhs.iter().map(|l| l[k]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let se = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            let slack = rhs[k] + 3.0 * se - mean;
            if rhs[k].is_finite() {
                worst = worst.min(if slack.is_nan() { f64::NEG_INFINITY } else { slack });
            }
            bound_rows.push(vec![k.to_string(), fmt(mean), fmt(se), fmt(rhs[k]), fmt(slack), xs.len().to_string()]);
        }
        checks.push(CheckResult {
            name: format!("bound:{}", g.name()),
            inequality: format!("{} (seed mean, 3 standard errors)", inequality(g)),
            pass: worst >= -tol,
            worst_slack: worst,
            tolerance: tol,
        });
    }
    if e.checks.descent && matches!(e.schedule.variant, Variant::PmdStrong | Variant::PmdPlain) {
        let mut worst = f64::INFINITY;
        for t in &trajectories {
            for w in t.records.windows(2) {
                for (a, b) in w[1].values.iter().zip(&w[0].values) {
                    worst = worst.min(b - a);
                }
            }
        }
        checks.push(CheckResult {
            name: "monotone_descent".into(),
            inequality: "V^{pi_(k+1)}(s) <= V^{pi_k}(s) for every s".into(),
            pass: worst >= -DESCENT_SLACK,
            worst_slack: worst,
            tolerance: DESCENT_SLACK,
        });
    }

    let finals: Vec<f64> = trajectories
        .iter()
        .map(|t| t.records.last().and_then(|r| r.gap).unwrap_or(f64::NAN))
        .collect();
    let summary = Summary {
        variant: e.schedule.variant.name().into(),
        oracle: e.oracle.kind.clone(),
        n_states: e.mdp.n_states(),
        n_actions: e.mdp.n_actions(),
        gamma,
        epoch_length: e.schedule.epoch,
        iterations: e.iterations,
        seeds: e.seeds.clone(),
        f_star: sol.f_star,
        reference_delta: sol.delta,
        final_gap: finals.iter().sum::<f64>() / n,
        final_gap_per_seed: finals,
        output_index: trajectories.iter().map(|t| t.output_index).collect(),
        total_samples: trajectories.iter().map(|t| t.total_samples).sum(),
        total_agd_steps: trajectories
            .iter()
            .flat_map(|t| t.records.iter().map(|r| r.prox_iterations as u64))
            .sum(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome {
        summary,
        rows,
        bound_rows,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<prefix>.csv`, `<prefix>_bound.csv` (when the bound check ran) and
/// `<prefix>_summary.json` into `dir`.
pub fn write_outcome(o: &Outcome, dir: &Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join(format!("{prefix}.csv")), &CSV_COLUMNS, &o.rows)?;
    if !o.bound_rows.is_empty() {
        write_csv(&dir.join(format!("{prefix}_bound.csv")), &BOUND_COLUMNS, &o.bound_rows)?;
    }
    let json = serde_json::to_string_pretty(&o.summary)?;
    std::fs::write(dir.join(format!("{prefix}_summary.json")), json + "\n")?;
    Ok(())
}
