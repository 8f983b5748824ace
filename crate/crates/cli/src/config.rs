//! Experiment configuration, read from a TOML document.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pmd_core::estimators::{CtdRule, McRule, NoiseKind};
use pmd_core::generate::{self, GeneratorSpec, MdpFile};
use pmd_core::mdp::FiniteMdp;
use pmd_core::regularizer::Regularizer;
use pmd_core::schedule::{Schedule, Variant};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    #[serde(default)]
    pub regularizer: Vec<RegTermSpec>,
    pub solver: SolverSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub checks: CheckSpec,
}

/// Exactly one of `file`, `generate` or `named`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    pub file: Option<PathBuf>,
    pub generate: Option<GeneratorSpec>,
    /// `single_state`, `two_cycle` or `standard`.
    pub named: Option<String>,
    /// Discount for `standard`, or an override for the other sources.
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegTermSpec {
    /// `scaled_kl`, `negative_entropy` or `squared_l2`.
    pub kind: String,
    pub weight: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub variant: String,
    pub iterations: usize,
    /// Strong convexity modulus; defaults to that of the regularizer.
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub tau0: Option<f64>,
    pub bias: Option<f64>,
    pub msq: Option<f64>,
    /// Tune the constant step of `spmd_plain` to the horizon.
    #[serde(default)]
    pub tuned: bool,
    /// Replaces the prescribed inner accuracy of the inexact variants.
    pub prox_accuracy: Option<f64>,
    /// Pass advantages rather than action values to the prox step.
    #[serde(default)]
    pub advantage: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// `exact`, `mc`, `ctd` or `synthetic`.
    #[serde(default = "default_oracle")]
    pub kind: String,
    /// Sample-size rule of `mc` and `ctd`: `linear` or `quadratic`.
    pub rule: Option<String>,
    /// Noise shape of `synthetic`: `bounded_shift` or `truncated_gaussian`.
    pub noise: Option<String>,
    /// Cap on transitions per `ctd` call.
    pub max_samples: Option<f64>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            kind: default_oracle(),
            rule: None,
            noise: None,
            max_samples: None,
        }
    }
}

fn default_oracle() -> String {
    "exact".into()
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub prefix: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// Compare every record against the variant's convergence bound.
    #[serde(default = "yes")]
    pub bound: bool,
    /// Per-state monotone descent of exact iterations.
    #[serde(default = "yes")]
    pub descent: bool,
    /// Allowed negative slack.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            bound: true,
            descent: true,
            tolerance: default_tolerance(),
        }
    }
}

fn yes() -> bool {
    true
}

fn default_tolerance() -> f64 {
    1e-8
}

/// Line (1-based) of the first assignment to `key` in `text`, if any.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .map_or(false, |rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Error prefixed with the line of `key` when it appears in the source.
fn at(text: &str, key: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    match line_of(text, key) {
        Some(n) => anyhow!("line {n}: {key}: {msg}"),
        None => anyhow!("{key}: {msg}"),
    }
}

/// A validated configuration ready to run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub mdp: FiniteMdp,
    pub reg: Regularizer,
    pub schedule: Schedule,
    pub iterations: usize,
    pub advantage: bool,
    pub oracle: OracleSpec,
    pub seeds: Vec<u64>,
    pub checks: CheckSpec,
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("{e}"))
    }

    /// Loads the MDP, builds the schedule and checks their compatibility.
    /// `base` resolves a relative MDP path.
    pub fn validate(self, text: &str, base: &Path) -> Result<Experiment> {
        let mdp = self.load_mdp(text, base)?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut reg = Regularizer::zero();
        for t in &self.regularizer {
            let term = match t.kind.as_str() {
                "scaled_kl" => Regularizer::scaled_kl(t.weight),
                "negative_entropy" => Regularizer::negative_entropy(t.weight),
                "squared_l2" => Regularizer::squared_l2(t.weight),
                other => return Err(at(text, "kind", format!("unknown regularizer '{other}'"))),
            };
            reg = reg.plus(term);
        }
        reg.validate(ns, na).map_err(|e| at(text, "weight", e))?;
        let schedule = self.schedule(text, &mdp, &reg)?;
        if schedule.variant.is_inexact() && reg.smoothness().is_none() {
            return Err(at(text, "variant", "inexact variants need a smooth regularizer"));
        }
        self.check_oracle(text, &schedule)?;
        if self.solver.iterations == 0 {
            return Err(at(text, "iterations", "must be at least 1"));
        }
        if !(self.checks.tolerance >= 0.0) {
            return Err(at(text, "tolerance", "must be >= 0"));
        }
        let seeds = if self.seeds.is_empty() { vec![0] } else { self.seeds };
        Ok(Experiment {
            mdp,
            reg,
            schedule,
            iterations: self.solver.iterations,
            advantage: self.solver.advantage,
            oracle: self.oracle,
            seeds,
            checks: self.checks,
            output: self.output,
        })
    }

    fn load_mdp(&self, text: &str, base: &Path) -> Result<FiniteMdp> {
        let src = &self.mdp;
        let given = [src.file.is_some(), src.generate.is_some(), src.named.is_some()];
        if given.iter().filter(|b| **b).count() != 1 {
            bail!("[mdp] needs exactly one of file, generate or named");
        }
        let mdp = if let Some(f) = &src.file {
            let path = if f.is_absolute() { f.clone() } else { base.join(f) };
            load_mdp_file(&path).map_err(|e| at(text, "file", format!("{e:#}")))?
        } else if let Some(spec) = &src.generate {
            generate::generate(spec).map_err(|e| at(text, "generate", e))?
        } else {
            match src.named.as_deref().unwrap() {
                "single_state" => generate::single_state(),
                "two_cycle" => generate::two_cycle(),
                "standard" => generate::standard_instance(src.gamma.unwrap_or(0.5)),
                other => return Err(at(text, "named", format!("unknown instance '{other}'"))),
            }
        };
        match src.gamma {
            Some(g) if g != mdp.gamma() => mdp.with_gamma(g).map_err(|e| at(text, "gamma", e)),
            _ => Ok(mdp),
        }
    }

    fn schedule(&self, text: &str, mdp: &FiniteMdp, reg: &Regularizer) -> Result<Schedule> {
        let s = &self.solver;
        let g = mdp.gamma();
        let na = mdp.n_actions();
        let name = if s.variant == "inexact_spmd_strong" { "inexact_spmd" } else { s.variant.as_str() };
        let variant = Variant::from_name(name)
            .ok_or_else(|| at(text, "variant", format!("unknown variant '{}'", s.variant)))?;
        let mu = s.mu.unwrap_or_else(|| reg.strong_convexity());
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| at(text, "variant", format!("{} needs {key}", s.variant)));
        let built = match variant {
            Variant::PmdStrong => Schedule::pmd_strong(g, mu),
            Variant::PmdPlain => Schedule::pmd_plain(g, need(s.eta, "eta")?),
            Variant::ApmdGeometric => Schedule::apmd_geometric(g, need(s.tau0, "tau0")?),
            Variant::ApmdEpoch => Schedule::apmd_epoch(g),
            Variant::SpmdStrong => Schedule::spmd_strong(g, mu),
            Variant::SpmdPlain => {
                let (bias, msq) = (s.bias.unwrap_or(0.0), s.msq.unwrap_or(0.0));
                if s.tuned {
                    Schedule::spmd_plain_tuned(g, na, s.iterations, bias, msq)
                } else {
                    Schedule::spmd_plain(g, need(s.eta, "eta")?, bias, msq)
                }
            }
            Variant::Sapmd => Schedule::sapmd(g, na),
            Variant::InexactSpmd => Schedule::inexact_spmd(g, mu),
            Variant::InexactSapmd => Schedule::inexact_sapmd(g, na),
        };
        let mut schedule = built.map_err(|e| at(text, "variant", e))?;
        if schedule.mu > reg.strong_convexity() * (1.0 + 1e-12) {
            return Err(at(
                text,
                if s.mu.is_some() { "mu" } else { "variant" },
                format!("{} needs mu = {} but the regularizer has {}", s.variant, schedule.mu, reg.strong_convexity()),
            ));
        }
        if let Some(eps) = s.prox_accuracy {
            if !variant.is_inexact() {
                return Err(at(text, "prox_accuracy", "only the inexact variants take an inner accuracy"));
            }
            if !(eps > 0.0) {
                return Err(at(text, "prox_accuracy", "must be > 0"));
            }
            schedule.prox_override = Some(eps);
        }
        Ok(schedule)
    }

    fn check_oracle(&self, text: &str, schedule: &Schedule) -> Result<()> {
        let o = &self.oracle;
        match o.kind.as_str() {
            "exact" => {}
            "synthetic" => {
                noise_kind(o.noise.as_deref()).map_err(|e| at(text, "noise", e))?;
            }
            "mc" | "ctd" => {
                rule_name(o.rule.as_deref()).map_err(|e| at(text, "rule", e))?;
            }
            other => return Err(at(text, "kind", format!("unknown oracle '{other}'"))),
        }
        if o.kind != "exact" && !schedule.variant.is_stochastic() {
            return Err(at(
                text,
                "kind",
                format!("{} evaluates exactly; use the exact oracle", schedule.variant.name()),
            ));
        }
        Ok(())
    }
}

pub fn load_mdp_file(path: &Path) -> Result<FiniteMdp> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = MdpFile::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.into_mdp().with_context(|| format!("validating {}", path.display()))
}

pub fn noise_kind(name: Option<&str>) -> Result<NoiseKind> {
    match name.unwrap_or("bounded_shift") {
        "bounded_shift" => Ok(NoiseKind::BoundedShift),
        "truncated_gaussian" => Ok(NoiseKind::TruncatedGaussian),
        other => bail!("unknown noise '{other}'"),
    }
}

/// `true` for the quadratic rule.
pub fn rule_name(name: Option<&str>) -> Result<bool> {
    match name.unwrap_or("linear") {
        "linear" => Ok(false),
        "quadratic" => Ok(true),
        other => bail!("unknown sample-size rule '{other}'"),
    }
}

pub fn mc_rule(quadratic: bool) -> McRule {
    if quadratic {
        McRule::Quadratic
    } else {
        McRule::Linear
    }
}

pub fn ctd_rule(quadratic: bool) -> CtdRule {
    if quadratic {
        CtdRule::Quadratic
    } else {
        CtdRule::Linear
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_key_lines() {
        let text = "[solver]\nvariant = \"x\"\n  eta=2\n";
        assert_eq!(line_of(text, "variant"), Some(2));
        assert_eq!(line_of(text, "eta"), Some(3));
        assert_eq!(line_of(text, "mu"), None);
    }

    #[test]
    fn mismatched_modulus_names_the_line() {
        let text = "[mdp]\nnamed = \"standard\"\n\n[solver]\nvariant = \"pmd_strong\"\niterations = 3\n";
        let err = ExperimentConfig::parse(text).unwrap().validate(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().starts_with("line 5: variant"), "{err}");
    }

    #[test]
    fn empty_seed_list_defaults_to_zero() {
        let text = "[mdp]\nnamed = \"single_state\"\n[solver]\nvariant = \"pmd_plain\"\neta = 1.0\niterations = 2\n";
        let e = ExperimentConfig::parse(text).unwrap().validate(text, Path::new(".")).unwrap();
        assert_eq!(e.seeds, vec![0]);
    }
}
