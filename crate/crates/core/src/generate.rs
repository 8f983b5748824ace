//! Seeded random MDP generator, named test instances and the MDP file format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PmdError, Result};
use crate::mdp::FiniteMdp;

/// Uniform mass mixed into every transition row to make chains ergodic.
pub const ERGODIC_MIX: f64 = 1e-3;

/// Parameters of a random MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Fraction of successor states dropped from each row before mixing, in `[0, 1)`.
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default)]
    pub cost_low: f64,
    #[serde(default = "default_cost_high")]
    pub cost_high: f64,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_cost_high() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn new(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            seed,
            n_states,
            n_actions,
            gamma,
            sparsity: 0.0,
            cost_low: 0.0,
            cost_high: 1.0,
        }
    }

    pub fn with_sparsity(mut self, sparsity: f64) -> Self {
        self.sparsity = sparsity;
        self
    }

    pub fn with_costs(mut self, low: f64, high: f64) -> Self {
        self.cost_low = low;
        self.cost_high = high;
        self
    }
}

/// Draws an MDP: costs uniform on `[cost_low, cost_high]`, transition rows
/// with random support and weights, mixed with [`ERGODIC_MIX`] uniform mass.
pub fn generate(spec: &GeneratorSpec) -> Result<FiniteMdp> {
    let (ns, na) = (spec.n_states, spec.n_actions);
    if ns == 0 || na == 0 {
        return Err(PmdError::Dimension("need at least one state and one action".into()));
    }
    if !(0.0..1.0).contains(&spec.sparsity) {
        return Err(PmdError::Parameter(format!("sparsity {}", spec.sparsity)));
    }
    if !(spec.cost_low <= spec.cost_high) {
        return Err(PmdError::Parameter("cost range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cost: Vec<f64> = (0..ns * na)
        .map(|_| {
            if spec.cost_low == spec.cost_high {
                spec.cost_low
            } else {
                rng.gen_range(spec.cost_low..spec.cost_high)
            }
        })
        .collect();
    let keep = ((1.0 - spec.sparsity) * ns as f64).ceil().max(1.0) as usize;
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let mut idx: Vec<usize> = (0..ns).collect();
        // Partial Fisher-Yates: the first `keep` entries form the support.
        for i in 0..keep {
            let j = rng.gen_range(i..ns);
            idx.swap(i, j);
        }
        let mut w = vec![0.0; ns];
        for &j in &idx[..keep] {
            w[j] = rng.gen::<f64>() + 1e-3;
        }
        let total: f64 = w.iter().sum();
        let mut row: Vec<f64> = w
            .iter()
            .map(|x| (1.0 - ERGODIC_MIX) * x / total + ERGODIC_MIX / ns as f64)
            .collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
        transition.extend(row);
    }
    let bound = spec.cost_low.abs().max(spec.cost_high.abs());
    FiniteMdp::new(ns, na, spec.gamma, cost, transition, Some(bound))
}

/// One state, one action, unit cost, `γ = 0.5`; `V = 2`.
pub fn single_state() -> FiniteMdp {
    FiniteMdp::new(1, 1, 0.5, vec![1.0], vec![1.0], None).expect("valid model")
}

/// Deterministic two-state cycle with costs `(0, 1)` and `γ = 0.5`.
pub fn two_cycle() -> FiniteMdp {
    FiniteMdp::new(2, 1, 0.5, vec![0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0], None).expect("valid model")
}

/// Generator spec of the standard 5-state, 3-action random instance.
pub fn standard_spec(gamma: f64) -> GeneratorSpec {
    GeneratorSpec::new(3, 5, 3, gamma).with_sparsity(0.6)
}

/// The standard 5-state, 3-action random instance.
pub fn standard_instance(gamma: f64) -> FiniteMdp {
    generate(&standard_spec(gamma)).expect("valid model")
}

/// On-disk MDP document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `cost[s][a]`.
    pub cost: Vec<Vec<f64>>,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_bound: Option<f64>,
}

impl MdpFile {
    pub fn from_mdp(mdp: &FiniteMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        Self {
            n_states: ns,
            n_actions: na,
            gamma: mdp.gamma(),
            cost: (0..ns).map(|s| (0..na).map(|a| mdp.cost(s, a)).collect()).collect(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                .collect(),
            cost_bound: Some(mdp.cost_bound()),
        }
    }

    pub fn into_mdp(self) -> Result<FiniteMdp> {
        let (ns, na) = (self.n_states, self.n_actions);
        if self.cost.len() != ns || self.cost.iter().any(|r| r.len() != na) {
            return Err(PmdError::Dimension(format!("cost must be {ns} rows of {na}")));
        }
        if self.transition.len() != ns {
            return Err(PmdError::Dimension(format!("transition must have {ns} state blocks")));
        }
        let mut t = Vec::with_capacity(ns * na * ns);
        for (s, block) in self.transition.iter().enumerate() {
            if block.len() != na {
                return Err(PmdError::Dimension(format!("transition[{s}] must have {na} rows")));
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != ns {
                    return Err(PmdError::TransitionRow {
                        s,
                        a,
                        reason: format!("has {} entries, expected {ns}", row.len()),
                    });
                }
                t.extend_from_slice(row);
            }
        }
        let cost = self.cost.into_iter().flatten().collect();
        FiniteMdp::new(ns, na, self.gamma, cost, t, self.cost_bound)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PmdError::Io(e.to_string()))
    }
}
