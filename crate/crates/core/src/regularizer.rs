//! Convex per-state regularizers `h(s, ·)` on the action simplex.
//!
//! A [`Regularizer`] is a sum of terms. Terms that are multiples of a KL
//! divergence to a fixed row (scaled KL, negative entropy) admit closed-form
//! proximal steps. The squared ℓ2 term is smooth and is handled by the
//! accelerated inner solver.

use crate::error::{PmdError, Result};
use crate::mdp::Policy;

/// One additive component of a regularizer.
#[derive(Clone, Debug, PartialEq)]
pub enum RegTerm {
    /// `weight · KL(p ‖ reference(s))`; a `None` reference means uniform.
    ScaledKl {
        weight: f64,
        reference: Option<Policy>,
    },
    /// `weight · Σ_a p(a) log p(a)`.
    NegativeEntropy { weight: f64 },
    /// `weight / 2 · ‖p‖²`.
    SquaredL2 { weight: f64 },
}

impl RegTerm {
    fn weight(&self) -> f64 {
        match self {
            RegTerm::ScaledKl { weight, .. }
            | RegTerm::NegativeEntropy { weight }
            | RegTerm::SquaredL2 { weight } => *weight,
        }
    }

    fn uses_logs(&self) -> bool {
        !matches!(self, RegTerm::SquaredL2 { .. })
    }
}

/// A sum of regularizer terms. The empty sum is the zero regularizer.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Regularizer {
    terms: Vec<RegTerm>,
}

impl Regularizer {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// `weight · KL(p ‖ uniform)`.
    pub fn scaled_kl(weight: f64) -> Self {
        Self::from_term(RegTerm::ScaledKl {
            weight,
            reference: None,
        })
    }

    pub fn scaled_kl_to(weight: f64, reference: Policy) -> Self {
        Self::from_term(RegTerm::ScaledKl {
            weight,
            reference: Some(reference),
        })
    }

    pub fn negative_entropy(weight: f64) -> Self {
        Self::from_term(RegTerm::NegativeEntropy { weight })
    }

    pub fn squared_l2(weight: f64) -> Self {
        Self::from_term(RegTerm::SquaredL2 { weight })
    }

    pub fn from_term(term: RegTerm) -> Self {
        Self { terms: vec![term] }
    }

    /// Sum of two regularizers.
    pub fn plus(mut self, other: Regularizer) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn terms(&self) -> &[RegTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.weight() == 0.0)
    }

    /// Checks weights and reference shapes against an MDP's dimensions.
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for t in &self.terms {
            let w = t.weight();
            if !(w.is_finite() && w >= 0.0) {
                return Err(PmdError::Regularizer(format!("weight {w} must be finite and >= 0")));
            }
            if let RegTerm::ScaledKl {
                reference: Some(r), ..
            } = t
            {
                if r.n_states() != n_states || r.n_actions() != n_actions {
                    return Err(PmdError::Dimension(
                        "regularizer reference policy shape".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether evaluating the regularizer needs logarithms of the row.
    pub fn uses_logs(&self) -> bool {
        self.terms.iter().any(|t| t.uses_logs() && t.weight() > 0.0)
    }

    /// Strong convexity modulus with respect to the KL divergence.
    pub fn strong_convexity(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| match t {
                RegTerm::ScaledKl { weight, .. } | RegTerm::NegativeEntropy { weight } => *weight,
                RegTerm::SquaredL2 { .. } => 0.0,
            })
            .sum()
    }

    /// Lipschitz constant of the gradient w.r.t. `(‖·‖₁, ‖·‖∞)`; `None` when a
    /// logarithmic term makes the gradient unbounded near the boundary.
    pub fn smoothness(&self) -> Option<f64> {
        if self.uses_logs() {
            None
        } else {
            Some(self.smooth_weight())
        }
    }

    /// Total weight of the squared ℓ2 terms, the smoothness constant of the
    /// non-KL part.
    pub fn smooth_weight(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| match t {
                RegTerm::SquaredL2 { weight } => *weight,
                _ => 0.0,
            })
            .sum()
    }

    /// Whether every term is a multiple of a KL divergence, so that
    /// proximal steps have a closed form.
    pub fn is_closed_form(&self) -> bool {
        self.smooth_weight() == 0.0
    }

    /// Upper bound on `sup_{s,p} |h(s, p)|` over the simplex.
    pub fn value_bound(&self, n_actions: usize) -> f64 {
        let log_a = (n_actions as f64).ln();
        self.terms
            .iter()
            .map(|t| match t {
                RegTerm::ScaledKl { weight, reference } => {
                    let worst = match reference {
                        None => log_a,
                        Some(r) => {
                            let min_log = r.log_probs().iter().cloned().fold(f64::INFINITY, f64::min);
                            (-min_log).max(0.0)
                        }
                    };
                    weight * worst
                }
                RegTerm::NegativeEntropy { weight } => weight * log_a,
                RegTerm::SquaredL2 { weight } => 0.5 * weight,
            })
            .sum()
    }

    /// `h(s, p)`; log terms require `p > 0` entrywise (no renormalization).
    pub fn value(&self, s: usize, p: &[f64]) -> Result<f64> {
        let logs = checked_logs(p, self.uses_logs())?;
        Ok(self.value_with_logs(s, p, &logs))
    }

    pub(crate) fn value_with_logs(&self, s: usize, p: &[f64], logp: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in &self.terms {
            match t {
                RegTerm::ScaledKl { weight, reference } => {
                    if *weight == 0.0 {
                        continue;
                    }
                    let kl: f64 = match reference {
                        None => {
                            let lu = -(p.len() as f64).ln();
                            xlogy_sum(p, logp, |_| lu)
                        }
                        Some(r) => {
                            let lr = r.log_row(s);
                            xlogy_sum(p, logp, |a| lr[a])
                        }
                    };
                    total += weight * kl;
                }
                RegTerm::NegativeEntropy { weight } => {
                    if *weight == 0.0 {
                        continue;
                    }
                    total += weight * xlogy_sum(p, logp, |_| 0.0);
                }
                RegTerm::SquaredL2 { weight } => {
                    total += 0.5 * weight * p.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        total
    }

    /// Gradient of `h(s, ·)` at an interior row (no renormalization).
    pub fn gradient(&self, s: usize, p: &[f64]) -> Result<Vec<f64>> {
        let logs = checked_logs(p, self.uses_logs())?;
        let mut g = vec![0.0; p.len()];
        for t in &self.terms {
            match t {
                RegTerm::ScaledKl { weight, reference } => {
                    for a in 0..p.len() {
                        let lr = match reference {
                            None => -(p.len() as f64).ln(),
                            Some(r) => r.log_row(s)[a],
                        };
                        g[a] += weight * (1.0 + logs[a] - lr);
                    }
                }
                RegTerm::NegativeEntropy { weight } => {
                    for a in 0..p.len() {
                        g[a] += weight * (1.0 + logs[a]);
                    }
                }
                RegTerm::SquaredL2 { weight } => {
                    for a in 0..p.len() {
                        g[a] += weight * p[a];
                    }
                }
            }
        }
        Ok(g)
    }

    /// The KL part of `h(s, ·)` as `(weight, log center)` pairs, so that
    /// `h = Σ w_i KL(p ‖ c_i) + smooth part + constant` on the simplex.
    pub(crate) fn kl_centers(&self, s: usize, n_actions: usize) -> Vec<(f64, Vec<f64>)> {
        let lu = -(n_actions as f64).ln();
        self.terms
            .iter()
            .filter_map(|t| match t {
                RegTerm::ScaledKl { weight, reference } if *weight > 0.0 => Some((
                    *weight,
                    match reference {
                        None => vec![lu; n_actions],
                        Some(r) => r.log_row(s).to_vec(),
                    },
                )),
                RegTerm::NegativeEntropy { weight } if *weight > 0.0 => {
                    Some((*weight, vec![lu; n_actions]))
                }
                _ => None,
            })
            .collect()
    }

    /// `h^π(s)` for every state.
    pub fn policy_values(&self, policy: &Policy) -> Vec<f64> {
        (0..policy.n_states())
            .map(|s| self.value_with_logs(s, policy.row(s), policy.log_row(s)))
            .collect()
    }
}

/// `Σ_a p(a) (log p(a) - c(a))` with the convention `0 · log 0 = 0`.
pub(crate) fn xlogy_sum(p: &[f64], logp: &[f64], c: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    for a in 0..p.len() {
        if p[a] > 0.0 {
            s += p[a] * (logp[a] - c(a));
        }
    }
    s
}

pub(crate) fn checked_logs(p: &[f64], need: bool) -> Result<Vec<f64>> {
    if need {
        if let Some(a) = p.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(PmdError::Regularizer(format!(
                "log term needs a positive entry, got p[{a}] = {}",
                p[a]
            )));
        }
    }
    Ok(p.iter().map(|x| x.ln()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_kl_on_uniform_is_zero() {
        let r = Regularizer::scaled_kl(0.5);
        assert!(r.value(0, &[0.5, 0.5]).unwrap().abs() < 1e-15);
        assert_eq!(r.strong_convexity(), 0.5);
        assert_eq!(r.smoothness(), None);
    }

    #[test]
    fn negative_entropy_of_uniform_pair() {
        let r = Regularizer::negative_entropy(1.0);
        let v = r.value(0, &[0.5, 0.5]).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
        assert!((r.value_bound(2) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn squared_l2_constants() {
        let r = Regularizer::squared_l2(2.0);
        assert_eq!(r.strong_convexity(), 0.0);
        assert_eq!(r.smoothness(), Some(2.0));
        assert!((r.value(0, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(r.is_zero() == false && !r.is_closed_form());
    }

    #[test]
    fn zero_regularizer() {
        let r = Regularizer::zero();
        assert_eq!(r.value(0, &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(r.smoothness(), Some(0.0));
        assert_eq!(r.strong_convexity(), 0.0);
        assert!(r.is_closed_form());
    }

    #[test]
    fn log_terms_reject_boundary_rows() {
        let r = Regularizer::scaled_kl(1.0);
        assert!(r.value(0, &[1.0, 0.0]).is_err());
        assert!(Regularizer::squared_l2(1.0).value(0, &[1.0, 0.0]).is_ok());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let r = Regularizer::scaled_kl(0.3)
            .plus(Regularizer::negative_entropy(0.2))
            .plus(Regularizer::squared_l2(1.5));
        let p = [0.2, 0.3, 0.5];
        let g = r.gradient(0, &p).unwrap();
        for a in 0..3 {
            let h = 1e-6;
            let mut up = p;
            let mut dn = p;
            up[a] += h;
            dn[a] -= h;
            let fd = (r.value(0, &up).unwrap() - r.value(0, &dn).unwrap()) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-8);
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(Regularizer::scaled_kl(-1.0).validate(1, 2).is_err());
    }
}
