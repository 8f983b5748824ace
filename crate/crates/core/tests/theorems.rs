use pmd_core::schedule::{epoch_length, Schedule};
use pmd_core::theorems::*;
use proptest::prelude::*;

#[test]
fn epoch_lengths() {
    assert_eq!(epoch_length(0.5), 2);
    assert_eq!(epoch_length(0.9), 14);
    assert_eq!(epoch_length(0.99), 138);
    for g in [0.3, 0.5, 0.77, 0.9, 0.99] {
        let l = epoch_length(g);
        assert!(g.powi(l as i32) <= 0.25 && g.powi(l as i32 - 1) > 0.25);
    }
}

#[test]
fn schedule_arithmetic() {
    let s = Schedule::apmd_epoch(0.5).unwrap();
    let (a, b) = (s.step(0), s.step(2));
    assert_eq!((a.tau, a.eta), (0.5, 2.0));
    assert_eq!((b.tau, b.eta), (0.25, 4.0));
    assert_eq!(s.step(1).tau, 0.5);

    let s = Schedule::sapmd(0.5, 2).unwrap();
    assert!((s.step(0).tau - 0.849322).abs() < 1e-6);
    let st = s.step(2);
    assert!((st.tau - 0.849322 / 2.0).abs() < 1e-6);
    assert_eq!((st.bias_target, st.msq_target), (0.125, 1.0 / 64.0));

    let s = Schedule::spmd_strong(0.5, 0.1).unwrap();
    assert_eq!((s.step(0).bias_target, s.step(0).msq_target), (0.25, 0.25));
    assert_eq!((s.step(2).bias_target, s.step(2).msq_target), (0.125, 0.125));
    assert!((s.eta - 10.0).abs() < 1e-12);

    let s = Schedule::inexact_spmd(0.5, 0.1).unwrap();
    assert_eq!(s.step(0).prox_accuracy, Some(1.0 / 16.0));
    assert_eq!(s.step(1).prox_accuracy, Some(1.0 / 32.0));

    let s = Schedule::apmd_geometric(0.9, 2.0).unwrap();
    for k in [0, 1, 7, 30] {
        let st = s.step(k);
        assert!((1.0 + st.eta * st.tau - 1.0 / 0.9).abs() < 1e-12);
    }
}

#[test]
fn bound_examples() {
    let mut c = BoundInputs::new(1.0, 0.5, 2);
    c.eta = 1.0;
    assert!((theorem_bound(Guarantee::PmdPlain, 4, 2, &c) - 0.596574).abs() < 1e-6);
    c.mu = 0.3;
    let b0 = theorem_bound(Guarantee::PmdStrong, 0, 2, &c);
    assert!((b0 - (1.0 + 0.3 * 2f64.ln() / 0.5)).abs() < 1e-15);
    assert!(Guarantee::PmdStrong.includes_divergence());
    assert!(!Guarantee::Sapmd.includes_divergence());
}

#[test]
fn geometric_perturbation_with_tuned_start() {
    // τ0 = 1/K leaves a bound of order γ^K.
    let (gamma, k) = (0.8, 50usize);
    let mut c = BoundInputs::new(1.0, gamma, 4);
    c.tau0 = 1.0 / k as f64;
    let b = theorem_bound(Guarantee::ApmdGeometric, k, epoch_length(gamma), &c);
    let expected = gamma.powi(k as i32) * (1.0 + (2.0 / ((1.0 - gamma) * k as f64) + 1.0 / gamma) * 4f64.ln());
    assert!((b - expected).abs() <= 1e-13 * expected);
    assert!(b <= gamma.powi(k as i32) * (1.0 + 4f64.ln() * (1.0 / gamma + 1.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn epoch_recursion(x0 in 0.0..10.0f64, y in 0.0..10.0f64, z in 0.0..10.0f64, gamma in 0.1..0.99f64, noise in prop::collection::vec(0.0..1.0f64, 1000)) {
        let l = epoch_length(gamma);
        let xs = recursion_worst_case(x0, y, z, gamma, l, 1000);
        for (k, x) in xs.iter().enumerate() {
            let b = recursion_bound(x0, y, z, gamma, l, k);
            prop_assert!(*x <= b * (1.0 + 1e-12) + 1e-300, "k = {}: {} > {}", k, x, b);
        }
        // Any sequence below the worst case obeys the same bound.
        let yk = |j: usize| y * 2f64.powi(-((j / l) as i32 + 1));
        let zk = |j: usize| z * 2f64.powi(-((j / l) as i32 + 2));
        let mut x = x0;
        for k in 0..1000 {
            x = (gamma * x + (yk(k) - yk(k + 1)) + zk(k)) * noise[k];
            prop_assert!(x <= recursion_bound(x0, y, z, gamma, l, k + 1) * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn epoch_bounds_halve(gap in 0.0..5.0f64, gamma in 0.1..0.99f64, na in 2usize..10, mu in 0.01..2.0f64) {
        let l = epoch_length(gamma);
        let mut c = BoundInputs::new(gap, gamma, na);
        c.mu = mu;
        for g in [Guarantee::ApmdEpoch, Guarantee::SpmdStrong, Guarantee::Sapmd, Guarantee::InexactSpmd, Guarantee::InexactSapmd] {
            let a = theorem_bound(g, 0, l, &c);
            let b = theorem_bound(g, l, l, &c);
            prop_assert!((a - 2.0 * b).abs() <= 1e-12 * a);
            prop_assert!(theorem_bound(g, l - 1, l, &c) == a);
        }
    }
}
