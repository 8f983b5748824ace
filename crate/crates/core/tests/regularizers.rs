mod common;

use common::*;
use pmd_core::mdp::{kl_divergence, Policy};
use pmd_core::regularizer::Regularizer;
use proptest::prelude::*;

#[test]
fn values_and_gradients() {
    assert_eq!(Regularizer::zero().value(0, &[0.3, 0.7]).unwrap(), 0.0);
    assert_eq!(Regularizer::zero().gradient(0, &[0.3, 0.7]).unwrap(), vec![0.0, 0.0]);
    assert!(Regularizer::scaled_kl(2.0).value(0, &[0.25; 4]).unwrap().abs() < 1e-15);
    let v = Regularizer::scaled_kl(2.0).value(0, &[1.0 - 1e-12, 1e-12]).unwrap();
    assert!((v - 2.0 * 2f64.ln()).abs() < 1e-9);
    assert_eq!(Regularizer::squared_l2(1.0).gradient(0, &[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
    let g = Regularizer::scaled_kl(1.0).gradient(0, &[0.5, 0.5]).unwrap();
    assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
}

#[test]
fn constants() {
    let z = Regularizer::zero();
    assert_eq!((z.strong_convexity(), z.smoothness()), (0.0, Some(0.0)));
    let k = Regularizer::scaled_kl(0.7);
    assert_eq!((k.strong_convexity(), k.smoothness()), (0.7, None));
    let l = Regularizer::squared_l2(1.5);
    assert_eq!((l.strong_convexity(), l.smoothness()), (0.0, Some(1.5)));
}

#[test]
fn squared_l2_smoothness_holds_on_random_pairs() {
    let reg = Regularizer::squared_l2(1.3);
    let lip = reg.smoothness().unwrap();
    let mut r = rng(21);
    let mut worst = f64::INFINITY;
    for i in 0..10_000 {
        let na = 2 + i % 7;
        let p = random_row(&mut r, na);
        let q = random_row(&mut r, na);
        let g = reg.gradient(0, &q).unwrap();
        let lin: f64 = g.iter().zip(p.iter().zip(&q)).map(|(g, (a, b))| g * (a - b)).sum();
        let gap = reg.value(0, &p).unwrap() - reg.value(0, &q).unwrap() - lin;
        let l1: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        worst = worst.min(lip / 2.0 * l1 * l1 - gap);
    }
    assert!(worst >= -1e-9, "{worst}");
}

#[test]
fn reference_policy_kl() {
    let reference = Policy::from_probs(2, 2, vec![0.2, 0.8, 0.6, 0.4]).unwrap();
    let reg = Regularizer::scaled_kl_to(0.5, reference.clone());
    let p = [0.5, 0.5];
    for s in 0..2 {
        let want = 0.5 * kl_divergence(&p, reference.row(s)).unwrap();
        assert!((reg.value(s, &p).unwrap() - want).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn strong_convexity_and_subgradient(seed in seeds(), na in 2usize..8) {
        let mut r = rng(seed);
        let reg = random_regularizer(&mut r);
        let p = random_row(&mut r, na);
        let q = random_row(&mut r, na);
        let g = reg.gradient(0, &q).unwrap();
        let lin: f64 = g.iter().zip(p.iter().zip(&q)).map(|(g, (a, b))| g * (a - b)).sum();
        let gap = reg.value(0, &p).unwrap() - reg.value(0, &q).unwrap() - lin;
        prop_assert!(gap >= -1e-9);
        prop_assert!(gap >= reg.strong_convexity() * kl_divergence(&p, &q).unwrap() - 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences(seed in seeds(), na in 2usize..8) {
        let mut r = rng(seed);
        let reg = random_regularizer(&mut r);
        let p = random_policy_scaled(&mut r, 1, na, 1.0).row(0).to_vec();
        let g = reg.gradient(0, &p).unwrap();
        let h = 1e-6;
        let mut fd = vec![0.0; na];
        for a in 0..na {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[a] += h;
            dn[a] -= h;
            fd[a] = (reg.value(0, &up).unwrap() - reg.value(0, &dn).unwrap()) / (2.0 * h);
        }
        let scale = g.iter().fold(1e-12f64, |m, x| m.max(x.abs()));
        prop_assert!(max_abs_diff(&fd, &g) <= 1e-5 * scale || max_abs_diff(&fd, &g) <= 1e-9);
    }

    #[test]
    fn value_bound_dominates(seed in seeds(), na in 1usize..8) {
        let mut r = rng(seed);
        let reg = random_regularizer(&mut r);
        let p = random_row(&mut r, na);
        prop_assert!(reg.value(0, &p).unwrap().abs() <= reg.value_bound(na) + 1e-12);
    }
}
