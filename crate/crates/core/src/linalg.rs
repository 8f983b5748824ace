use nalgebra::{DMatrix, DVector};

use crate::error::{PmdError, Result};

/// Residual tolerance for dense solves, relative to `max(1, ‖x‖∞)`.
pub const SOLVE_RESIDUAL: f64 = 1e-12;

/// Solves `a x = b` by LU with a few rounds of iterative refinement.
pub fn solve_refined(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or(PmdError::Singular(f64::INFINITY))?;
    let mut res = residual(a, &x, b);
    for _ in 0..4 {
        if res.amax() <= SOLVE_RESIDUAL * x.amax().max(1.0) {
            break;
        }
        let dx = lu.solve(&res).ok_or(PmdError::Singular(f64::INFINITY))?;
        x += dx;
        res = residual(a, &x, b);
    }
    let r = res.amax();
    if !r.is_finite() || r > SOLVE_RESIDUAL * x.amax().max(1.0) {
        return Err(PmdError::Singular(r));
    }
    Ok(x)
}

fn residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    b - a * x
}

/// Moduli of the eigenvalues of a square matrix, sorted in decreasing order.
pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    out
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Whether every node reaches every other node through positive entries.
pub fn strongly_connected(adj: &DMatrix<f64>) -> bool {
    let n = adj.nrows();
    if n == 0 {
        return false;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { adj[(i, j)] } else { adj[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&v| v)
    };
    reach(true) && reach(false)
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Shifts log-weights in place so that they exponentiate to a distribution.
///
/// The maximum is subtracted first so that the normalizing constant is O(1)
/// and large offsets do not leak into the result.
pub fn shift_logs(logs: &mut [f64]) {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.iter_mut().for_each(|l| *l -= m);
    let z = logs.iter().map(|l| l.exp()).sum::<f64>().ln();
    logs.iter_mut().for_each(|l| *l -= z);
}

/// Normalizes log-weights in place and returns the matching probabilities.
pub fn normalize_logs(logs: &mut [f64]) -> Vec<f64> {
    shift_logs(logs);
    logs.iter().map(|l| l.exp()).collect()
}
