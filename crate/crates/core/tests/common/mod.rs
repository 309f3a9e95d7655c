//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Orthonormal three-term recurrence of a discrete probability measure
/// (Stieltjes procedure): returns `(alpha_0..alpha_{s-1}, b_1..b_{s-1})`.
pub fn stieltjes(x: &[f64], s: usize) -> (Vec<f64>, Vec<f64>) {
    let w = 1.0 / x.len() as f64;
    let mut prev = vec![0.0; x.len()];
    let mut cur = vec![1.0; x.len()];
    let mut alpha = Vec::new();
    let mut b = Vec::new();
    let mut b_prev = 0.0;
    for j in 0..s {
        let a: f64 = x.iter().zip(&cur).map(|(xi, q)| w * xi * q * q).sum();
        alpha.push(a);
        if j + 1 == s {
            break;
        }
        let mut next: Vec<f64> = (0..x.len()).map(|i| (x[i] - a) * cur[i] - b_prev * prev[i]).collect();
        let norm = next.iter().map(|v| w * v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        b.push(norm);
        b_prev = norm;
        prev = cur;
        cur = next;
    }
    (alpha, b)
}

fn jacobi(alpha: &[f64], b: &[f64]) -> DMatrix<f64> {
    let s = alpha.len();
    let mut j = DMatrix::zeros(s, s);
    for i in 0..s {
        j[(i, i)] = alpha[i];
        if i + 1 < s {
            j[(i, i + 1)] = b[i];
            j[(i + 1, i)] = b[i];
        }
    }
    j
}

/// Nodes and weights of the quadrature defined by a Jacobi matrix.
fn golub_welsch(alpha: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    let eig = SymmetricEigen::new(jacobi(alpha, b));
    let mut out: Vec<(f64, f64)> = (0..alpha.len())
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Last column of `(J - ξ I)^{-1}`, scaled by `rhs`.
fn shifted_solve(alpha: &[f64], b: &[f64], xi: f64, rhs: f64) -> f64 {
    let s = alpha.len();
    let mut j = jacobi(alpha, b);
    for i in 0..s {
        j[(i, i)] -= xi;
    }
    let mut e = DVector::zeros(s);
    e[s - 1] = rhs;
    j.lu().solve(&e).expect("nonsingular shifted Jacobi matrix")[s - 1]
}

/// Gauss rule with `s` nodes.
pub fn gauss(x: &[f64], s: usize) -> Vec<(f64, f64)> {
    let (alpha, b) = stieltjes(x, s);
    golub_welsch(&alpha, &b)
}

/// Radau rule with `s` nodes, one fixed at `xi`.
pub fn radau(x: &[f64], s: usize, xi: f64) -> Vec<(f64, f64)> {
    let (mut alpha, b) = stieltjes(x, s);
    let bl = b[s - 2];
    let delta = shifted_solve(&alpha[..s - 1], &b[..s - 2], xi, bl * bl);
    alpha[s - 1] = xi + delta;
    golub_welsch(&alpha, &b)
}

/// Lobatto rule with `s` nodes, two fixed at `lo` and `hi`.
pub fn lobatto(x: &[f64], s: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (mut alpha, mut b) = stieltjes(x, s);
    let g = shifted_solve(&alpha[..s - 1], &b[..s - 2], lo, 1.0);
    let m = shifted_solve(&alpha[..s - 1], &b[..s - 2], hi, 1.0);
    // a' - g β' = lo, a' - m β' = hi
    let beta = (hi - lo) / (g - m);
    alpha[s - 1] = lo + g * beta;
    b[s - 2] = beta.sqrt();
    golub_welsch(&alpha, &b)
}

pub fn log_mean(rule: &[(f64, f64)]) -> f64 {
    rule.iter().map(|(x, w)| w * x.ln()).sum()
}

/// Extremal `∫ log x` over measures on `[lo, cap]` matching `M_0..M_k` of the
/// normalized spectrum `x`, from the principal representations.
pub fn principal_upper(x: &[f64], k: usize, cap: f64) -> f64 {
    if k % 2 == 1 {
        log_mean(&gauss(x, (k + 1) / 2))
    } else {
        log_mean(&radau(x, k / 2 + 1, cap))
    }
}

pub fn principal_lower(x: &[f64], k: usize, r: f64, cap: f64) -> f64 {
    if k % 2 == 0 {
        log_mean(&radau(x, k / 2 + 1, r))
    } else {
        log_mean(&lobatto(x, (k + 3) / 2, r, cap))
    }
}

pub fn moments_of(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len() as f64;
    let mut m: Vec<f64> = (1..=k).map(|j| x.iter().map(|v| v.powi(j as i32)).sum::<f64>() / n).collect();
    m[0] = 1.0;
    m
}
