//! Gauss rules from the Golub–Welsch eigenproblem.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a symmetric Jacobi matrix with zero diagonal.
fn golub_welsch(k: usize, off: impl Fn(usize) -> f64, mass: f64) -> Vec<(f64, f64)> {
    let mut j = DMatrix::zeros(k, k);
    for i in 1..k {
        let b = off(i);
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut rule: Vec<(f64, f64)> =
        (0..k).map(|c| (eig.eigenvalues[c], mass * eig.eigenvectors[(0, c)].powi(2))).collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize so mirrored panels cancel exactly
    for c in 0..k / 2 {
        let (x, w) = (0.5 * (rule[k - 1 - c].0 - rule[c].0), 0.5 * (rule[c].1 + rule[k - 1 - c].1));
        rule[c] = (-x, w);
        rule[k - 1 - c] = (x, w);
    }
    if k % 2 == 1 {
        rule[k / 2].0 = 0.0;
    }
    rule
}

/// `k`-point Gauss–Legendre rule on `[−1, 1]`.
pub fn legendre(k: usize) -> Vec<(f64, f64)> {
    golub_welsch(k, |i| i as f64 / ((4 * i * i - 1) as f64).sqrt(), 2.0)
}

/// `k`-point rule for `E[f(Z)]`, `Z ~ N(0, 1)`.
pub fn hermite_expectation(k: usize) -> Vec<(f64, f64)> {
    golub_welsch(k, |i| (i as f64).sqrt(), 1.0)
}

/// Map a `[−1, 1]` rule onto `[a, b]`.
pub fn on_panel(rule: &[(f64, f64)], a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    rule.iter().map(move |&(x, w)| (mid + half * x, half * w))
}
