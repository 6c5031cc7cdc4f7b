//! One-dimensional Gauss rules computed with the Golub–Welsch algorithm.

use nalgebra::{DMatrix, SymmetricEigen};

/// A quadrature rule with nodes and weights normalised to a probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn golub_welsch(diag: &[f64], offdiag: &[f64]) -> Rule1d {
    let n = diag.len();
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = diag[i];
        if i + 1 < n {
            jacobi[(i, i + 1)] = offdiag[i];
            jacobi[(i + 1, i)] = offdiag[i];
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Rule1d {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
    }
}

/// Gauss–Legendre rule on [-1, 1] for the uniform probability density 1/2.
pub fn gauss_legendre(n: usize) -> Rule1d {
    if n == 0 {
        return Rule1d { nodes: vec![], weights: vec![] };
    }
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &off)
}

/// Gauss–Hermite rule for the standard normal density.
pub fn gauss_hermite(n: usize) -> Rule1d {
    if n == 0 {
        return Rule1d { nodes: vec![], weights: vec![] };
    }
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(&diag, &off)
}

/// Gauss–Legendre rule mapped to the unit interval (0, 1).
pub fn gauss_legendre_unit(n: usize) -> Rule1d {
    let mut rule = gauss_legendre(n);
    for x in &mut rule.nodes {
        *x = 0.5 * (*x + 1.0);
    }
    rule
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_monomials() {
        let rule = gauss_legendre(6);
        // E[x^k] under U(-1,1) is 1/(k+1) for even k
        for k in 0..12 {
            let exact = if k % 2 == 0 { 1.0 / (k as f64 + 1.0) } else { 0.0 };
            let got = rule.integrate(|x| x.powi(k));
            assert!((got - exact).abs() < 1e-13, "k={k} got {got}");
        }
    }

    #[test]
    fn hermite_integrates_gaussian_moments() {
        let rule = gauss_hermite(8);
        let mut double_factorial = 1.0;
        for k in (0..16).step_by(2) {
            if k > 0 {
                double_factorial *= (k - 1) as f64;
            }
            let got = rule.integrate(|x| x.powi(k as i32));
            assert!((got - double_factorial).abs() < 1e-9 * double_factorial, "k={k}");
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for n in 1..20 {
            let s: f64 = gauss_legendre(n).weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-13);
        }
    }
}
