//! Nested 1D rules built from symmetric weighted Leja sequences.
//!
//! A Leja point set is grown two points at a time, `±x`, where `x > 0`
//! maximises `ω(x) Π_j |x - x_j|` over the current points. For the Gaussian
//! family `ω(x) = exp(-x²/4)`, the square root of the density; for the uniform
//! family `ω ≡ 1` on [-1, 1]. Level `ℓ` keeps the first `2^{ℓ+1} - 1` points and
//! projects onto degrees `≤ 2^ℓ - 1`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::polynomials::Family;
use crate::error::{Error, Result};
use crate::quadrature::Rule1d;

pub const MAX_LEVEL: usize = 5;

pub fn points_at_level(level: usize) -> usize {
    (1 << (level + 1)) - 1
}

pub fn degree_at_level(level: usize) -> usize {
    (1 << level) - 1
}

/// Smallest level whose projection space contains degree `deg`.
pub fn level_of_degree(deg: usize) -> usize {
    let mut l = 0;
    while degree_at_level(l) < deg {
        l += 1;
    }
    l
}

fn log_objective(family: Family, x: f64, pts: &[f64]) -> f64 {
    let w = match family {
        Family::Hermite => -0.25 * x * x,
        Family::Legendre => 0.0,
    };
    pts.iter().fold(w, |acc, p| acc + (x - p).abs().ln())
}

fn leja_sequence(family: Family, n: usize) -> Vec<f64> {
    let hi = match family {
        Family::Hermite => 24.0,
        Family::Legendre => 1.0,
    };
    let scan = 40_000;
    let mut pts = vec![0.0];
    while pts.len() < n {
        let mut best = (f64::NEG_INFINITY, 0.0);
        let h = hi / scan as f64;
        for k in 1..=scan {
            let x = k as f64 * h;
            let v = log_objective(family, x, &pts);
            if v > best.0 {
                best = (v, x);
            }
        }
        // golden-section polish inside the bracketing scan cell
        let (mut a, mut b) = ((best.1 - h).max(h * 1e-3), (best.1 + h).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if log_objective(family, c, &pts) > log_objective(family, d, &pts) {
                b = d;
            } else {
                a = c;
            }
        }
        let mut x = 0.5 * (a + b);
        if log_objective(family, best.1, &pts) > log_objective(family, x, &pts) {
            x = best.1;
        }
        pts.push(x);
        pts.push(-x);
    }
    pts
}

/// Interpolatory weights: `Σ_j w_j ψ_k(x_j) = δ_{k0}` for `k < n`.
fn interpolatory_weights(family: Family, nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    let mut v = DMatrix::zeros(n, n);
    let mut buf = vec![0.0; n];
    for (j, &x) in nodes.iter().enumerate() {
        family.eval_upto(n - 1, x, &mut buf);
        for k in 0..n {
            v[(k, j)] = buf[k];
        }
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    let w = v
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver(format!("singular Vandermonde system for {n} Leja nodes")))?;
    Ok(w.as_slice().to_vec())
}

struct LejaTable {
    points: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

fn table(family: Family) -> &'static LejaTable {
    static HERMITE: OnceLock<LejaTable> = OnceLock::new();
    static LEGENDRE: OnceLock<LejaTable> = OnceLock::new();
    let cell = match family {
        Family::Hermite => &HERMITE,
        Family::Legendre => &LEGENDRE,
    };
    cell.get_or_init(|| {
        let points = leja_sequence(family, points_at_level(MAX_LEVEL));
        let weights = (0..=MAX_LEVEL)
            .map(|l| interpolatory_weights(family, &points[..points_at_level(l)]).expect("Leja nodes are distinct"))
            .collect();
        LejaTable { points, weights }
    })
}

/// The first `points_at_level(level)` Leja points with interpolatory weights.
pub fn nested_rule(family: Family, level: usize) -> Result<Rule1d> {
    if level > MAX_LEVEL {
        return Err(Error::Invalid(format!("rule level {level} exceeds {MAX_LEVEL}")));
    }
    let t = table(family);
    let n = points_at_level(level);
    Ok(Rule1d {
        nodes: t.points[..n].to_vec(),
        weights: t.weights[level].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_and_symmetric() {
        for family in [Family::Hermite, Family::Legendre] {
            for l in 0..MAX_LEVEL {
                let a = nested_rule(family, l).unwrap();
                let b = nested_rule(family, l + 1).unwrap();
                assert_eq!(&b.nodes[..a.len()], a.nodes.as_slice());
                for pair in a.nodes[1..].chunks(2) {
                    assert_eq!(pair[0], -pair[1]);
                }
            }
        }
        assert_eq!(nested_rule(Family::Legendre, 1).unwrap().nodes, vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn exact_to_degree_n() {
        for family in [Family::Hermite, Family::Legendre] {
            for l in 0..=MAX_LEVEL {
                let rule = nested_rule(family, l).unwrap();
                let n = rule.len();
                let mut buf = vec![0.0; n + 1];
                let mut moments = vec![0.0; n + 1];
                for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                    family.eval_upto(n, *x, &mut buf);
                    for k in 0..=n {
                        moments[k] += w * buf[k];
                    }
                }
                for (k, m) in moments.iter().enumerate() {
                    let e = if k == 0 { 1.0 } else { 0.0 };
                    assert!((m - e).abs() < 1e-9, "{family:?} level {l} degree {k}: {m}");
                }
            }
        }
    }

    #[test]
    fn growth_table() {
        assert_eq!((0..5).map(points_at_level).collect::<Vec<_>>(), vec![1, 3, 7, 15, 31]);
        assert_eq!((0..5).map(degree_at_level).collect::<Vec<_>>(), vec![0, 1, 3, 7, 15]);
        assert_eq!([0, 1, 2, 3, 4, 7, 8].map(level_of_degree), [0, 1, 2, 2, 3, 3, 4]);
    }
}
