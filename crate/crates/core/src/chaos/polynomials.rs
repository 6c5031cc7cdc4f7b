//! Orthonormal polynomial families for the standard Gaussian and the uniform
//! measure on [-1, 1].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Probabilists' Hermite, orthonormal under N(0, 1).
    Hermite,
    /// Legendre scaled by √(2n+1), orthonormal under U(-1, 1).
    Legendre,
}

impl Family {
    /// Writes `ψ_0(x) .. ψ_n(x)` into `out[..=n]`.
    pub fn eval_upto(&self, n: usize, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        if n == 0 {
            return;
        }
        match self {
            Family::Hermite => {
                out[1] = x;
                for k in 1..n {
                    out[k + 1] = (x * out[k] - (k as f64).sqrt() * out[k - 1]) / ((k + 1) as f64).sqrt();
                }
            }
            Family::Legendre => {
                // classical P_k first, then scale in place
                out[1] = x;
                for k in 1..n {
                    let kf = k as f64;
                    out[k + 1] = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
                }
                for (k, v) in out.iter_mut().enumerate().take(n + 1) {
                    *v *= (2.0 * k as f64 + 1.0).sqrt();
                }
            }
        }
    }

    /// Values and first derivatives of `ψ_0 .. ψ_n`.
    pub fn eval_with_derivative(&self, n: usize, x: f64, vals: &mut [f64], ders: &mut [f64]) {
        match self {
            Family::Hermite => {
                self.eval_upto(n, x, vals);
                ders[0] = 0.0;
                for k in 1..=n {
                    ders[k] = (k as f64).sqrt() * vals[k - 1];
                }
            }
            Family::Legendre => {
                // P'_{k+1} = P'_{k-1} + (2k+1) P_k on the classical polynomials
                let mut p = vec![0.0; n + 1];
                let mut dp = vec![0.0; n + 1];
                p[0] = 1.0;
                if n >= 1 {
                    p[1] = x;
                    dp[1] = 1.0;
                }
                for k in 1..n {
                    let kf = k as f64;
                    p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
                    dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
                }
                for k in 0..=n {
                    let s = (2.0 * k as f64 + 1.0).sqrt();
                    vals[k] = s * p[k];
                    ders[k] = s * dp[k];
                }
            }
        }
    }

    pub fn eval(&self, n: usize, x: f64) -> f64 {
        let mut buf = vec![0.0; n + 1];
        self.eval_upto(n, x, &mut buf);
        buf[n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_hermite, gauss_legendre};

    #[test]
    fn closed_forms() {
        // He_2 = x^2 - 1 normalised by √2; P_2 = (3x^2 - 1)/2 scaled by √5
        let x = 0.37;
        assert!((Family::Hermite.eval(2, x) - (x * x - 1.0) / 2f64.sqrt()).abs() < 1e-15);
        assert!((Family::Hermite.eval(3, x) - (x * x * x - 3.0 * x) / 6f64.sqrt()).abs() < 1e-15);
        assert!((Family::Legendre.eval(2, x) - 5f64.sqrt() * (3.0 * x * x - 1.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn orthonormal_under_gauss_rules() {
        let n = 12;
        for (family, rule) in [(Family::Hermite, gauss_hermite(n + 1)), (Family::Legendre, gauss_legendre(n + 1))] {
            let mut gram = vec![vec![0.0; n + 1]; n + 1];
            let mut buf = vec![0.0; n + 1];
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                family.eval_upto(n, *x, &mut buf);
                for i in 0..=n {
                    for j in 0..=n {
                        gram[i][j] += w * buf[i] * buf[j];
                    }
                }
            }
            for i in 0..=n {
                for j in 0..=n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[i][j] - e).abs() < 1e-10, "{family:?} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let n = 9;
        let h = 1e-6;
        for family in [Family::Hermite, Family::Legendre] {
            for x in [-0.8, -0.1, 0.45, 0.99] {
                let mut v = vec![0.0; n + 1];
                let mut d = vec![0.0; n + 1];
                family.eval_with_derivative(n, x, &mut v, &mut d);
                for k in 0..=n {
                    let fd = (family.eval(k, x + h) - family.eval(k, x - h)) / (2.0 * h);
                    assert!((fd - d[k]).abs() < 1e-6 * (1.0 + d[k].abs()), "{family:?} k={k} x={x}");
                    assert!((v[k] - family.eval(k, x)).abs() < 1e-12);
                }
            }
        }
    }
}
