//! Sparse pseudo-spectral projection on Smolyak grids built from nested
//! rules, and full-tensor Gauss projection for one-dimensional inputs.

use std::collections::HashMap;

use super::polynomials::Family;
use super::rules::{degree_at_level, nested_rule, points_at_level, MAX_LEVEL};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, gauss_legendre, Rule1d};

/// Multi-indices of retained polynomials; always downward closed and led by
/// the zero index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    pub dim: usize,
    pub indices: Vec<Vec<u16>>,
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_downward_closed(&self) -> bool {
        let set: std::collections::HashSet<&Vec<u16>> = self.indices.iter().collect();
        self.indices.iter().all(|a| {
            (0..a.len()).all(|k| {
                if a[k] == 0 {
                    return true;
                }
                let mut b = a.clone();
                b[k] -= 1;
                set.contains(&b)
            })
        })
    }

    pub fn max_degree(&self) -> Vec<usize> {
        let mut m = vec![0usize; self.dim];
        for a in &self.indices {
            for (k, &d) in a.iter().enumerate() {
                m[k] = m[k].max(d as usize);
            }
        }
        m
    }
}

/// Projection nodes together with the sparse matrix `Π` mapping node values to
/// coefficients: `f_a = Σ_k Π_ak f(z_k)`.
#[derive(Debug, Clone)]
pub struct ProjectionGrid {
    pub families: Vec<Family>,
    pub level: usize,
    pub nodes: Vec<Vec<f64>>,
    pub multi_indices: MultiIndexSet,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Smolyak combination coefficient `Σ_{k=0}^{m} (-1)^k C(d, k) = (-1)^m C(d-1, m)`.
fn combination_coefficient(d: usize, m: usize) -> f64 {
    if m > d - 1 {
        return 0.0;
    }
    let mut c = 1.0;
    for k in 0..m {
        c = c * (d - 1 - k) as f64 / (k + 1) as f64;
    }
    if m % 2 == 0 {
        c
    } else {
        -c
    }
}

/// All level vectors with `|i| = total`, sparse as `(dim, level)` pairs with
/// increasing dims.
fn compositions(d: usize, total: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(d: usize, start: usize, remaining: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if remaining == 0 {
            out.push(cur.clone());
            return;
        }
        for k in start..d {
            for l in 1..=remaining {
                cur.push((k, l));
                rec(d, k + 1, remaining - l, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(d, 0, total, &mut Vec::new(), &mut out);
    out
}

impl ProjectionGrid {
    /// Smolyak PSP `Σ_{|i| ≤ L} ⊗_k Δ_{i_k}` evaluated by the combination
    /// technique on nested Leja rules.
    pub fn smolyak(families: &[Family], level: usize) -> Result<Self> {
        let d = families.len();
        if d == 0 {
            return Err(Error::Invalid("sparse grid needs at least one dimension".into()));
        }
        if level > MAX_LEVEL {
            return Err(Error::Invalid(format!("sparse grid level {level} exceeds {MAX_LEVEL}")));
        }
        let rules: Vec<Vec<Rule1d>> = families
            .iter()
            .map(|&f| (0..=level).map(|l| nested_rule(f, l)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        // ψ tables: psi[k][l][j][a] = ψ_a(x_j) for the level-l rule of dim k
        let max_deg = degree_at_level(level);
        let psi: Vec<Vec<Vec<Vec<f64>>>> = families
            .iter()
            .zip(&rules)
            .map(|(f, rs)| {
                rs.iter()
                    .map(|r| {
                        r.nodes
                            .iter()
                            .map(|&x| {
                                let mut buf = vec![0.0; max_deg + 1];
                                f.eval_upto(max_deg, x, &mut buf);
                                buf
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let mut node_ids: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut node_keys: Vec<Vec<u8>> = Vec::new();
        let mut index_ids: HashMap<Vec<u16>, usize> = HashMap::new();
        let mut indices: Vec<Vec<u16>> = Vec::new();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();

        let lowest = level.saturating_sub(d - 1);
        for total in lowest..=level {
            let coef = combination_coefficient(d, level - total);
            if coef == 0.0 {
                continue;
            }
            for active in compositions(d, total) {
                let npts: Vec<usize> = active.iter().map(|&(_, l)| points_at_level(l)).collect();
                let ndeg: Vec<usize> = active.iter().map(|&(_, l)| degree_at_level(l) + 1).collect();
                let mut jn = vec![0usize; active.len()];
                loop {
                    let mut key = vec![0u8; d];
                    for (t, &(k, _)) in active.iter().enumerate() {
                        key[k] = jn[t] as u8;
                    }
                    let node = *node_ids.entry(key.clone()).or_insert_with(|| {
                        node_keys.push(key);
                        node_keys.len() - 1
                    });
                    let wnode: f64 = active
                        .iter()
                        .enumerate()
                        .map(|(t, &(k, l))| rules[k][l].weights[jn[t]])
                        .product();
                    let mut an = vec![0usize; active.len()];
                    loop {
                        let mut mi = vec![0u16; d];
                        let mut val = coef * wnode;
                        for (t, &(k, l)) in active.iter().enumerate() {
                            mi[k] = an[t] as u16;
                            val *= psi[k][l][jn[t]][an[t]];
                        }
                        let id = *index_ids.entry(mi.clone()).or_insert_with(|| {
                            indices.push(mi);
                            indices.len() - 1
                        });
                        entries.push((id, node, val));
                        if !advance(&mut an, &ndeg) {
                            break;
                        }
                    }
                    if !advance(&mut jn, &npts) {
                        break;
                    }
                }
            }
        }

        let nodes: Vec<Vec<f64>> = node_keys
            .iter()
            .map(|key| key.iter().enumerate().map(|(k, &j)| rules[k][level].nodes[j as usize]).collect())
            .collect();
        Ok(Self::assemble(families.to_vec(), level, nodes, indices, entries))
    }

    /// Full-tensor Gauss projection of a single input onto degrees `≤ order`
    /// with `order + 1` nodes.
    pub fn gauss_1d(family: Family, order: usize) -> Self {
        let rule = match family {
            Family::Hermite => gauss_hermite(order + 1),
            Family::Legendre => gauss_legendre(order + 1),
        };
        let mut entries = Vec::with_capacity((order + 1) * rule.len());
        let mut buf = vec![0.0; order + 1];
        for (j, (x, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            family.eval_upto(order, *x, &mut buf);
            for (a, v) in buf.iter().enumerate() {
                entries.push((a, j, w * v));
            }
        }
        let nodes = rule.nodes.iter().map(|&x| vec![x]).collect();
        let indices = (0..=order).map(|a| vec![a as u16]).collect();
        Self::assemble(vec![family], order, nodes, indices, entries)
    }

    fn assemble(
        families: Vec<Family>,
        level: usize,
        nodes: Vec<Vec<f64>>,
        indices: Vec<Vec<u16>>,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; indices.len() + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (row, col, v) in entries {
            if last == Some((row, col)) {
                *vals.last_mut().expect("merged entry exists") += v;
                continue;
            }
            cols.push(col);
            vals.push(v);
            row_ptr[row + 1] = cols.len();
            last = Some((row, col));
        }
        for i in 1..row_ptr.len() {
            row_ptr[i] = row_ptr[i].max(row_ptr[i - 1]);
        }
        let dim = families.len();
        Self {
            families,
            level,
            nodes,
            multi_indices: MultiIndexSet { dim, indices },
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.families.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_terms(&self) -> usize {
        self.multi_indices.len()
    }

    /// Non-zeros of the projection matrix.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Coefficients `f_a` (terms × outputs, row-major) from node values
    /// (nodes × outputs, row-major). Summation order is fixed.
    pub fn project(&self, values: &[f64], outputs: usize) -> Result<Vec<f64>> {
        if values.len() != self.num_nodes() * outputs {
            return Err(Error::DimensionMismatch {
                context: "projection node values",
                expected: self.num_nodes() * outputs,
                got: values.len(),
            });
        }
        let mut coeffs = vec![0.0; self.num_terms() * outputs];
        for a in 0..self.num_terms() {
            let out = &mut coeffs[a * outputs..(a + 1) * outputs];
            for p in self.row_ptr[a]..self.row_ptr[a + 1] {
                let w = self.vals[p];
                let row = &values[self.cols[p] * outputs..(self.cols[p] + 1) * outputs];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        Ok(coeffs)
    }
}

/// Odometer increment; false once every digit has wrapped.
fn advance(digits: &mut [usize], limits: &[usize]) -> bool {
    for (d, &lim) in digits.iter_mut().zip(limits) {
        *d += 1;
        if *d < lim {
            return true;
        }
        *d = 0;
    }
    false
}
