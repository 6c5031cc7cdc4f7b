//! Forward-model surrogates trained on sparse grids, with a per-node result
//! cache so interrupted builds resume without re-solving.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::grid::ProjectionGrid;
use super::surrogate::{InputMap, PCSurrogate};
use crate::discretization::ReferenceBasis;
use crate::error::{Error, Result};

/// One file per node, named by the SHA-256 of the namespace and the node's
/// little-endian coordinates; the payload is the raw output vector.
#[derive(Debug, Clone)]
pub struct NodeCache {
    dir: PathBuf,
    namespace: String,
}

impl NodeCache {
    pub fn new(dir: impl Into<PathBuf>, namespace: impl Into<String>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            namespace: namespace.into(),
        })
    }

    pub fn key(&self, node: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(self.namespace.as_bytes());
        h.update([0u8]);
        for v in node {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, node: &[f64]) -> PathBuf {
        self.dir.join(format!("{}.bin", self.key(node)))
    }

    pub fn load(&self, node: &[f64]) -> Option<Vec<f64>> {
        let bytes = fs::read(self.path(node)).ok()?;
        if bytes.is_empty() || bytes.len() % 8 != 0 {
            return None;
        }
        Some(bytes.chunks(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect())
    }

    pub fn store(&self, node: &[f64], values: &[f64]) -> Result<()> {
        let path = self.path(node);
        let tmp = path.with_extension("tmp");
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Debug, Clone)]
pub struct ForwardBuild {
    pub surrogate: PCSurrogate,
    pub nodes: usize,
    pub solved: usize,
    pub cached: usize,
}

/// Trains a vector surrogate of `model` on the level-`level` Smolyak grid of
/// `inputs`. Node evaluations run in parallel; the projection is sequential in
/// node order.
pub fn build_forward_surrogate<F>(model: F, inputs: Vec<InputMap>, level: usize, cache: Option<&NodeCache>) -> Result<ForwardBuild>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let families: Vec<_> = inputs.iter().map(InputMap::family).collect();
    let grid = ProjectionGrid::smolyak(&families, level)?;
    let physical: Vec<Vec<f64>> = grid
        .nodes
        .iter()
        .map(|z| inputs.iter().zip(z).map(|(m, &v)| m.from_germ(v)).collect())
        .collect();
    let results: Vec<Result<(Vec<f64>, bool)>> = physical
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            if let Some(v) = cache.and_then(|c| c.load(x)) {
                return Ok((v, true));
            }
            let v = model(x).map_err(|e| Error::NodeEvaluation {
                node: k,
                location: format_node(x),
                reason: e.to_string(),
            })?;
            if let Some(c) = cache {
                c.store(x, &v)?;
            }
            Ok((v, false))
        })
        .collect();
    let mut values = Vec::new();
    let mut outputs = None;
    let mut cached = 0;
    for (k, r) in results.into_iter().enumerate() {
        let (v, hit) = r?;
        match outputs {
            None => outputs = Some(v.len()),
            Some(n) if n != v.len() => {
                return Err(Error::NodeEvaluation {
                    node: k,
                    location: format_node(&physical[k]),
                    reason: format!("returned {} outputs, expected {n}", v.len()),
                })
            }
            _ => {}
        }
        cached += hit as usize;
        values.extend(v);
    }
    let outputs = outputs.unwrap_or(0);
    let surrogate = PCSurrogate::from_projection(inputs, &grid, &values, outputs)?;
    Ok(ForwardBuild {
        surrogate,
        nodes: grid.num_nodes(),
        solved: grid.num_nodes() - cached,
        cached,
    })
}

fn format_node(x: &[f64]) -> String {
    let head: Vec<String> = x.iter().take(6).map(|v| format!("{v:.4}")).collect();
    if x.len() > 6 {
        format!("[{}, ... {} inputs]", head.join(", "), x.len())
    } else {
        format!("[{}]", head.join(", "))
    }
}

/// Composes field reconstruction with a solver: inputs are the first `r`
/// coordinates, followed by the trend when `with_trend` holds.
pub fn field_model<'a, S>(basis: &'a ReferenceBasis, with_trend: bool, default_trend: f64, solve: S) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a
where
    S: Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a,
{
    move |x: &[f64]| {
        let r = basis.r;
        let trend = if with_trend { x[r] } else { default_trend };
        let g = basis.reconstruct_field(&x[..r], trend)?;
        solve(&g).map_err(|e| {
            let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            Error::Solver(format!("{e}; reconstructed field range [{lo:.4}, {hi:.4}]"))
        })
    }
}
