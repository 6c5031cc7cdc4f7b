//! CSV layouts for observations, chains and quantile maps.

use std::path::Path;

use crate::discretization::SpatialGrid;
use crate::error::{Error, Result};
use crate::forward::diffusion::DiffusionConfig;
use crate::forward::eikonal::TomoGeometry;
use crate::sampler::{Chain, FieldSummary, Layout};
use crate::HyperPriorSpec;

/// `index, x, t, value`, time-major.
pub fn write_diffusion_observations(path: &Path, cfg: &DiffusionConfig, values: &[f64]) -> Result<()> {
    let pts = cfg.obs_points();
    if pts.len() != values.len() {
        return Err(Error::DimensionMismatch {
            context: "diffusion observations",
            expected: pts.len(),
            got: values.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "x", "t", "value"])?;
    for (i, ((x, t), v)) in pts.iter().zip(values).enumerate() {
        w.write_record([i.to_string(), x.to_string(), t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `source_id, receiver_id, time`, source-major.
pub fn write_traveltimes(path: &Path, geom: &TomoGeometry, values: &[f64]) -> Result<()> {
    if geom.num_obs() != values.len() {
        return Err(Error::DimensionMismatch {
            context: "traveltime observations",
            expected: geom.num_obs(),
            got: values.len(),
        });
    }
    let nr = geom.receivers.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source_id", "receiver_id", "time"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(i / nr).to_string(), (i % nr).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// The last column of an observation CSV, in file order.
pub fn read_observations(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {}: '{field}' is not a number", path.display(), line + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// `step, <state names>, sigma, logpost, loglik, accepted`.
pub fn write_chain_csv(path: &Path, chain: &Chain, layout: &Layout, spec: &HyperPriorSpec) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend(chain.names.iter().cloned());
    header.extend(["sigma", "logpost", "loglik", "accepted"].map(String::from));
    w.write_record(&header)?;
    for s in &chain.samples {
        let (_, _, _, sigma) = layout.unpack(spec, &s.theta);
        let mut row = vec![s.step.to_string()];
        row.extend(s.theta.iter().map(f64::to_string));
        row.extend([sigma.to_string(), s.logpost.to_string(), s.loglik.to_string(), (s.accepted as u8).to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Node coordinates followed by `q01, q05, q50, q95, q99, mean, map`.
pub fn write_quantile_map(path: &Path, grid: &SpatialGrid, s: &FieldSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = match grid.dim() {
        1 => vec!["x".into()],
        _ => vec!["x".into(), "z".into()],
    };
    header.extend(["q01", "q05", "q50", "q95", "q99", "mean", "map"].map(String::from));
    w.write_record(&header)?;
    for i in 0..grid.len() {
        let mut row: Vec<String> = grid.point(i).iter().map(f64::to_string).collect();
        row.extend(s.quantiles.iter().map(|q| q[i].to_string()));
        row.push(s.mean[i].to_string());
        row.push(s.map[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One value per grid node, e.g. a true field; column `value` or the last column.
pub fn read_nodal_field(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let v = read_observations(path)?;
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "nodal field file",
            expected,
            got: v.len(),
        });
    }
    Ok(v)
}
