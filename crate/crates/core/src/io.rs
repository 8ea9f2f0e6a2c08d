//! File formats: state tables (CSV), metric tables (CSV), ensemble snapshots
//! (JSON header + little-endian f64) and content hashes for run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{read_array_file, write_array_file};
use crate::error::{Error, Result};
use crate::metrics::MetricRow;

/// Write one state per row: `step,<prefix>0,<prefix>1,...`.
pub fn write_states_csv(path: &Path, prefix: &str, first_step: usize, rows: &[DVector<f64>]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (k, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Data(format!("ragged rows writing {}", path.display())));
        }
        let mut rec = vec![(first_step + k).to_string()];
        rec.extend(row.iter().map(|v| format_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_states_csv`]; returns the first step and the rows.
pub fn read_states_csv(path: &Path) -> Result<(usize, Vec<DVector<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len().checked_sub(1).ok_or_else(|| bad(path, "missing header"))?;
    let mut rows = Vec::new();
    let mut first = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width + 1 {
            return Err(bad(path, &format!("row {} has {} fields, expected {}", i + 1, rec.len(), width + 1)));
        }
        let step: usize = rec[0].trim().parse().map_err(|_| bad(path, &format!("row {}: bad step", i + 1)))?;
        let start = *first.get_or_insert(step);
        if step != start + i {
            return Err(bad(path, &format!("row {}: steps are not consecutive", i + 1)));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(path, &format!("row {}: bad number", i + 1)))?;
        rows.push(DVector::from_vec(vals));
    }
    if rows.is_empty() {
        return Err(bad(path, "no data rows"));
    }
    Ok((first.unwrap_or(0), rows))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["step", "group", "skill", "spread", "ess", "alpha", "clamp"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
    if rows.is_empty() {
        return Err(bad(path, "no data rows"));
    }
    Ok(rows)
}

/// Two-column table, used for loss curves and predictive densities.
pub fn write_xy_csv(path: &Path, header: [&str; 2], rows: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (x, y) in rows {
        w.write_record([format_f64(x), format_f64(y)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_xy_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<(f64, f64)>, _>>()?;
    if rows.is_empty() {
        return Err(bad(path, "no data rows"));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub step: usize,
    pub particles: usize,
    pub dim: usize,
}

const SNAPSHOT_FORMAT: &str = "diffda-ensemble/1";

/// Particles are stored row-major, one particle after another.
pub fn write_snapshot(path: &Path, step: usize, ensemble: &[DVector<f64>]) -> Result<()> {
    let dim = ensemble.first().map_or(0, |x| x.len());
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.into(),
        step,
        particles: ensemble.len(),
        dim,
    };
    let values: Vec<f64> = ensemble.iter().flat_map(|x| x.iter().copied()).collect();
    write_array_file(path, &header, &values)
}

pub fn read_snapshot(path: &Path) -> Result<(usize, Vec<DVector<f64>>)> {
    let (header, values): (SnapshotHeader, _) = read_array_file(path, |h: &SnapshotHeader| h.particles * h.dim)?;
    if header.format != SNAPSHOT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown snapshot format {:?}", header.format)));
    }
    let ens = values.chunks(header.dim.max(1)).map(DVector::from_row_slice).collect();
    Ok((header.step, ens))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_label(path), file_sha256(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_label(path), file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Shortest text that parses back to the same `f64`.
fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn bad(path: &Path, what: &str) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}
