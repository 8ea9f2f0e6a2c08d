//! Checkpoint files: one JSON header line, then `n_values` little-endian f64s.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpDenoiser, Preconditioning};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

const MLP_FORMAT: &str = "diffda-mlp/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub widths: Vec<usize>,
    pub preconditioning: Preconditioning,
    pub schedule: NoiseSchedule,
    pub schedule_hash: String,
    pub n_values: usize,
}

/// Write `header` as a single JSON line followed by the raw values.
pub fn write_array_file<H: Serialize>(path: &Path, header: &H, values: &[f64]) -> Result<()> {
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a file written by [`write_array_file`]; `count` extracts the expected
/// number of values from the header.
pub fn read_array_file<H: DeserializeOwned>(
    path: &Path,
    count: impl Fn(&H) -> usize,
) -> Result<(H, Vec<f64>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Checkpoint("missing header line".into()));
    }
    let header: H = serde_json::from_slice(&line)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let n = count(&header);
    if payload.len() != n * 8 {
        return Err(Error::Checkpoint(format!(
            "header promises {n} values, payload holds {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

pub fn save_checkpoint(net: &MlpDenoiser, path: &Path) -> Result<()> {
    let params = net.params();
    let header = CheckpointHeader {
        format: MLP_FORMAT.into(),
        widths: net.widths.clone(),
        preconditioning: net.precond,
        schedule: net.schedule,
        schedule_hash: net.schedule.hash(),
        n_values: params.len(),
    };
    write_array_file(path, &header, &params)
}

/// Load a checkpoint, refusing it unless it was trained under `schedule`.
pub fn load_checkpoint(path: &Path, schedule: &NoiseSchedule) -> Result<MlpDenoiser> {
    let (header, values): (CheckpointHeader, _) = read_array_file(path, |h: &CheckpointHeader| h.n_values)?;
    if header.format != MLP_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    if header.schedule_hash != header.schedule.hash() {
        return Err(Error::Checkpoint("header schedule does not match its hash".into()));
    }
    if header.schedule_hash != schedule.hash() {
        return Err(Error::Checkpoint(format!(
            "checkpoint trained with schedule {}, configured schedule is {}",
            header.schedule_hash,
            schedule.hash()
        )));
    }
    MlpDenoiser::from_params(header.widths, &values, header.preconditioning, *schedule)
}
