//! Dataset files.
//!
//! Binary layout: magic `SDEV1`, a little-endian `u32` header length, a JSON
//! header, then every trajectory's `(K+1) × N` states as little-endian `f64`
//! in row-major order, trajectories back to back.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::dataset::{Dataset, DatasetInfo};
use super::integrate::Trajectory;

pub const MAGIC: &[u8; 5] = b"SDEV1";

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    info: DatasetInfo,
    steps: usize,
    seeds: Vec<u64>,
    t0: Vec<f64>,
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        info: ds.info.clone(),
        steps: ds.steps(),
        seeds: ds.trajectories.iter().map(|t| t.seed).collect(),
        t0: ds.trajectories.iter().map(|t| t.t0).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let floats: usize = ds.trajectories.iter().map(|t| t.states.len()).sum();
    let mut out = Vec::with_capacity(9 + json.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &ds.trajectories {
        for v in &t.states {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let bad = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(bad("missing SDEV1 magic"));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(9..9 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let dim = header.info.state_dim;
    let rows = header.steps + 1;
    let n = header.seeds.len();
    if header.t0.len() != n || dim == 0 {
        return Err(bad("inconsistent header"));
    }
    let data = &bytes[9 + hlen..];
    if data.len() != n * rows * dim * 8 {
        return Err(bad("payload length does not match header"));
    }
    let values: Vec<f64> =
        data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let trajectories = values
        .chunks(rows * dim)
        .zip(header.seeds.iter().zip(&header.t0))
        .map(|(s, (&seed, &t0))| Trajectory { t0, tau: header.info.tau, dim, states: s.to_vec(), seed })
        .collect();
    Ok(Dataset::new(header.info, trajectories))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

/// CSV export: `trajectory,k,t,<state columns>`; SPDE fields use `u[j]`.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let names: Vec<String> = if ds.grid().is_some() {
        (0..ds.state_dim()).map(|j| format!("u[{j}]")).collect()
    } else {
        ds.info.feature_names.clone()
    };
    let mut out = format!("trajectory,k,t,{}\n", names.join(","));
    for (i, t) in ds.trajectories.iter().enumerate() {
        for k in 0..t.len() {
            let _ = write!(out, "{i},{k},{:?}", t.time(k));
            for v in t.state(k) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    out
}
