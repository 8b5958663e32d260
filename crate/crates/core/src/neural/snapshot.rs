//! Parameter checkpoints: one line of JSON metadata, then the flat
//! parameter vector as little-endian `f64`s.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::value::ValueFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    /// `"policy"` or `"value"`.
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
    pub num_params: usize,
}

pub fn write_snapshot<W: Write>(mut w: W, header: &SnapshotHeader, params: &[f64]) -> Result<()> {
    if header.num_params != params.len() {
        return Err(Error::domain("snapshot header does not match parameter count"));
    }
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(r: R) -> Result<(SnapshotHeader, Vec<f64>)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != header.num_params * 8 {
        return Err(Error::domain(format!(
            "snapshot body holds {} bytes, header announces {} parameters",
            bytes.len(),
            header.num_params
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, params))
}

impl GaussianPolicy {
    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<()> {
        let header = SnapshotHeader {
            kind: "policy".into(),
            layer_sizes: self.mean_net.sizes().to_vec(),
            log_std: Some(self.log_std.clone()),
            num_params: self.num_params(),
        };
        write_snapshot(w, &header, &self.flat_params())
    }

    pub fn read_snapshot<R: Read>(r: R) -> Result<Self> {
        let (header, params) = read_snapshot(r)?;
        if header.kind != "policy" {
            return Err(Error::domain(format!("expected a policy snapshot, found `{}`", header.kind)));
        }
        let action_dim = *header.layer_sizes.last().unwrap_or(&0);
        let mut policy = GaussianPolicy {
            mean_net: Mlp::zeros(&header.layer_sizes)?,
            log_std: vec![0.0; action_dim],
        };
        policy.set_flat_params(&params)?;
        Ok(policy)
    }
}

impl ValueFunction {
    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<()> {
        let header = SnapshotHeader {
            kind: "value".into(),
            layer_sizes: self.net.sizes().to_vec(),
            log_std: None,
            num_params: self.net.num_params(),
        };
        write_snapshot(w, &header, self.net.params())
    }

    pub fn read_snapshot<R: Read>(r: R) -> Result<Self> {
        let (header, params) = read_snapshot(r)?;
        if header.kind != "value" {
            return Err(Error::domain(format!("expected a value snapshot, found `{}`", header.kind)));
        }
        Ok(ValueFunction {
            net: Mlp::from_params(&header.layer_sizes, params)?,
        })
    }
}
