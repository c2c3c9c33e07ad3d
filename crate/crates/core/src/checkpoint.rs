//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 4            | magic `WRPN`                                         |
//! | 2            | format version (`u16`)                               |
//! | 4            | header length `h` (`u32`)                            |
//! | h            | header, compact JSON ([`CheckpointHeader`])          |
//! | rest         | payload of little-endian `f64` values                |
//!
//! The payload holds, in order: every parameter tensor (conv1 kernels, conv1
//! biases, conv2 ..., conv3 ..., head-a weights, head-a biases, head-t
//! weights, head-t biases), the optimizer first moments in the same order,
//! the second moments, and finally the class representative series
//! (`dim * len` values from `representative_shape`, possibly none). The header records the
//! payload's SHA-256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Label, Series};
use crate::error::{Error, Result};
use crate::net::{AdamState, NetConfig, ParamSet, WarperNetwork};
use crate::report::write_atomic;

pub const MAGIC: &[u8; 4] = b"WRPN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dataset: String,
    pub label: Label,
    pub epoch: usize,
    pub loss: f64,
    pub seed: u64,
    pub steps: u64,
    pub net_config: NetConfig,
    pub dtype: String,
    pub param_count: usize,
    /// `(dim, len)` of the stored representative, or `None`.
    pub representative_shape: Option<(usize, usize)>,
    pub payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub network: WarperNetwork,
    pub representative: Option<Series>,
}

/// Fields of the header the caller chooses.
#[derive(Clone, Debug, Default)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub label: Label,
    pub epoch: usize,
    pub loss: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode(
    net: &WarperNetwork,
    meta: &CheckpointMeta,
    representative: Option<&Series>,
) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(8 * (3 * net.params().len()));
    for set in [net.params(), &net.adam().first, &net.adam().second] {
        for v in set.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(r) = representative {
        for v in r.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        dataset: meta.dataset.clone(),
        label: meta.label,
        epoch: meta.epoch,
        loss: meta.loss,
        seed: net.seed(),
        steps: net.steps(),
        net_config: net.config().clone(),
        dtype: "f64".into(),
        param_count: net.params().len(),
        representative_shape: representative.map(|r| (r.dim(), r.len())),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(10 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let integrity = |m: &str| Error::Integrity(m.to_string());
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(integrity("missing WRPN magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let body = &bytes[10..];
    if body.len() < hlen {
        return Err(integrity("header is truncated"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Integrity(format!("bad header: {e}")))?;
    if header.dtype != "f64" {
        return Err(Error::Integrity(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    let cfg = header.net_config.clone();
    cfg.validate()?;
    let n = cfg.param_count();
    if n != header.param_count {
        return Err(integrity(
            "parameter count disagrees with the network config",
        ));
    }
    let rep_len = header.representative_shape.map_or(0, |(d, l)| d * l);
    let payload = &body[hlen..];
    let expected = 8 * (3 * n + rep_len);
    if payload.len() != expected {
        return Err(Error::Integrity(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(integrity("payload checksum mismatch"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut read_set = || {
        let mut set = ParamSet::zeros(&cfg);
        for v in set.tensors.iter_mut().flatten() {
            *v = values.next().expect("length checked");
        }
        set
    };
    let params = read_set();
    let first = read_set();
    let second = read_set();
    let representative = match header.representative_shape {
        Some((d, l)) => Some(Series::new(d, l, values.collect())?),
        None => None,
    };
    let adam = AdamState {
        first,
        second,
        steps: header.steps,
    };
    let network = WarperNetwork::from_parts(cfg, params, adam, header.seed)?;
    Ok(Checkpoint {
        header,
        network,
        representative,
    })
}

/// Writes atomically through a sibling temp file.
pub fn save_checkpoint(
    net: &WarperNetwork,
    meta: &CheckpointMeta,
    representative: Option<&Series>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode(net, meta, representative)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
