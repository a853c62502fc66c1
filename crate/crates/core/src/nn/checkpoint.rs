//! Binary weight files.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "WSNTNET\0"
//! version  u32 LE
//! hlen     u32 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON (config, provenance, segment tables, Adam step)
//! payload  f64 LE   parameters, Adam first moments, Adam second moments, buffers
//! ```
//!
//! Parameters and buffers follow the segment order listed in the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::build_layout;
use super::{Adam, NetConfig, NetError, PolicyValueNet, Segment};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSNTNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Digest of the network the weights were trained on.
    pub spec_hash: Option<String>,
    /// Top-level seed of the run that produced them.
    pub run_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    provenance: Provenance,
    adam_step: u64,
    segments: Vec<Segment>,
    buffers: Vec<Segment>,
}

/// Rejects configurations that could not have been written by a sane run,
/// before anything is allocated for them.
fn check_loadable(cfg: &NetConfig) -> Result<(), NetError> {
    cfg.validate().map_err(|e| NetError::Header(e.to_string()))?;
    let limits = [
        ("channels", cfg.channels, 64),
        ("board", cfg.board, 256),
        ("conv_blocks", cfg.conv_blocks, 256),
        ("filters", cfg.filters, 1024),
        ("kernel", cfg.kernel, 15),
        ("value_head_hidden", cfg.value_head_hidden, 1 << 16),
    ];
    for (name, v, max) in limits {
        if v > max {
            return Err(NetError::Header(format!("{name} = {v} exceeds {max}")));
        }
    }
    Ok(())
}

impl PolicyValueNet {
    pub fn to_bytes(&self, provenance: &Provenance) -> Vec<u8> {
        let header = Header {
            config: self.config().clone(),
            provenance: provenance.clone(),
            adam_step: self.adam().step,
            segments: self.segments().to_vec(),
            buffers: self.buffer_segments().to_vec(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let values = 3 * self.param_count() + self.buffers().len();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * values);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let adam = self.adam();
        for v in self.params().iter().chain(&adam.m).chain(&adam.v).chain(self.buffers()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Provenance), NetError> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(NetError::BadMagic);
        }
        let word = |at: usize| -> Result<u32, NetError> {
            let b = bytes.get(at..at + 4).ok_or(NetError::Truncated)?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let version = word(8)?;
        if version != CHECKPOINT_VERSION {
            return Err(NetError::UnsupportedVersion(version));
        }
        let hlen = word(12)? as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(NetError::Truncated);
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| NetError::Header(e.to_string()))?;
        check_loadable(&header.config)?;
        let (_, layout) = build_layout(&header.config);
        if header.segments != layout.segments || header.buffers != layout.buffers {
            return Err(NetError::Mismatch("segment table does not match the configured architecture".into()));
        }
        let (np, nb) = (layout.params, layout.buffer_len);
        let payload = &body[hlen..];
        if payload.len() != 8 * (3 * np + nb) {
            return Err(NetError::Truncated);
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let params = take(np);
        let m = take(np);
        let v = take(np);
        let buffers = take(nb);
        if !params.iter().chain(&m).chain(&v).chain(&buffers).all(|x| x.is_finite()) {
            return Err(NetError::Mismatch("checkpoint holds non-finite values".into()));
        }
        let adam = Adam { m, v, step: header.adam_step };
        let net = Self::from_parts(header.config, params, buffers, adam)?;
        Ok((net, header.provenance))
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save_weights(&self, path: &Path, provenance: &Provenance) -> Result<(), NetError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes(provenance))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<(Self, Provenance), NetError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads weights and refuses them unless they fit `expected`'s input and
    /// architecture (the initialization seed may differ).
    pub fn load_matching(path: &Path, expected: &NetConfig) -> Result<(Self, Provenance), NetError> {
        let (net, prov) = Self::load_weights(path)?;
        let got = net.config();
        if got.input_shape() != expected.input_shape() {
            return Err(NetError::Mismatch(format!(
                "checkpoint expects inputs {:?}, this network needs {:?}",
                got.input_shape(),
                expected.input_shape()
            )));
        }
        let arch = |c: &NetConfig| (c.conv_blocks, c.filters, c.kernel, c.use_residual, c.use_batchnorm, c.value_head_hidden);
        if arch(got) != arch(expected) {
            return Err(NetError::Mismatch("checkpoint architecture differs from the configured one".into()));
        }
        Ok((net, prov))
    }
}
