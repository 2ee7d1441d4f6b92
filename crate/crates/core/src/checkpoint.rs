//! Binary checkpoint container. One file holds everything a run needs to
//! resume bit-exactly: network parameters, optimizer moments, replay
//! buffers, per-environment state, and random-stream positions.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes   "TNDM"
//! version          u32
//! config_hash      u16 length + UTF-8 (lowercase hex of SHA-256)
//! obs_layout       u16 length + UTF-8
//! critic_layout    u16 length + UTF-8
//! meta             u64 length + UTF-8 JSON (CheckpointMeta)
//! array_count      u32
//! per array:
//!   name           u16 length + UTF-8
//!   len            u64 element count
//!   data           f32 × len
//! ```
//!
//! Saving is atomic: bytes go to a sibling temp file which is renamed over
//! the destination, so a crash never leaves a half-written checkpoint.

use crate::error::{Error, Result};
use crate::rollout::EnvSnapshot;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"TNDM";
pub const FORMAT_VERSION: u32 = 1;

/// Ring-buffer bookkeeping stored alongside the flattened pair arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BufMeta {
    pub capacity: usize,
    pub len: usize,
    pub write: usize,
}

/// Structured (JSON) portion of a checkpoint. Field order is fixed by this
/// struct, so serializing the same state twice yields identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// "single" or "multi".
    pub phase: String,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub critic_dim: usize,
    pub action_dim: usize,
    pub actor_sizes: Vec<usize>,
    pub critic_sizes: Vec<usize>,
    /// Empty when the checkpoint carries no discriminator.
    pub disc_sizes: Vec<usize>,
    pub policy_adam_step: u64,
    pub critic_adam_step: u64,
    pub disc_adam_step: u64,
    pub updates_done: u64,
    pub env_steps_done: u64,
    pub trainer_rng_word_pos: [u64; 2],
    pub demo_buf: BufMeta,
    pub agent_buf: BufMeta,
    pub envs: Vec<EnvSnapshot>,
}

/// A parsed checkpoint: identity strings, structured meta, and named f32
/// arrays in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub obs_layout: String,
    pub critic_layout: String,
    pub meta: CheckpointMeta,
    arrays: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(
        config_hash: String,
        obs_layout: String,
        critic_layout: String,
        meta: CheckpointMeta,
    ) -> Self {
        Self {
            config_hash,
            obs_layout,
            critic_layout,
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_array(&mut self, name: &str, data: Vec<f32>) -> Result<()> {
        if self.arrays.iter().any(|(n, _)| n == name) {
            return Err(Error::Checkpoint(format!("duplicate array `{name}`")));
        }
        self.arrays.push((name.to_string(), data));
        Ok(())
    }

    pub fn array(&self, name: &str) -> Result<&[f32]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    pub fn has_array(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _)| n == name)
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta_json = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("meta does not serialize: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_short_str(&mut out, "config_hash", &self.config_hash)?;
        write_short_str(&mut out, "obs_layout", &self.obs_layout)?;
        write_short_str(&mut out, "critic_layout", &self.critic_layout)?;
        out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_json);
        let count = u32::try_from(self.arrays.len())
            .map_err(|_| Error::Checkpoint("too many arrays".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, data) in &self.arrays {
            write_short_str(&mut out, "array name", name)?;
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:02x?}; not a checkpoint file",
                magic
            )));
        }
        let version = cur.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}; this build reads {FORMAT_VERSION}"
            )));
        }
        let config_hash = cur.short_str("config_hash")?;
        let obs_layout = cur.short_str("obs_layout")?;
        let critic_layout = cur.short_str("critic_layout")?;
        let meta_len = cur.u64("meta length")? as usize;
        let meta_bytes = cur.take(meta_len, "meta")?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::Checkpoint(format!("meta does not parse: {e}")))?;
        let count = cur.u32("array count")? as usize;
        let mut arrays = Vec::with_capacity(count);
        for i in 0..count {
            let name = cur.short_str(&format!("name of array {i}"))?;
            let len = cur.u64(&format!("length of array `{name}`"))? as usize;
            let raw = cur.take(len * 4, &format!("data of array `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push((name, data));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last array",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            config_hash,
            obs_layout,
            critic_layout,
            meta,
            arrays,
        })
    }

    /// Atomic save: write a sibling temp file, then rename into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let tmp = path.with_extension("ckpt.tmp");
        let write_all = |p: &Path| -> std::io::Result<()> {
            let mut f = std::fs::File::create(p)?;
            f.write_all(&bytes)?;
            f.sync_all()
        };
        if let Err(e) = write_all(&tmp) {
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::io(&tmp, e));
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_short_str(out: &mut Vec<u8>, what: &str, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Checkpoint(format!("{what} longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what}: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn short_str(&mut self, what: &str) -> Result<String> {
        let len = self.take(2, what)?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}
