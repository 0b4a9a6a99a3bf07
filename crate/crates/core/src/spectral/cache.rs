//! Binary sidecar files for spectral embeddings.
//!
//! Layout (little-endian): magic `DIREMB01`, `n: u64`, `K: u64`, `K`
//! eigenvalues, then `Φ` row-major. Files are named by a SHA-256 of the
//! shape content and `K`, so a changed mesh never reuses a stale basis.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use sha2::{Digest, Sha256};

use super::SpectralEmbedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DIREMB01";

/// Hex SHA-256 over positions, faces and any extra parameters (for example
/// `K` and the local-mesh size of a point cloud).
pub fn content_key(positions: &[Point3<f64>], faces: &[[usize; 3]], extra: &[u64]) -> String {
    let mut h = Sha256::new();
    h.update((positions.len() as u64).to_le_bytes());
    for p in positions {
        for c in p.coords.iter() {
            h.update(c.to_bits().to_le_bytes());
        }
    }
    h.update((faces.len() as u64).to_le_bytes());
    for f in faces {
        for &v in f {
            h.update((v as u64).to_le_bytes());
        }
    }
    for e in extra {
        h.update(e.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl SpectralEmbedding {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * (self.k() + self.phi().len()));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.n() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.k() as u64).to_le_bytes());
        for v in self.eigenvalues().iter().chain(self.phi()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        // write then rename so readers never observe a partial file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg);
        if buf.len() < 24 || &buf[..8] != MAGIC {
            return Err(bad("not an embedding sidecar"));
        }
        let word = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().expect("8 bytes"));
        let (n, k) = (word(8) as usize, word(16) as usize);
        let count = n
            .checked_mul(k)
            .and_then(|nk| nk.checked_add(k))
            .ok_or_else(|| bad("size overflow"))?;
        if buf.len() != 24 + 8 * count {
            return Err(bad("truncated or oversized sidecar"));
        }
        let vals: Vec<f64> = buf[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_parts(n, k, vals[..k].to_vec(), vals[k..].to_vec())
    }
}

/// Path of the sidecar for `key` inside `dir`.
pub fn sidecar_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("emb_{key}.bin"))
}

/// Loads the embedding for `key` from `dir` if present and well formed,
/// otherwise computes it and stores it. With no directory, just computes.
pub fn cached_embedding(
    dir: Option<&Path>,
    key: &str,
    compute: impl FnOnce() -> Result<SpectralEmbedding>,
) -> Result<SpectralEmbedding> {
    let Some(dir) = dir else {
        return compute();
    };
    let path = sidecar_path(dir, key);
    if path.exists() {
        match SpectralEmbedding::load(&path) {
            Ok(emb) => return Ok(emb),
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let emb = compute()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emb.save(&path)?;
    Ok(emb)
}
