use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::table::DeconvTable;
use crate::error::{Error, Result};

/// Environment variable naming the on-disk table cache directory.
pub const CACHE_DIR_ENV: &str = "DECONVREG_CACHE_DIR";

const MAGIC: &[u8; 4] = b"DJTB";
const VERSION: u32 = 2;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 * 5 + 8;

/// Directory of tabulated `d_j` files, one per key.
///
/// File layout (little endian): magic `DJTB`, format version `u32`, scale
/// `u32`, then as `f64` the valid range `lo` and `hi`, grid origin, grid step
/// and frequency cutoff, the value count as `u64`, then the values as `f64`.
#[derive(Debug, Clone)]
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    /// Cache rooted at `$DECONVREG_CACHE_DIR`, if set and nonempty.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(TableCache::new)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// File name for a free-form key string.
    pub fn file_name(key: &str) -> String {
        let digest = Sha256::digest(key.as_bytes());
        let mut hex = String::with_capacity(64 + 5);
        for b in digest.iter() {
            hex.push_str(&format!("{b:02x}"));
        }
        hex.push_str(".djtb");
        hex
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(Self::file_name(key))
    }

    /// `Ok(None)` on a miss; a malformed file is an error.
    pub fn load(&self, key: &str) -> Result<Option<DeconvTable>> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        decode(&bytes)
            .map(Some)
            .map_err(|msg| Error::Cache(format!("{}: {msg}", path.display())))
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn store(&self, key: &str, table: &DeconvTable) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(key);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(table))?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Removes every cache file; returns how many were deleted.
    pub fn clear(&self) -> Result<usize> {
        let mut removed = 0;
        if !self.dir.exists() {
            return Ok(0);
        }
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "djtb") {
                fs::remove_file(&path)?;
                removed += 1;
            }
        }
        Ok(removed)
    }

    /// Number of cache files and their total size in bytes.
    pub fn stats(&self) -> Result<(usize, u64)> {
        if !self.dir.exists() {
            return Ok((0, 0));
        }
        let mut count = 0;
        let mut bytes = 0;
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if entry.path().extension().is_some_and(|e| e == "djtb") {
                count += 1;
                bytes += entry.metadata()?.len();
            }
        }
        Ok((count, bytes))
    }
}

fn encode(table: &DeconvTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * table.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&table.scale.to_le_bytes());
    out.extend_from_slice(&table.lo.to_le_bytes());
    out.extend_from_slice(&table.hi.to_le_bytes());
    out.extend_from_slice(&table.origin.to_le_bytes());
    out.extend_from_slice(&table.step.to_le_bytes());
    out.extend_from_slice(&table.cutoff.to_le_bytes());
    out.extend_from_slice(&(table.values.len() as u64).to_le_bytes());
    for v in &table.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> std::result::Result<DeconvTable, String> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err("not a table file".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(format!("format version {version}, expected {VERSION}"));
    }
    let scale = u32_at(8);
    let lo = f64_at(12);
    let hi = f64_at(20);
    let origin = f64_at(28);
    let step = f64_at(36);
    let cutoff = f64_at(44);
    let len = u64::from_le_bytes(bytes[52..60].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + 8 * len || len < 2 {
        return Err(format!("truncated: {} bytes for {len} values", bytes.len()));
    }
    let values = (0..len).map(|i| f64_at(HEADER_LEN + 8 * i)).collect();
    Ok(DeconvTable { scale, lo, hi, origin, step, values, cutoff })
}
