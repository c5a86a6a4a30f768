//! On-disk Green-column cache.
//!
//! Layout: magic `BILAP1`, `n` (1 byte), `M` (u32 LE), source index
//! (`n × u32` LE), `(M−1)^n` interior values (f64 LE, interior rank order),
//! then a CRC-32 (IEEE) trailer over all preceding bytes (u32 LE). Readers
//! reject any header mismatch or checksum failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 6] = b"BILAP1";

#[derive(Debug)]
pub enum CacheError {
    Io(std::io::Error),
    /// Wrong magic, header mismatch, truncation or bad checksum.
    Corrupt(String),
}

impl std::fmt::Display for CacheError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CacheError::Io(e) => write!(f, "cache io error: {e}"),
            CacheError::Corrupt(m) => write!(f, "cache corrupt: {m}"),
        }
    }
}

fn crc32(data: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, t) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xedb88320 ^ (c >> 1) } else { c >> 1 };
        }
        *t = c;
    }
    let mut crc = 0xffffffffu32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xff) as usize] ^ (crc >> 8);
    }
    crc ^ 0xffffffff
}

pub fn column_path(dir: &Path, n: usize, m: usize, y: &[i64]) -> PathBuf {
    let coords: Vec<String> = y.iter().take(n).map(|c| c.to_string()).collect();
    dir.join(format!("green_n{}_M{}_y{}.bin", n, m, coords.join("_")))
}

pub fn write_column(
    path: &Path,
    n: usize,
    m: usize,
    y: &[i64],
    values: &[f64],
) -> Result<(), CacheError> {
    let mut buf = Vec::with_capacity(15 + 4 * n + 8 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.push(n as u8);
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    for d in 0..n {
        buf.extend_from_slice(&(y[d] as u32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CacheError::Io)?;
    }
    let mut f = fs::File::create(path).map_err(CacheError::Io)?;
    f.write_all(&buf).map_err(CacheError::Io)
}

pub fn read_column(path: &Path, n: usize, m: usize, y: &[i64]) -> Result<Vec<f64>, CacheError> {
    let buf = fs::read(path).map_err(CacheError::Io)?;
    let expected = (m - 1).pow(n as u32);
    let header = 6 + 1 + 4 + 4 * n;
    let total = header + 8 * expected + 4;
    if buf.len() != total {
        return Err(CacheError::Corrupt(format!("length {} != expected {total}", buf.len())));
    }
    if &buf[..6] != MAGIC {
        return Err(CacheError::Corrupt("bad magic".into()));
    }
    if buf[6] as usize != n {
        return Err(CacheError::Corrupt(format!("dimension {} != {n}", buf[6])));
    }
    let m_read = u32::from_le_bytes(buf[7..11].try_into().unwrap()) as usize;
    if m_read != m {
        return Err(CacheError::Corrupt(format!("M {m_read} != {m}")));
    }
    for d in 0..n {
        let off = 11 + 4 * d;
        let c = u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as i64;
        if c != y[d] {
            return Err(CacheError::Corrupt(format!("source index {c} != {}", y[d])));
        }
    }
    let crc_stored = u32::from_le_bytes(buf[total - 4..].try_into().unwrap());
    let crc_actual = crc32(&buf[..total - 4]);
    if crc_stored != crc_actual {
        return Err(CacheError::Corrupt(format!(
            "checksum {crc_actual:#010x} != stored {crc_stored:#010x}"
        )));
    }
    let mut values = Vec::with_capacity(expected);
    for i in 0..expected {
        let off = header + 8 * i;
        values.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
    }
    Ok(values)
}
