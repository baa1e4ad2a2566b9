//! `EVFP` checkpoint files: parameters in `<path>`, optimizer state in
//! `<path>.opt`. Both use the same record layout:
//!
//! ```text
//! "EVFP" u16 version
//! repeat { u32 name_len, name (UTF-8), u8 rank, rank x u32 dims, f32 data }
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{EvfError, Result};
use crate::tensor::Tensor;

use super::params::{Moments, ParamStore};

pub const MAGIC: &[u8; 4] = b"EVFP";
pub const VERSION: u16 = 1;

const STEP_RECORD: &str = "adam/step";

pub fn encode_records<'a>(records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(EvfError::Format {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_records(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(EvfError::Format {
            offset: 0,
            detail: "bad magic, expected EVFP".into(),
        });
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(EvfError::Format {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let start = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| EvfError::Format {
                offset: start + 4,
                detail: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = r.take(n * 4, "data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| EvfError::Format {
            offset: start,
            detail: format!("record `{name}`: {e}"),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn opt_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn step_tensor(step: u64) -> Tensor {
    let lo = f32::from_bits(step as u32);
    let hi = f32::from_bits((step >> 32) as u32);
    Tensor::vector(vec![lo, hi])
}

/// Writes parameters to `path` and optimizer state to `path.opt`.
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode_records(store.iter()))?;
    let step = step_tensor(store.step());
    let mut opt: Vec<(String, &Tensor)> = vec![(STEP_RECORD.to_string(), &step)];
    for name in store.names() {
        let m = store.moments(name).unwrap();
        opt.push((format!("m/{name}"), &m.m));
        opt.push((format!("v/{name}"), &m.v));
    }
    write_atomic(
        &opt_path(path),
        &encode_records(opt.iter().map(|(n, t)| (n.as_str(), *t))),
    )
}

/// Loads parameters, and optimizer state when `path.opt` exists.
pub fn load(path: &Path) -> Result<ParamStore> {
    if !path.exists() {
        return Err(EvfError::MissingPath(path.to_path_buf()));
    }
    let mut store = ParamStore::new();
    for (name, t) in decode_records(&fs::read(path)?)? {
        store.insert(&name, t)?;
    }
    let op = opt_path(path);
    if op.exists() {
        let mut step = 0u64;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in decode_records(&fs::read(&op)?)? {
            if name == STEP_RECORD {
                let d = t.data();
                step = d[0].to_bits() as u64 | ((d[1].to_bits() as u64) << 32);
            } else if let Some(p) = name.strip_prefix("m/") {
                m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix("v/") {
                v.insert(p.to_string(), t);
            }
        }
        let mut moments = BTreeMap::new();
        for (name, mt) in m {
            let vt = v.remove(&name).ok_or_else(|| EvfError::Format {
                offset: 0,
                detail: format!("missing second moment for `{name}`"),
            })?;
            moments.insert(name, Moments { m: mt, v: vt });
        }
        store.set_optimizer_state(step, moments)?;
    }
    Ok(store)
}
