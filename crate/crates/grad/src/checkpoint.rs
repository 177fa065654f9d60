//! Binary weight file.
//!
//! Layout (little endian): magic `NPMW`, u8 version, u32 tensor count, then
//! per tensor u16 name length, name bytes, u8 rank, u32 per dimension and
//! the values as f32. Adam moments are written as `<name>.adam_m` and
//! `<name>.adam_v`; their presence marks a parameter as trainable. The
//! optimiser step counter is stored as `adam.step`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NPMW";
pub const VERSION: u8 = 1;
const M_SUFFIX: &str = ".adam_m";
const V_SUFFIX: &str = ".adam_v";
const STEP_NAME: &str = "adam.step";

fn bad(msg: impl Into<String>) -> GradError {
    GradError::Checkpoint(msg.into())
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| bad("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let mut count: u32 = 0;
    for p in store.iter() {
        write_tensor(&mut body, &p.name, p.value.shape(), p.value.data())?;
        count += 1;
        if p.trainable {
            write_tensor(&mut body, &format!("{}{M_SUFFIX}", p.name), p.value.shape(), &p.m)?;
            write_tensor(&mut body, &format!("{}{V_SUFFIX}", p.name), p.value.shape(), &p.v)?;
            count += 2;
        }
    }
    write_tensor(&mut body, STEP_NAME, &[2], &split_step(store.step))?;
    count += 1;
    let mut out = Vec::with_capacity(body.len() + 9);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

// Two f32-exact halves so large counters survive.
fn split_step(step: u64) -> [f64; 2] {
    [(step >> 16) as f64, (step & 0xffff) as f64]
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }

    let is_moment = |n: &str| n.ends_with(M_SUFFIX) || n.ends_with(V_SUFFIX);
    let mut store = ParamStore::new();
    for (name, t) in &entries {
        if name == STEP_NAME {
            let d = t.data();
            if d.len() != 2 {
                return Err(bad("malformed step counter"));
            }
            store.step = ((d[0] as u64) << 16) | d[1] as u64;
        } else if !is_moment(name) {
            let trainable = entries.iter().any(|(n, _)| *n == format!("{name}{M_SUFFIX}"));
            store.insert(name, t.clone(), trainable)?;
        }
    }
    for (name, t) in entries {
        let (base, first) = if let Some(b) = name.strip_suffix(M_SUFFIX) {
            (b, true)
        } else if let Some(b) = name.strip_suffix(V_SUFFIX) {
            (b, false)
        } else {
            continue;
        };
        let p = store
            .get_mut(base)
            .map_err(|_| bad(format!("moment without parameter: {name}")))?;
        if t.shape() != p.value.shape() {
            return Err(bad(format!("moment shape mismatch for {base}")));
        }
        if first {
            p.m = t.into_data();
        } else {
            p.v = t.into_data();
        }
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = to_bytes(store)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
