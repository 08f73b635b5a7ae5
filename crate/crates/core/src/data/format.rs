//! Little-endian dataset container:
//!
//! ```text
//! "MBDY" | u32 version=1 | str env_id | str shift_kind | str shift_level | str behavior
//! u32 state_dim | u32 action_dim | u64 count
//! count x [s: f32 x state_dim][a: f32 x action_dim][r: f32][s': f32 x state_dim][done: u8]
//! [mean: f32 x state_dim][std: f32 x state_dim]
//! ```
//! Strings are a u32 byte length followed by UTF-8.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{DatasetMeta, Normalizer, TransitionDataset};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"MBDY";
const VERSION: u32 = 1;

pub(crate) struct ByteWriter<W> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f32s(&mut self, v: &[f32]) -> Result<()> {
        for x in v {
            self.bytes(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub(crate) fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.bytes(s.as_bytes())
    }

    pub(crate) fn into_inner(self) -> W {
        self.inner
    }
}

/// Cursor over an in-memory file; every read names the field it decodes.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(field, "unexpected end"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format("magic", "bad magic"));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(field, "size overflow"))?,
            field,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn str(&mut self, field: &str) -> Result<String> {
        let len = self.u32(field)? as usize;
        let bytes = self.take(len, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(field, "invalid UTF-8"))
    }

    pub(crate) fn version(&mut self, supported: u32) -> Result<u32> {
        let v = self.u32("version")?;
        if v != supported {
            return Err(Error::format("version", format!("unsupported version {v}")));
        }
        Ok(v)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                "trailer",
                format!("{} unexpected trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn write_dataset<W: Write>(ds: &TransitionDataset, out: W) -> Result<W> {
    let mut w = ByteWriter::new(out);
    w.bytes(DATASET_MAGIC)?;
    w.u32(VERSION)?;
    w.str(&ds.meta.env_id)?;
    w.str(&ds.meta.shift_kind)?;
    w.str(&ds.meta.shift_level)?;
    w.str(&ds.meta.behavior)?;
    w.u32(ds.state_dim() as u32)?;
    w.u32(ds.action_dim() as u32)?;
    w.u64(ds.len() as u64)?;
    for i in 0..ds.len() {
        w.f32s(ds.state(i))?;
        w.f32s(ds.action(i))?;
        w.f32s(&[ds.reward(i)])?;
        w.f32s(ds.next_state(i))?;
        w.u8(ds.done(i) as u8)?;
    }
    w.f32s(&ds.normalizer.mean)?;
    w.f32s(&ds.normalizer.std)?;
    Ok(w.into_inner())
}

pub fn read_dataset(bytes: &[u8]) -> Result<TransitionDataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(VERSION)?;
    let meta = DatasetMeta {
        env_id: r.str("env_id")?,
        shift_kind: r.str("shift_kind")?,
        shift_level: r.str("shift_level")?,
        behavior: r.str("behavior_kind")?,
    };
    let state_dim = r.u32("state_dim")? as usize;
    let action_dim = r.u32("action_dim")? as usize;
    let count = r.u64("count")? as usize;
    let domain = TransitionDataset::domain_for_shift(&meta.shift_kind);
    let mut ds = TransitionDataset::new(meta, domain, state_dim, action_dim);
    for _ in 0..count {
        let s = r.f32s(state_dim, "record.s")?;
        let a = r.f32s(action_dim, "record.a")?;
        let rew = r.f32s(1, "record.r")?[0];
        let s_next = r.f32s(state_dim, "record.s_next")?;
        let done = match r.u8("record.done")? {
            0 => false,
            1 => true,
            other => return Err(Error::format("record.done", format!("flag byte {other}"))),
        };
        ds.push(&s, &a, rew, &s_next, done)
            .map_err(|e| Error::format("record", e.to_string()))?;
    }
    ds.normalizer = Normalizer {
        mean: r.f32s(state_dim, "normalizer.mean")?,
        std: r.f32s(state_dim, "normalizer.std")?,
    };
    r.finish()?;
    Ok(ds)
}

pub fn save_dataset(ds: &TransitionDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = write_dataset(ds, BufWriter::new(file))?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TransitionDataset> {
    read_dataset(&fs::read(path)?)
}
