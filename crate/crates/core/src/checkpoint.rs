//! Shared binary container for network checkpoints.
//!
//! ```text
//! magic(4) | u32 version=1
//! u32 n_scalars | f64 x n_scalars
//! u32 n_vectors | (u32 len | f32 x len) x n_vectors
//! u32 n_nets | (u32 n_widths | u32 x n_widths) x n_nets      architecture header
//! f32 parameter blocks, net by net, in w0 b0 w1 b1 ... order
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::data::format::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::math::{Mlp, Tensor};

const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 4],
    pub scalars: Vec<f64>,
    pub vectors: Vec<Vec<f32>>,
    pub nets: Vec<Mlp<f32>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(Vec::new());
        // Writes into a Vec cannot fail.
        let _ = (|| -> Result<()> {
            w.bytes(&self.magic)?;
            w.u32(VERSION)?;
            w.u32(self.scalars.len() as u32)?;
            for s in &self.scalars {
                w.bytes(&s.to_le_bytes())?;
            }
            w.u32(self.vectors.len() as u32)?;
            for v in &self.vectors {
                w.u32(v.len() as u32)?;
                w.f32s(v)?;
            }
            w.u32(self.nets.len() as u32)?;
            for net in &self.nets {
                w.u32(net.widths().len() as u32)?;
                for &width in net.widths() {
                    w.u32(width as u32)?;
                }
            }
            for net in &self.nets {
                for p in net.params() {
                    w.f32s(p.data())?;
                }
            }
            Ok(())
        })();
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(magic)?;
        r.version(VERSION)?;
        let n_scalars = r.u32("n_scalars")? as usize;
        let mut scalars = Vec::with_capacity(n_scalars.min(1024));
        for _ in 0..n_scalars {
            let b = r.take(8, "scalars")?;
            scalars.push(f64::from_le_bytes(b.try_into().unwrap()));
        }
        let n_vectors = r.u32("n_vectors")? as usize;
        let mut vectors = Vec::new();
        for _ in 0..n_vectors {
            let len = r.u32("vector.len")? as usize;
            vectors.push(r.f32s(len, "vector")?);
        }
        let n_nets = r.u32("n_nets")? as usize;
        let mut archs = Vec::new();
        for _ in 0..n_nets {
            let n = r.u32("arch.n_widths")? as usize;
            let widths = (0..n)
                .map(|_| r.u32("arch.width").map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            archs.push(widths);
        }
        let mut nets = Vec::with_capacity(n_nets);
        for widths in archs {
            let mut net =
                Mlp::<f32>::zeros(&widths).map_err(|e| Error::format("arch", e.to_string()))?;
            for p in net.params_mut() {
                let data = r.f32s(p.len(), "params")?;
                *p = Tensor::from_vec(p.rows(), p.cols(), data)?;
            }
            nets.push(net);
        }
        r.finish()?;
        Ok(Self {
            magic: *magic,
            scalars,
            vectors,
            nets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, magic: &[u8; 4]) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, magic)
    }

    pub(crate) fn expect_shape(&self, scalars: usize, vectors: usize, nets: usize) -> Result<()> {
        if self.scalars.len() != scalars || self.vectors.len() != vectors || self.nets.len() != nets
        {
            return Err(Error::format(
                "arch",
                format!(
                    "expected {scalars} scalars / {vectors} vectors / {nets} nets, found {} / {} / {}",
                    self.scalars.len(),
                    self.vectors.len(),
                    self.nets.len()
                ),
            ));
        }
        Ok(())
    }
}
