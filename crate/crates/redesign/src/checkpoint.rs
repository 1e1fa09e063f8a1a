//! Binary Lyapunov-network checkpoints.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic      8 bytes  "LYAPNET\0"
//! version    u32      1
//! level      f64      sublevel value c stored with the network (0 if none)
//! layers     u32
//! per layer:
//!   q        u32      rows of G1
//!   d_in     u32      columns of G1 and G2
//!   r        u32      rows of G2 (d_out − d_in)
//!   eps      f64
//!   G1       q·d_in f64, row-major
//!   G2       r·d_in f64, row-major
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use redesign_core::linalg::Mat;
use redesign_core::{LevelSetEstimate, PdLayer, PdLyapunovNet};

pub const MAGIC: &[u8; 8] = b"LYAPNET\0";
pub const VERSION: u32 = 1;

pub fn encode(est: &LevelSetEstimate) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&est.c.to_le_bytes());
    out.extend_from_slice(&(est.net.layers.len() as u32).to_le_bytes());
    for layer in &est.net.layers {
        for dim in [layer.g1.rows(), layer.g1.cols(), layer.g2.rows()] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&layer.eps.to_le_bytes());
        for v in layer.g1.as_slice().iter().chain(layer.g2.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            bail!("truncated checkpoint at byte {}", self.pos);
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Mat::from_rows(rows, cols, &data)?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<LevelSetEstimate> {
    let mut cur = Cursor { bytes, pos: 0 };
    ensure!(cur.take(8)? == MAGIC, "not a Lyapunov network checkpoint");
    let version = cur.u32()?;
    ensure!(version == VERSION, "unsupported checkpoint version {version}");
    let c = cur.f64()?;
    let n = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let q = cur.u32()? as usize;
        let d_in = cur.u32()? as usize;
        let r = cur.u32()? as usize;
        let eps = cur.f64()?;
        let g1 = cur.mat(q, d_in)?;
        let g2 = cur.mat(r, d_in)?;
        layers.push(PdLayer::new(g1, g2, eps)?);
    }
    ensure!(cur.pos == bytes.len(), "{} trailing bytes", bytes.len() - cur.pos);
    Ok(LevelSetEstimate {
        net: PdLyapunovNet::new(layers)?,
        c,
    })
}

pub fn save(path: &Path, est: &LevelSetEstimate) -> Result<()> {
    fs::write(path, encode(est)).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<LevelSetEstimate> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}
