//! `RDT1` binary tensor encoding: magic, little-endian `u32` rank, `u32`
//! dims, then the row-major `f64` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const RDT_MAGIC: &[u8; 4] = b"RDT1";

// Guards against absurd allocations from corrupted headers.
const MAX_RANK: u32 = 16;
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn write_rdt<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(RDT_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated RDT1 header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_rdt<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated RDT1 magic: {e}")))?;
    if &magic != RDT_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("invalid tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut n: u64 = 1;
    for _ in 0..rank {
        let d = read_u32(r)?;
        n = n.saturating_mul(d as u64);
        shape.push(d as usize);
    }
    if n == 0 || n > MAX_ELEMENTS {
        return Err(Error::Format(format!("invalid tensor shape {shape:?}")));
    }
    let mut bytes = vec![0u8; n as usize * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated RDT1 payload: {e}")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

impl Tensor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_rdt(&mut w, self)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_rdt(&mut BufReader::new(file))
    }
}
