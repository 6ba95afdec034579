//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SEMBCNN\0"
//! version    u32      1
//! config     6 x u32  in_channels, conv1_filters, conv2_filters, kernel, pool_out, n_classes
//! tensors    u32      count, then per tensor: ndim u32, dims u64 x ndim, values f64 LE
//! ```
//!
//! Tensors follow `PARAM_NAMES` order, then bn1 running mean and variance,
//! then bn2 running mean and variance (each 1-D).

use std::fs;
use std::path::Path;

use super::model::{Cnn, CnnConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEMBCNN\0";
const VERSION: u32 = 1;

fn put_tensor(out: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_checkpoint(model: &Cnn) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let c = &model.config;
    for v in [c.in_channels, c.conv1_filters, c.conv2_filters, c.kernel, c.pool_out, c.n_classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32 + 4).to_le_bytes());
    for p in params {
        put_tensor(&mut out, p.shape(), p.data());
    }
    for bn in [&model.bn1, &model.bn2] {
        put_tensor(&mut out, &[bn.running_mean.len()], &bn.running_mean);
        put_tensor(&mut out, &[bn.running_var.len()], &bn.running_var);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Tensor::new(shape, data)
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Cnn> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let config = CnnConfig {
        in_channels: dims[0],
        conv1_filters: dims[1],
        conv2_filters: dims[2],
        kernel: dims[3],
        pool_out: dims[4],
        n_classes: dims[5],
    };
    let mut model = Cnn::new(config, 0)?;
    let count = cur.u32()? as usize;
    let n_params = model.params().len();
    if count != n_params + 4 {
        return Err(Error::Format(format!("expected {} tensors, found {count}", n_params + 4)));
    }
    for p in model.params_mut() {
        let t = cur.tensor()?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!("tensor shape {:?}, expected {:?}", t.shape(), p.shape())));
        }
        *p = t;
    }
    for bn in [&mut model.bn1, &mut model.bn2] {
        for stat in [&mut bn.running_mean, &mut bn.running_var] {
            let t = cur.tensor()?;
            if t.len() != stat.len() {
                return Err(Error::Format("running statistics length mismatch".into()));
            }
            *stat = t.into_data();
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Cnn, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Cnn> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = Cnn::new(CnnConfig::new(2, 5), 42).unwrap();
        m.bn2.running_mean[3] = 0.125;
        let bytes = write_checkpoint(&m);
        assert_eq!(read_checkpoint(&bytes).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let m = Cnn::new(CnnConfig::new(1, 2), 0).unwrap();
        let bytes = write_checkpoint(&m);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }
}
