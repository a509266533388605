//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "WGRKCKPT"
//! version      u32      currently 1
//! layers       u32      propagation steps t
//! k            u32      readout size
//! m_max        u32      padded query length
//! shared       u8       1 when one weight set serves every step
//! weight_sets  u32      number of stored layer weight sets
//! tensors      f64...   for each weight set: w_a, w_z, u_z, b_z, w_r, u_r,
//!                       b_r, w_h, u_h, b_h (matrices row-major, m_max x m_max;
//!                       vectors m_max); then w_x (k), b_x, c
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Hyper, ModelParams};

const MAGIC: &[u8; 8] = b"WGRKCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams, mut w: impl Write) -> std::io::Result<()> {
    let h = params.hyper;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(h.layers as u32).to_le_bytes())?;
    w.write_all(&(h.k as u32).to_le_bytes())?;
    w.write_all(&(h.m_max as u32).to_le_bytes())?;
    w.write_all(&[h.shared_weights as u8])?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for (_, t) in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn take<const N: usize>(bytes: &mut &[u8]) -> Result<[u8; N]> {
    if bytes.len() < N {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let (head, rest) = bytes.split_at(N);
    *bytes = rest;
    Ok(head.try_into().expect("split at N"))
}

fn take_u32(bytes: &mut &[u8]) -> Result<usize> {
    Ok(u32::from_le_bytes(take(bytes)?) as usize)
}

pub fn parse_checkpoint(mut bytes: &[u8]) -> Result<ModelParams> {
    if &take::<8>(&mut bytes)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = take_u32(&mut bytes)? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let layers = take_u32(&mut bytes)?;
    let k = take_u32(&mut bytes)?;
    let m_max = take_u32(&mut bytes)?;
    let shared = match take::<1>(&mut bytes)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Checkpoint(format!("bad shared flag {other}"))),
    };
    let sets = take_u32(&mut bytes)?;
    if k == 0 || m_max == 0 {
        return Err(Error::Checkpoint("k and m_max must be positive".into()));
    }
    let hyper = Hyper {
        layers,
        k,
        m_max,
        shared_weights: shared,
    };
    if sets != hyper.num_weight_sets() {
        return Err(Error::Checkpoint(format!(
            "{sets} weight sets stored, hyperparameters require {}",
            hyper.num_weight_sets()
        )));
    }
    let mut params = ModelParams::zeros(hyper);
    let expected: usize = params.num_parameters() * 8;
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} bytes of tensor data, found {}",
            bytes.len()
        )));
    }
    for (name, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(take(&mut bytes)?);
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite value in {name}")));
            }
        }
    }
    Ok(params)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ModelParams> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    parse_checkpoint(&buf)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
