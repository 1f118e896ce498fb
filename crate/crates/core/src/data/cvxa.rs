//! "CVXA" activation files.
//!
//! Little-endian layout: magic `CVXA`, `u32` version (1), `u64` n, `u64` d_in,
//! `u64` d_out, then `n * d_in` f32 inputs and `n * d_out` f32 outputs, both
//! row-major.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::dataset::ActivationDataset;
use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CVXA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

pub fn encode(ds: &ActivationDataset) -> Vec<u8> {
    let n = ds.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (ds.input_dim() + ds.output_dim()));
    out.extend_from_slice(&MAGIC);
    // Writes into a Vec cannot fail.
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u64::<LittleEndian>(n as u64).unwrap();
    out.write_u64::<LittleEndian>(ds.input_dim() as u64)
        .unwrap();
    out.write_u64::<LittleEndian>(ds.output_dim() as u64)
        .unwrap();
    for v in ds.z.as_slice().iter().chain(ds.t.as_slice()) {
        out.write_f32::<LittleEndian>(*v).unwrap();
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ActivationDataset> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = cur.read_u32::<LittleEndian>().unwrap();
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let n = cur.read_u64::<LittleEndian>().unwrap();
    let d_in = cur.read_u64::<LittleEndian>().unwrap();
    let d_out = cur.read_u64::<LittleEndian>().unwrap();
    let count = n
        .checked_mul(d_in.checked_add(d_out).ok_or(Error::Truncated {
            expected: u64::MAX,
            found: bytes.len() as u64,
        })?)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN as u64))
        .ok_or(Error::Truncated {
            expected: u64::MAX,
            found: bytes.len() as u64,
        })?;
    if (bytes.len() as u64) < count {
        return Err(Error::Truncated {
            expected: count,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > count {
        return Err(Error::InvalidArgument(format!(
            "trailing bytes after CVXA payload: expected {count}, found {}",
            bytes.len()
        )));
    }
    let (n, d_in, d_out) = (n as usize, d_in as usize, d_out as usize);
    let mut read_block = |len: usize| -> Vec<f32> {
        (0..len)
            .map(|_| cur.read_f32::<LittleEndian>().unwrap())
            .collect()
    };
    let z = DenseMatrix::new(n, d_in, read_block(n * d_in))?;
    let t = DenseMatrix::new(n, d_out, read_block(n * d_out))?;
    ActivationDataset::new(z, t)
}

pub fn save_activations(ds: &ActivationDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_activations(path: impl AsRef<Path>) -> Result<ActivationDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
