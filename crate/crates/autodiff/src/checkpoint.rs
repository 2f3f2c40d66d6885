//! Model checkpoint container.
//!
//! Little-endian layout: magic `CKPT`, version `u16`, `u32` length of a
//! JSON configuration blob plus its bytes, then each parameter tensor
//! in declaration order as `u32` rank, rank x `u32` dims, and the f32
//! values. Tensors run to end of file; a truncated tensor is an error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CKPT";
pub const VERSION: u16 = 1;

/// Caps a single tensor's element count; guards the reader against
/// nonsense headers.
const MAX_ELEMENTS: u64 = 1 << 28;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    config_json: &str,
    tensors: &[&Tensor<f32>],
) -> Result<()> {
    let path = path.as_ref();
    if config_json.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("config blob too large".into()));
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| io_err(path, e);

    w.write_all(&MAGIC).map_err(werr)?;
    w.write_u16::<LittleEndian>(VERSION).map_err(werr)?;
    w.write_u32::<LittleEndian>(config_json.len() as u32).map_err(werr)?;
    w.write_all(config_json.as_bytes()).map_err(werr)?;
    for t in tensors {
        w.write_u32::<LittleEndian>(t.rank() as u32).map_err(werr)?;
        for d in t.dims() {
            w.write_u32::<LittleEndian>(*d as u32).map_err(werr)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    w.flush().map_err(werr)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(String, Vec<Tensor<f32>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let malformed = |detail: &str| Error::MalformedCheckpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| malformed("file shorter than magic"))?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| malformed("missing version"))?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let cfg_len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| malformed("missing config length"))? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg)
        .map_err(|_| malformed("truncated config blob"))?;
    let config_json =
        String::from_utf8(cfg).map_err(|_| malformed("config blob is not UTF-8"))?;

    let mut tensors = Vec::new();
    loop {
        let rank = match r.read_u32::<LittleEndian>() {
            Ok(v) => v as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(path, e)),
        };
        if rank == 0 || rank > 4 {
            return Err(malformed(&format!("tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count = 1u64;
        for _ in 0..rank {
            let d = r
                .read_u32::<LittleEndian>()
                .map_err(|_| malformed("truncated dims"))? as usize;
            if d == 0 {
                return Err(malformed("zero dimension"));
            }
            count = count.saturating_mul(d as u64);
            dims.push(d);
        }
        if count > MAX_ELEMENTS {
            return Err(malformed("tensor too large"));
        }
        let mut payload = vec![0u8; count as usize * 4];
        r.read_exact(&mut payload)
            .map_err(|_| malformed("truncated tensor payload"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(dims, data)?);
    }
    Ok((config_json, tensors))
}
