//! CRAS container format.
//!
//! Little-endian layout: magic `CRAS`, version `u16` (= 1), dtype `u8`
//! (0 = f32, 1 = u8, 2 = u16), bands `u16`, width `u32`, height `u32`,
//! nodata `f64`, geotransform 6 x `f64` (origin_x, pixel_size_x, 0,
//! origin_y, 0, pixel_size_y), then raw band-major, row-major samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geo::GeoTransform;
use crate::grid::{Dtype, Raster, Samples};

pub const MAGIC: [u8; 4] = *b"CRAS";
pub const VERSION: u16 = 1;

/// Hard cap on the decoded payload (samples, not bytes). Guards against
/// absurd headers before any allocation happens.
const MAX_SAMPLES: u64 = 1 << 32;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::TruncatedFile {
        path: path.to_path_buf(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }

    let trunc = |_| Error::TruncatedFile {
        path: path.to_path_buf(),
    };
    let version = r.read_u16::<LittleEndian>().map_err(trunc)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype_code = r.read_u8().map_err(trunc)?;
    let dtype = Dtype::from_code(dtype_code).ok_or(Error::UnsupportedDtype {
        path: path.to_path_buf(),
        code: dtype_code,
    })?;
    let bands = r.read_u16::<LittleEndian>().map_err(trunc)?;
    let width = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let height = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let nodata = r.read_f64::<LittleEndian>().map_err(trunc)?;
    let mut affine = [0f64; 6];
    for a in &mut affine {
        *a = r.read_f64::<LittleEndian>().map_err(trunc)?;
    }

    let n = u64::from(width) * u64::from(height) * u64::from(bands);
    if n == 0 || n > MAX_SAMPLES {
        return Err(Error::DimensionOverflow {
            path: path.to_path_buf(),
            width,
            height,
            bands,
        });
    }
    let n = n as usize;

    let mut payload = vec![0u8; n * dtype.sample_bytes()];
    r.read_exact(&mut payload).map_err(|_| Error::TruncatedFile {
        path: path.to_path_buf(),
    })?;
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::TrailingBytes {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(io_err(path, e)),
    }

    let samples = match dtype {
        Dtype::F32 => Samples::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::U8 => Samples::U8(payload),
        Dtype::U16 => Samples::U16(
            payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
    };

    let geo = GeoTransform::from_affine(affine)?;
    Raster::new(width as usize, height as usize, bands as usize, nodata, geo, samples)
}

pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if r.bands() > usize::from(u16::MAX)
        || r.width() > u32::MAX as usize
        || r.height() > u32::MAX as usize
    {
        return Err(Error::InvalidArgument(
            "raster dimensions exceed the header field widths".into(),
        ));
    }

    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| io_err(path, e);

    w.write_all(&MAGIC).map_err(werr)?;
    w.write_u16::<LittleEndian>(VERSION).map_err(werr)?;
    w.write_u8(r.dtype().code()).map_err(werr)?;
    w.write_u16::<LittleEndian>(r.bands() as u16).map_err(werr)?;
    w.write_u32::<LittleEndian>(r.width() as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(r.height() as u32).map_err(werr)?;
    w.write_f64::<LittleEndian>(r.nodata()).map_err(werr)?;
    for a in r.geo().to_affine() {
        w.write_f64::<LittleEndian>(a).map_err(werr)?;
    }

    match r.samples() {
        Samples::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(werr)?;
            }
        }
        Samples::U8(v) => w.write_all(v).map_err(werr)?,
        Samples::U16(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(werr)?;
            }
        }
    }
    w.flush().map_err(werr)
}
