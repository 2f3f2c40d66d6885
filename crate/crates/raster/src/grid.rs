use crate::error::{Error, Result};
use crate::geo::GeoTransform;

/// Sample type of a raster band. All bands of one raster share a dtype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
    U16,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::U8 => 1,
            Dtype::U16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::U8),
            2 => Some(Dtype::U16),
            _ => None,
        }
    }

    pub fn sample_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
            Dtype::U16 => 2,
        }
    }
}

/// Band-major, row-major sample storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::F32(v) => v.len(),
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Samples::F32(_) => Dtype::F32,
            Samples::U8(_) => Dtype::U8,
            Samples::U16(_) => Dtype::U16,
        }
    }
}

/// Default nodata sentinel for f32 rasters.
pub const DEFAULT_NODATA_F32: f64 = -9999.0;
/// Nodata sentinel for u8 label rasters (255 = unlabeled).
pub const NODATA_LABEL: u8 = 255;

/// Georeferenced multi-band grid; the universal currency of the pipeline.
///
/// Samples are stored band-major, row-major: `index = (band * height + row) *
/// width + col`. Non-nodata values must be finite; the nodata sentinel is a
/// single value shared by all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: usize,
    nodata: f64,
    geo: GeoTransform,
    samples: Samples,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        nodata: f64,
        geo: GeoTransform,
        samples: Samples,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        if !nodata.is_finite() {
            return Err(Error::InvalidArgument("nodata sentinel must be finite".into()));
        }
        let expect = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(bands))
            .ok_or(Error::DataLength { expect: usize::MAX, got: samples.len() })?;
        if samples.len() != expect {
            return Err(Error::DataLength {
                expect,
                got: samples.len(),
            });
        }
        let r = Self {
            width,
            height,
            bands,
            nodata,
            geo,
            samples,
        };
        r.check_finite()?;
        Ok(r)
    }

    /// All-nodata f32 raster.
    pub fn filled_f32(width: usize, height: usize, bands: usize, fill: f32, nodata: f64, geo: GeoTransform) -> Result<Self> {
        Self::new(
            width,
            height,
            bands,
            nodata,
            geo,
            Samples::F32(vec![fill; width * height * bands]),
        )
    }

    pub fn filled_u8(width: usize, height: usize, bands: usize, fill: u8, nodata: f64, geo: GeoTransform) -> Result<Self> {
        Self::new(
            width,
            height,
            bands,
            nodata,
            geo,
            Samples::U8(vec![fill; width * height * bands]),
        )
    }

    fn check_finite(&self) -> Result<()> {
        if let Samples::F32(v) = &self.samples {
            let plane = self.width * self.height;
            for (i, x) in v.iter().enumerate() {
                if !x.is_finite() && f64::from(*x) != self.nodata {
                    return Err(Error::NonFiniteSample {
                        band: i / plane,
                        index: i % plane,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn dtype(&self) -> Dtype {
        self.samples.dtype()
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    /// Number of samples per band.
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        (band * self.height + row) * self.width + col
    }

    /// Sample widened to f64, for dtype-agnostic readers.
    pub fn value(&self, band: usize, row: usize, col: usize) -> f64 {
        let i = self.index(band, row, col);
        match &self.samples {
            Samples::F32(v) => f64::from(v[i]),
            Samples::U8(v) => f64::from(v[i]),
            Samples::U16(v) => f64::from(v[i]),
        }
    }

    pub fn is_nodata(&self, band: usize, row: usize, col: usize) -> bool {
        self.value(band, row, col) == self.nodata
    }

    pub fn band_f32(&self, band: usize) -> &[f32] {
        match &self.samples {
            Samples::F32(v) => {
                let p = self.plane_len();
                &v[band * p..(band + 1) * p]
            }
            _ => panic!("band_f32 on non-f32 raster"),
        }
    }

    pub fn band_f32_mut(&mut self, band: usize) -> &mut [f32] {
        let p = self.plane_len();
        match &mut self.samples {
            Samples::F32(v) => &mut v[band * p..(band + 1) * p],
            _ => panic!("band_f32_mut on non-f32 raster"),
        }
    }

    pub fn band_u8(&self, band: usize) -> &[u8] {
        match &self.samples {
            Samples::U8(v) => {
                let p = self.plane_len();
                &v[band * p..(band + 1) * p]
            }
            _ => panic!("band_u8 on non-u8 raster"),
        }
    }

    pub fn band_u8_mut(&mut self, band: usize) -> &mut [u8] {
        let p = self.plane_len();
        match &mut self.samples {
            Samples::U8(v) => &mut v[band * p..(band + 1) * p],
            _ => panic!("band_u8_mut on non-u8 raster"),
        }
    }

    pub fn band_u16(&self, band: usize) -> &[u16] {
        match &self.samples {
            Samples::U16(v) => {
                let p = self.plane_len();
                &v[band * p..(band + 1) * p]
            }
            _ => panic!("band_u16 on non-u16 raster"),
        }
    }

    /// True when `other` shares width, height and geotransform.
    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.geo == other.geo
    }
}
