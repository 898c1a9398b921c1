//! Raster data model and the `.hsr` container.
//!
//! Layout of an `.hsr` file:
//!
//! ```text
//! bytes 0..8        magic "HSRASTR1"
//! bytes 8..12       header length L, u32 little-endian
//! bytes 12..12+L    UTF-8 JSON {"w","h","bands","dtype":"f32le","wavelengths_nm"?}
//! remainder         w*h*bands f32 little-endian samples, band-sequential, row-major
//! ```
//!
//! PAN images use the same format with `bands = 1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::pearson;

pub const HSR_MAGIC: &[u8; 8] = b"HSRASTR1";
pub const DTYPE_F32LE: &str = "f32le";

/// Single-band high-resolution image, stored as `(rows, cols) = (H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanImage {
    data: Array2<f32>,
}

impl PanImage {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (h, w) = data.dim();
        if w == 0 || h == 0 {
            return Err(Error::Dimension(format!("PAN must be non-empty, got {w}x{h}")));
        }
        check_finite(data.iter().copied(), "PAN")?;
        Ok(Self { data })
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.data
    }

    /// View as a one-band cube (for I/O).
    pub fn to_cube(&self) -> HsCube {
        let (h, w) = self.data.dim();
        let data = self.data.clone().into_shape_with_order((1, h, w)).expect("contiguous");
        HsCube { data, wavelengths: None }
    }
}

/// Band-sequential image cube, stored as `(bands, rows, cols) = (B, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsCube {
    data: Array3<f32>,
    wavelengths: Option<Vec<f64>>,
}

impl HsCube {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        Self::with_wavelengths(data, None)
    }

    pub fn with_wavelengths(data: Array3<f32>, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        let (b, h, w) = data.dim();
        if b == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!("cube must be non-empty, got {w}x{h}x{b}")));
        }
        check_finite(data.iter().copied(), "cube")?;
        if let Some(wl) = &wavelengths {
            if wl.len() != b {
                return Err(Error::Data(format!(
                    "{} wavelengths for {b} bands",
                    wl.len()
                )));
            }
            if wl.iter().any(|v| !v.is_finite()) || wl.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::Data("wavelengths must be finite and strictly increasing".into()));
            }
        }
        Ok(Self { data, wavelengths })
    }

    /// Stack equally sized planes into a cube.
    pub fn from_bands(bands: &[Array2<f32>], wavelengths: Option<Vec<f64>>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::Dimension("no bands given".into()))?;
        let (h, w) = first.dim();
        let mut data = Array3::<f32>::zeros((bands.len(), h, w));
        for (i, band) in bands.iter().enumerate() {
            if band.dim() != (h, w) {
                return Err(Error::Dimension(format!(
                    "band {i} is {:?}, expected {:?}",
                    band.dim(),
                    (h, w)
                )));
            }
            data.slice_mut(s![i, .., ..]).assign(band);
        }
        Self::with_wavelengths(data, wavelengths)
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn band(&self, b: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), b)
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.data
    }

    /// Apply a plane-to-plane operator to every band (in parallel, order preserved).
    pub fn map_bands<F>(&self, op: F) -> Result<HsCube>
    where
        F: Fn(ArrayView2<'_, f32>) -> Result<Array2<f32>> + Sync,
    {
        let planes = (0..self.bands())
            .into_par_iter()
            .map(|b| op(self.band(b)))
            .collect::<Result<Vec<_>>>()?;
        HsCube::from_bands(&planes, self.wavelengths.clone())
    }

    fn header(&self) -> RasterHeader {
        RasterHeader {
            w: self.width(),
            h: self.height(),
            bands: self.bands(),
            dtype: DTYPE_F32LE.to_string(),
            wavelengths_nm: self.wavelengths.clone(),
        }
    }
}

impl TryFrom<HsCube> for PanImage {
    type Error = Error;

    fn try_from(cube: HsCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::Dimension(format!(
                "PAN raster must have one band, found {}",
                cube.bands()
            )));
        }
        let (_, h, w) = cube.data.dim();
        PanImage::new(cube.data.into_shape_with_order((h, w)).expect("contiguous"))
    }
}

/// JSON header of an `.hsr` file. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub w: usize,
    pub h: usize,
    pub bands: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths_nm: Option<Vec<f64>>,
}

impl RasterHeader {
    pub fn payload_len(&self) -> usize {
        self.w * self.h * self.bands * 4
    }
}

/// PAN/HS pair with integer resolution ratio.
#[derive(Debug, Clone)]
pub struct PairedScene {
    pub pan: PanImage,
    pub hs: HsCube,
    pub ratio: usize,
}

impl PairedScene {
    /// Pair the images, inferring the ratio from the widths.
    pub fn new(pan: PanImage, hs: HsCube) -> Result<Self> {
        if pan.width() % hs.width() != 0 {
            return Err(Error::Ratio(format!(
                "PAN width {} is not an integer multiple of HS width {}",
                pan.width(),
                hs.width()
            )));
        }
        let ratio = pan.width() / hs.width();
        let scene = Self { pan, hs, ratio };
        validate_pair(&scene)?;
        Ok(scene)
    }
}

/// Check `W = R*w`, `H = R*h`, `R >= 2` and that all samples are finite.
pub fn validate_pair(scene: &PairedScene) -> Result<()> {
    let r = scene.ratio;
    if r < 2 {
        return Err(Error::Ratio(format!("ratio must be at least 2, got {r}")));
    }
    let (pw, ph) = (scene.pan.width(), scene.pan.height());
    let (hw, hh) = (scene.hs.width(), scene.hs.height());
    if pw != r * hw || ph != r * hh {
        return Err(Error::Ratio(format!(
            "PAN {pw}x{ph} is not {r} x HS {hw}x{hh}"
        )));
    }
    check_finite(scene.pan.view().iter().copied(), "PAN")?;
    check_finite(scene.hs.view().iter().copied(), "HS cube")?;
    Ok(())
}

/// Global Pearson correlation between consecutive bands; element 0 is 0.
///
/// Constant bands correlate as 0 with anything.
pub fn band_correlations(hs: &HsCube) -> Vec<f64> {
    let mut out = vec![0.0; hs.bands()];
    let planes: Vec<Vec<f32>> = (0..hs.bands()).map(|b| hs.band(b).iter().copied().collect()).collect();
    for b in 1..hs.bands() {
        out[b] = pearson(&planes[b], &planes[b - 1]).unwrap_or(0.0);
    }
    out
}

fn check_finite(values: impl Iterator<Item = f32>, what: &str) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::Data(format!("{what} sample {i} is not finite ({v})")));
        }
    }
    Ok(())
}

pub(crate) fn write_container<W: Write, H: Serialize>(
    mut out: W,
    magic: &[u8; 8],
    header: &H,
    samples: impl Iterator<Item = f32>,
) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    out.write_all(magic)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::new();
    for v in samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Split a container into its JSON header and raw payload.
pub(crate) fn split_container<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + len {
        return Err(Error::Format(format!("header length {len} exceeds file size")));
    }
    Ok((&bytes[12..12 + len], &bytes[12 + len..]))
}

pub(crate) fn decode_f32le(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn decode_raster(bytes: &[u8]) -> Result<HsCube> {
    let (header, payload) = split_container(bytes, HSR_MAGIC)?;
    let header: RasterHeader = serde_json::from_slice(header)
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    if header.dtype != DTYPE_F32LE {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.w == 0 || header.h == 0 || header.bands == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    let data = Array3::from_shape_vec((header.bands, header.h, header.w), decode_f32le(payload))
        .expect("length checked");
    HsCube::with_wavelengths(data, header.wavelengths_nm)
}

pub fn encode_raster(cube: &HsCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + cube.data.len() * 4);
    write_container(&mut out, HSR_MAGIC, &cube.header(), cube.data.iter().copied())
        .expect("writing to memory");
    out
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<HsCube> {
    decode_raster(&fs::read(path)?)
}

pub fn load_pan(path: impl AsRef<Path>) -> Result<PanImage> {
    load_raster(path)?.try_into()
}

pub fn save_raster(path: impl AsRef<Path>, cube: &HsCube) -> Result<()> {
    fs::write(path, encode_raster(cube))?;
    Ok(())
}

pub fn save_pan(path: impl AsRef<Path>, pan: &PanImage) -> Result<()> {
    save_raster(path, &pan.to_cube())
}
