//! Image files: the lossless `MBF1` planar format plus 8/16-bit PNG and TIFF.
//!
//! `MBF1` layout: the ASCII magic `MBF1`, then `height`, `width`, `bands` as
//! little-endian `u32`, then `height·width·bands` little-endian `f64` values in
//! band-major planar order.
//!
//! Integer formats keep their native range (0–255 or 0–65535). On export values
//! are clamped to that range and rounded half away from zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};

use crate::error::{Result, SirfError};
use crate::tensor::MultiBandImage;

pub const MBF_MAGIC: &[u8; 4] = b"MBF1";
const HEADER_LEN: usize = 16;

/// File formats recognised by extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Mbf,
    Png,
    Tiff,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "mbf" | "mbf1" => Ok(Self::Mbf),
            "png" => Ok(Self::Png),
            "tif" | "tiff" => Ok(Self::Tiff),
            _ => Err(SirfError::Format(format!(
                "unknown image format for {} (expected .mbf, .png, .tif or .tiff)",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            Self::Eight => 255.0,
            Self::Sixteen => 65535.0,
        }
    }
}

pub fn encode_mbf(x: &MultiBandImage) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * x.len());
    out.extend_from_slice(MBF_MAGIC);
    for dim in [x.height(), x.width(), x.bands()] {
        let d = u32::try_from(dim)
            .map_err(|_| SirfError::Format(format!("dimension {dim} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_mbf(bytes: &[u8]) -> Result<MultiBandImage> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MBF_MAGIC {
        return Err(SirfError::Format("missing MBF1 header".into()));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (h, w, s) = (dim(0), dim(1), dim(2));
    let expected = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(s))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| SirfError::Format("MBF1 header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(SirfError::Format(format!(
            "MBF1 body has {} bytes, header {h}x{w}x{s} requires {}",
            bytes.len(),
            expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MultiBandImage::from_vec(h, w, s, data)
}

pub fn load_mbf(path: &Path) -> Result<MultiBandImage> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_mbf(&bytes)
}

pub fn save_mbf(x: &MultiBandImage, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_mbf(x)?)?;
    f.flush()?;
    Ok(())
}

/// Loads any supported format, chosen by extension.
pub fn load_image(path: &Path) -> Result<MultiBandImage> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Mbf => load_mbf(path),
        ImageFormat::Png | ImageFormat::Tiff => from_dynamic(image::open(path)?),
    }
}

/// Saves with 8-bit depth for integer formats.
pub fn save_image(x: &MultiBandImage, path: &Path) -> Result<()> {
    save_image_with_depth(x, path, BitDepth::Eight)
}

pub fn save_image_with_depth(x: &MultiBandImage, path: &Path, depth: BitDepth) -> Result<()> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Mbf => save_mbf(x, path),
        format => {
            if x.bands() > 4 {
                let name = if format == ImageFormat::Png { "PNG" } else { "TIFF" };
                return Err(SirfError::Format(format!(
                    "{name} holds at most 4 channels, image has {}; use export_rgb or MBF1",
                    x.bands()
                )));
            }
            to_dynamic(x, depth)?.save(path)?;
            Ok(())
        }
    }
}

/// Writes three chosen bands as an RGB image.
pub fn export_rgb(x: &MultiBandImage, bands: [usize; 3], path: &Path, depth: BitDepth) -> Result<()> {
    if let Some(&b) = bands.iter().find(|&&b| b >= x.bands()) {
        return Err(SirfError::InvalidParameter(format!(
            "band {b} out of range for {} bands",
            x.bands()
        )));
    }
    let rgb: Vec<MultiBandImage> = bands.iter().map(|&b| x.band_image(b)).collect();
    save_image_with_depth(&MultiBandImage::from_bands(&rgb)?, path, depth)
}

/// Rounds half away from zero after clamping to `[0, max]`.
pub fn quantize(v: f64, max: f64) -> f64 {
    v.clamp(0.0, max).round()
}

fn interleave<T>(x: &MultiBandImage, convert: impl Fn(f64) -> T) -> Vec<T> {
    let plane = x.shape().plane();
    let s = x.bands();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..plane {
        for d in 0..s {
            out.push(convert(x.data()[d * plane + k]));
        }
    }
    out
}

fn to_dynamic(x: &MultiBandImage, depth: BitDepth) -> Result<DynamicImage> {
    let (w, h) = (x.width() as u32, x.height() as u32);
    let bad = || SirfError::Format("pixel buffer does not match image size".into());
    Ok(match depth {
        BitDepth::Eight => {
            let buf = interleave(x, |v| quantize(v, 255.0) as u8);
            match x.bands() {
                1 => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
                2 => DynamicImage::ImageLumaA8(ImageBuffer::<LumaA<u8>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
                3 => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
                _ => DynamicImage::ImageRgba8(ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
            }
        }
        BitDepth::Sixteen => {
            let buf = interleave(x, |v| quantize(v, 65535.0) as u16);
            match x.bands() {
                1 => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
                2 => DynamicImage::ImageLumaA16(ImageBuffer::<LumaA<u16>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
                3 => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
                _ => DynamicImage::ImageRgba16(ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, buf).ok_or_else(bad)?),
            }
        }
    })
}

fn deinterleave<T: Copy + Into<f64>>(raw: &[T], h: usize, w: usize, s: usize) -> Result<MultiBandImage> {
    let plane = h * w;
    let mut data = vec![0.0; plane * s];
    for (k, px) in raw.chunks_exact(s).enumerate() {
        for (d, &v) in px.iter().enumerate() {
            data[d * plane + k] = v.into();
        }
    }
    MultiBandImage::from_vec(h, w, s, data)
}

fn from_dynamic(img: DynamicImage) -> Result<MultiBandImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let s = img.color().channel_count() as usize;
    match img {
        DynamicImage::ImageLuma8(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageLumaA8(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageRgb8(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageRgba8(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageLuma16(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageLumaA16(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageRgb16(b) => deinterleave(b.as_raw(), h, w, s),
        DynamicImage::ImageRgba16(b) => deinterleave(b.as_raw(), h, w, s),
        other => Err(SirfError::Format(format!(
            "unsupported pixel type {:?}; only 8/16-bit integer images are read",
            other.color()
        ))),
    }
}
