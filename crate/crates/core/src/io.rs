//! Image and range-map files.
//!
//! Images are 3-channel PNGs at 8 or 16 bits per sample. Samples map to
//! `[0, 1]` by division by `2^depth - 1`, optionally through the sRGB
//! transfer curve. Range maps are grayscale PFM (meters, `f32`) or 16-bit
//! grayscale PNG with a sidecar `<stem>.scale` file holding meters per count.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb as PxRgb};

use crate::domain::{Image, RangeMap};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PngDepth {
    Png8,
    #[default]
    Png16,
}

impl PngDepth {
    pub fn max_value(self) -> f64 {
        match self {
            PngDepth::Png8 => 255.0,
            PngDepth::Png16 => 65535.0,
        }
    }
}

impl FromStr for PngDepth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "png8" => Ok(PngDepth::Png8),
            "png16" => Ok(PngDepth::Png16),
            other => Err(format!("unknown image format `{other}` (expected png8 or png16)")),
        }
    }
}

impl std::fmt::Display for PngDepth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PngDepth::Png8 => "png8",
            PngDepth::Png16 => "png16",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Transfer {
    #[default]
    Linear,
    Srgb,
}

impl FromStr for Transfer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Transfer::Linear),
            "srgb" => Ok(Transfer::Srgb),
            other => Err(format!("unknown transfer `{other}` (expected linear or srgb)")),
        }
    }
}

impl std::fmt::Display for Transfer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Transfer::Linear => "linear",
            Transfer::Srgb => "srgb",
        })
    }
}

/// Bit depth and transfer curve of an image file. The depth only matters
/// when saving; loading accepts either depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ImageFileSpec {
    pub format: PngDepth,
    pub transfer: Transfer,
}

/// sRGB electro-optical transfer: encoded value to linear light.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_to_linear`].
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn open_png(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "not a PNG file".into(),
        });
    }
    reader.decode().map_err(|e| Error::CorruptFile {
        path: path.into(),
        reason: e.to_string(),
    })
}

pub fn load_image<T: Real>(path: impl AsRef<Path>, spec: &ImageFileSpec) -> Result<Image<T>> {
    let path = path.as_ref();
    let decoded = open_png(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (samples, max): (Vec<f64>, f64) = match decoded {
        DynamicImage::ImageRgb8(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 255.0),
        DynamicImage::ImageRgb16(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 65535.0),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: format!("expected an 8- or 16-bit RGB PNG, found {:?}", other.color()),
            })
        }
    };
    let decode = |s: f64| {
        let v = s / max;
        T::lit(match spec.transfer {
            Transfer::Linear => v,
            Transfer::Srgb => srgb_to_linear(v),
        })
    };
    let values: Vec<T> = samples.into_iter().map(decode).collect();
    Image::from_interleaved(w, h, &values)
}

/// Quantizes with round-half-away-from-zero after clamping into `[0, 1]`.
pub fn quantize(v: f64, depth: PngDepth) -> u16 {
    let max = depth.max_value();
    (v.clamp(0.0, 1.0) * max).round() as u16
}

pub fn save_image<T: Real>(img: &Image<T>, path: impl AsRef<Path>, spec: &ImageFileSpec) -> Result<()> {
    let path = path.as_ref();
    let encode = |v: T| {
        let v = v.to_f64_lossy().clamp(0.0, 1.0);
        match spec.transfer {
            Transfer::Linear => v,
            Transfer::Srgb => linear_to_srgb(v),
        }
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let samples = img.to_interleaved().into_iter().map(encode);
    let result = match spec.format {
        PngDepth::Png8 => {
            let raw: Vec<u8> = samples.map(|v| quantize(v, PngDepth::Png8) as u8).collect();
            ImageBuffer::<PxRgb<u8>, _>::from_raw(w, h, raw)
                .expect("buffer sized from image")
                .save_with_format(path, ImageFormat::Png)
        }
        PngDepth::Png16 => {
            let raw: Vec<u16> = samples.map(|v| quantize(v, PngDepth::Png16)).collect();
            ImageBuffer::<PxRgb<u16>, _>::from_raw(w, h, raw)
                .expect("buffer sized from image")
                .save_with_format(path, ImageFormat::Png)
        }
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Sidecar holding meters per count for a 16-bit PNG range map:
/// `depth.png` -> `depth.scale`.
pub fn scale_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("scale")
}

/// Loads a PFM or 16-bit PNG range map, detected by content.
pub fn load_range<T: Real>(path: impl AsRef<Path>) -> Result<RangeMap<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"Pf") {
        let (w, h, z) = decode_pfm(path, &bytes)?;
        return RangeMap::new(w, h, z.into_iter().map(|v| T::lit(f64::from(v))).collect());
    }
    if bytes.starts_with(b"PF") {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "color PFM; range maps must be grayscale (Pf)".into(),
        });
    }
    if !bytes.starts_with(b"\x89PNG") {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "expected grayscale PFM or 16-bit grayscale PNG".into(),
        });
    }

    let decoded = open_png(path)?;
    let DynamicImage::ImageLuma16(buf) = decoded else {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("range PNG must be 16-bit grayscale, found {:?}", decoded.color()),
        });
    };
    let sidecar = scale_sidecar_path(path);
    let scale_text = match fs::read_to_string(&sidecar) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingScale {
                path: path.into(),
                sidecar,
            })
        }
        Err(e) => return Err(Error::io(&sidecar, e)),
    };
    let scale: f64 = scale_text.trim().parse().map_err(|_| Error::CorruptFile {
        path: sidecar.clone(),
        reason: format!("`{}` is not a number", scale_text.trim()),
    })?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::CorruptFile {
            path: sidecar,
            reason: format!("scale must be positive, got {scale}"),
        });
    }
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let z = buf
        .into_raw()
        .into_iter()
        .map(|s| T::lit(f64::from(s) * scale))
        .collect();
    RangeMap::new(w, h, z)
}

/// Writes a 16-bit grayscale PNG range map and its sidecar scale file.
/// Ranges are rounded to the nearest count; invalid pixels become 0.
pub fn save_range_png16<T: Real>(range: &RangeMap<T>, path: impl AsRef<Path>, scale: f64) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = (0..range.len())
        .map(|i| match range.at(i) {
            Some(z) => (z.to_f64_lossy() / scale).round().clamp(0.0, 65535.0) as u16,
            None => 0,
        })
        .collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(range.width() as u32, range.height() as u32, raw)
        .expect("buffer sized from range map")
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let sidecar = scale_sidecar_path(path);
    fs::write(&sidecar, format!("{scale}\n")).map_err(|e| Error::io(sidecar, e))
}

/// Writes a little-endian grayscale PFM (negative scale), rows bottom to top.
pub fn save_range_pfm<T: Real>(range: &RangeMap<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let values: Vec<f32> = range
        .samples()
        .iter()
        .map(|v| v.to_f32().unwrap_or(f32::NAN))
        .collect();
    let bytes = encode_pfm(range.width(), range.height(), &values);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pfm(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in values.chunks_exact(width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a grayscale PFM into top-to-bottom row-major samples.
pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.into(),
        reason,
    };
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| corrupt("truncated PFM header".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(str::trim)
            .map_err(|_| corrupt("PFM header is not text".into()))
    };
    let magic = next_line()?;
    if magic != "Pf" {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("expected grayscale PFM magic `Pf`, found `{magic}`"),
        });
    }
    let dims = next_line()?;
    let mut parts = dims.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(corrupt(format!("bad PFM dimensions `{dims}`"))),
    };
    let scale_line = next_line()?;
    let scale: f64 = scale_line
        .parse()
        .map_err(|_| corrupt(format!("bad PFM scale `{scale_line}`")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(corrupt(format!("PFM scale must be non-zero, got {scale}")));
    }
    let little = scale < 0.0;
    let data = &bytes[pos..];
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt("PFM dimensions overflow".into()))?;
    if data.len() != expected {
        return Err(corrupt(format!(
            "PFM payload has {} bytes, expected {expected}",
            data.len()
        )));
    }
    let samples: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut top_down = Vec::with_capacity(samples.len());
    for row in samples.chunks_exact(w).rev() {
        top_down.extend_from_slice(row);
    }
    Ok((w, h, top_down))
}
