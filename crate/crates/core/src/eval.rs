//! Color-accuracy metrics: gray-patch angular error and masked MAE.

use crate::domain::{Image, Rgb};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Angle in degrees between `rgb` and the gray axis `(1, 1, 1)`.
///
/// `acos(sum / sqrt(3 * sum of squares))`; 0 for any neutral color and
/// invariant to positive scaling.
pub fn angular_error<T: Real>(rgb: Rgb<T>) -> Result<T> {
    let sum = rgb[0] + rgb[1] + rgb[2];
    let sq = rgb[0] * rgb[0] + rgb[1] * rgb[1] + rgb[2] * rgb[2];
    if sq == T::zero() {
        return Err(Error::ZeroVector);
    }
    let cos = (sum / (T::lit(3.0) * sq).sqrt()).max(-T::one()).min(T::one());
    Ok(cos.acos().to_degrees())
}

/// Axis-aligned pixel rectangle, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatchSet {
    pub patches: Vec<Rect>,
}

impl PatchSet {
    pub fn new(patches: Vec<Rect>) -> Self {
        PatchSet { patches }
    }

    /// Parses `x,y,w,h` CSV with that exact header. Errors name the 1-based
    /// line of the offending row.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.replace(' ', "") == "x,y,w,h" => {}
            Some((n, header)) => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected header `x,y,w,h`, found `{header}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty patch file".into(),
                })
            }
        }
        let mut patches = Vec::new();
        for (n, row) in lines {
            let fields: Vec<_> = row.split(',').map(|f| f.trim().parse::<usize>()).collect();
            match fields.as_slice() {
                [Ok(x), Ok(y), Ok(w), Ok(h)] if *w > 0 && *h > 0 => patches.push(Rect {
                    x: *x,
                    y: *y,
                    w: *w,
                    h: *h,
                }),
                _ => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("malformed patch row `{row}`"),
                    })
                }
            }
        }
        Ok(PatchSet { patches })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,w,h\n");
        for r in &self.patches {
            out.push_str(&format!("{},{},{},{}\n", r.x, r.y, r.w, r.h));
        }
        out
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for (i, r) in self.patches.iter().enumerate() {
            if r.w == 0 || r.h == 0 || r.x + r.w > width || r.y + r.h > height {
                return Err(Error::invalid(format!(
                    "patch {i} {r:?} lies outside the {width}x{height} image"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchReport<T> {
    pub per_patch: Vec<T>,
    pub mean: T,
}

/// Mean RGB over a rectangle.
pub fn patch_mean<T: Real>(img: &Image<T>, r: &Rect) -> Rgb<T> {
    let mut sum = [T::zero(); 3];
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            let p = img.get(x, y);
            for c in 0..3 {
                sum[c] = sum[c] + p[c];
            }
        }
    }
    let n = T::from_usize_lossy(r.w * r.h);
    sum.map(|s| s / n)
}

/// Angular error of each patch's mean color, and their average.
pub fn patch_mean_error<T: Real>(img: &Image<T>, patches: &PatchSet) -> Result<PatchReport<T>> {
    if patches.patches.is_empty() {
        return Err(Error::invalid("no patches given"));
    }
    patches.check_bounds(img.width(), img.height())?;
    let per_patch = patches
        .patches
        .iter()
        .map(|r| angular_error(patch_mean(img, r)))
        .collect::<Result<Vec<T>>>()?;
    let mean = per_patch.iter().copied().sum::<T>() / T::from_usize_lossy(per_patch.len());
    Ok(PatchReport { per_patch, mean })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mae<T> {
    pub per_channel: Rgb<T>,
    pub overall: T,
}

/// Mean absolute error over pixels where `mask` is true.
pub fn image_mae<T: Real>(a: &Image<T>, b: &Image<T>, mask: &[bool]) -> Result<Mae<T>> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    if mask.len() != a.len() {
        return Err(Error::invalid(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            a.len()
        )));
    }
    let mut sum = [T::zero(); 3];
    let mut n = 0usize;
    for ((pa, pb), _) in a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(mask)
        .filter(|(_, m)| **m)
    {
        n += 1;
        for c in 0..3 {
            sum[c] = sum[c] + (pa[c] - pb[c]).abs();
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let per_channel = sum.map(|s| s / T::from_usize_lossy(n));
    let overall = (per_channel[0] + per_channel[1] + per_channel[2]) / T::lit(3.0);
    Ok(Mae {
        per_channel,
        overall,
    })
}
