//! Domain types shared by every stage: images, range maps, the two model
//! parameter sets, and the warm-startable fit state.
//!
//! Pixels are stored row-major with interleaved channels, `data[y * width + x]
//! = [r, g, b]`.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::scalar::Real;

/// Channel suffixes used in every text format.
pub const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

/// Largest supported image side.
pub const MAX_SIDE: usize = 1 << 16;

/// Fraction of pixels that must carry a usable range before fitting.
pub const MIN_VALID_FRACTION: f64 = 0.01;

pub type Rgb<T> = [T; 3];

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::invalid(format!(
            "image dimensions {width}x{height} exceed {MAX_SIDE}"
        )));
    }
    Ok(())
}

/// Linear-intensity RGB raster. Every stored value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<Rgb<T>>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<Rgb<T>>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer holds {} pixels, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(i) = data.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!(
                "non-finite intensity at pixel ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds an image from channel-interleaved samples (`r, g, b, r, g, b, ...`).
    pub fn from_interleaved(width: usize, height: usize, samples: &[T]) -> Result<Self> {
        if samples.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "sample buffer holds {} values, expected {}",
                samples.len(),
                width * height * 3
            )));
        }
        let data = samples.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: Rgb<T>) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Rgb<T>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[Rgb<T>] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb<T> {
        self.data[y * self.width + x]
    }

    pub fn to_interleaved(&self) -> Vec<T> {
        self.data.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Clamps every intensity into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|p| p.map(|v| v.max(T::zero()).min(T::one())))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| p.map(|v| U::lit(v.to_f64_lossy())))
                .collect(),
        }
    }
}

/// Per-pixel RGB raster of intermediate quantities (backscatter, direct
/// signal, pre-clamp recovery). Pixels without a usable range hold `NaN` in
/// every channel and are skipped by every reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<Rgb<T>>,
}

impl<T: Real> Raster<T> {
    /// Wraps raw data; entries whose first channel is `NaN` are treated as
    /// masked out.
    pub fn from_vec(width: usize, height: usize, data: Vec<Rgb<T>>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "raster holds {} pixels, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    /// Evaluates `f` at every pixel with a valid range; the rest get the
    /// `NaN` sentinel.
    pub fn from_range(range: &RangeMap<T>, mut f: impl FnMut(usize, T) -> Rgb<T>) -> Self {
        let nan = [T::nan(); 3];
        let data = range
            .z
            .iter()
            .zip(&range.valid)
            .enumerate()
            .map(|(i, (&z, &ok))| if ok { f(i, z) } else { nan })
            .collect();
        Raster {
            width: range.width,
            height: range.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb<T>] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb<T> {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        !self.data[i][0].is_nan()
    }

    /// Iterator over the unmasked pixels.
    pub fn valid_pixels(&self) -> impl Iterator<Item = &Rgb<T>> + '_ {
        self.data.iter().filter(|p| !p[0].is_nan())
    }

    pub fn valid_count(&self) -> usize {
        self.valid_pixels().count()
    }

    /// Elementwise map over unmasked pixels; masked pixels stay masked.
    pub fn map(&self, mut f: impl FnMut(Rgb<T>) -> Rgb<T>) -> Self {
        let data = self
            .data
            .iter()
            .map(|&p| if p[0].is_nan() { p } else { f(p) })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Per-pixel camera-to-target distance in meters with a validity mask.
///
/// A pixel is valid iff its range is finite and strictly positive. The
/// original sample is kept for invalid pixels so files round-trip.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeMap<T> {
    width: usize,
    height: usize,
    z: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Real> RangeMap<T> {
    pub fn new(width: usize, height: usize, z: Vec<T>) -> Result<Self> {
        check_dims(width, height)?;
        if z.len() != width * height {
            return Err(Error::invalid(format!(
                "range buffer holds {} samples, expected {}",
                z.len(),
                width * height
            )));
        }
        let valid = z.iter().map(|v| v.is_finite() && *v > T::zero()).collect();
        Ok(RangeMap {
            width,
            height,
            z,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, z: T) -> Result<Self> {
        Self::new(width, height, vec![z; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut z = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                z.push(f(x, y));
            }
        }
        Self::new(width, height, z)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Raw samples, including those of invalid pixels.
    pub fn samples(&self) -> &[T] {
        &self.z
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    /// Range at pixel `i` if it is usable.
    #[inline]
    pub fn at(&self, i: usize) -> Option<T> {
        if self.valid[i] {
            Some(self.z[i])
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Smallest and largest valid range, or `None` when nothing is valid.
    pub fn valid_bounds(&self) -> Option<(T, T)> {
        self.z
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .fold(None, |acc, (&z, _)| match acc {
                None => Some((z, z)),
                Some((lo, hi)) => Some((lo.min(z), hi.max(z))),
            })
    }

    pub fn cast<U: Real>(&self) -> RangeMap<U> {
        RangeMap {
            width: self.width,
            height: self.height,
            z: self.z.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// An image and its range map after dimension and coverage checks.
#[derive(Clone, Copy, Debug)]
pub struct ValidPair<'a, T> {
    image: &'a Image<T>,
    range: &'a RangeMap<T>,
    valid_count: usize,
}

impl<'a, T: Real> ValidPair<'a, T> {
    pub fn image(&self) -> &'a Image<T> {
        self.image
    }

    pub fn range(&self) -> &'a RangeMap<T> {
        self.range
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count as f64 / self.range.len() as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// Checks that `image` and `range` describe the same pixels and that at
/// least 1% of them carry a usable range.
pub fn validate_pair<'a, T: Real>(
    image: &'a Image<T>,
    range: &'a RangeMap<T>,
) -> Result<ValidPair<'a, T>> {
    if image.dims() != range.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            found: range.dims(),
        });
    }
    let valid = range.valid_count();
    let total = range.len();
    if (valid as f64) < MIN_VALID_FRACTION * total as f64 || valid == 0 {
        return Err(Error::InsufficientValidRange { valid, total });
    }
    Ok(ValidPair {
        image,
        range,
        valid_count: valid,
    })
}

/// Number of scalars in one parameter set (four per-channel triples).
pub const PARAMS_PER_SET: usize = 12;

/// A set of four non-negative per-channel parameter triples, flattened in
/// group-major order: `[g0.r, g0.g, g0.b, g1.r, ...]`.
pub trait ParamSet<T: Real>: Copy {
    /// Names of the four groups, in flat order.
    const GROUPS: [&'static str; 4];

    fn to_flat(&self) -> [T; PARAMS_PER_SET];

    /// Rebuilds the set from a flat vector, projecting every entry onto
    /// `[0, inf)`. Non-finite entries become 0.
    fn from_flat_projected(flat: [T; PARAMS_PER_SET]) -> Self;

    /// Key for flat index `i`, e.g. `gamma_inf.g`.
    fn key(i: usize) -> String {
        format!("{}.{}", Self::GROUPS[i / 3], CHANNEL_NAMES[i % 3])
    }
}

#[inline]
fn project<T: Real>(v: T) -> T {
    if v.is_finite() && v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn checked_triple<T: Real>(name: &str, v: Rgb<T>) -> Result<Rgb<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} must be finite, got {v:?}")));
    }
    Ok(v.map(project))
}

macro_rules! param_set {
    (
        $(#[$meta:meta])*
        $name:ident { $($field:ident / $setter:ident),+ }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq)]
        pub struct $name<T> {
            $($field: Rgb<T>,)+
        }

        impl<T: Real> $name<T> {
            /// Negative entries are clamped to zero; non-finite entries are rejected.
            pub fn new($($field: Rgb<T>),+) -> Result<Self> {
                Ok($name { $($field: checked_triple(stringify!($field), $field)?,)+ })
            }

            pub fn zero() -> Self {
                $name { $($field: [T::zero(); 3],)+ }
            }

            $(
                pub fn $field(&self) -> Rgb<T> {
                    self.$field
                }

                /// Clamps negative entries to zero; rejects non-finite input.
                pub fn $setter(&mut self, value: Rgb<T>) -> Result<()> {
                    self.$field = checked_triple(stringify!($field), value)?;
                    Ok(())
                }
            )+
        }

        impl<T: Real> ParamSet<T> for $name<T> {
            const GROUPS: [&'static str; 4] = [$(stringify!($field)),+];

            fn to_flat(&self) -> [T; PARAMS_PER_SET] {
                let mut out = [T::zero(); PARAMS_PER_SET];
                let groups = [$(self.$field),+];
                for (g, triple) in groups.iter().enumerate() {
                    out[g * 3..g * 3 + 3].copy_from_slice(triple);
                }
                out
            }

            fn from_flat_projected(flat: [T; PARAMS_PER_SET]) -> Self {
                let p = flat.map(project);
                let mut groups = [[T::zero(); 3]; 4];
                for (g, triple) in groups.iter_mut().enumerate() {
                    triple.copy_from_slice(&p[g * 3..g * 3 + 3]);
                }
                let [$($field),+] = groups;
                $name { $($field),+ }
            }
        }
    };
}

param_set! {
    /// Backscatter model `B(z) = gamma_inf (1 - exp(-beta z)) + eta exp(-alpha z)`.
    ///
    /// `gamma_inf` is the veiling light reached at infinite range; `eta` and
    /// `alpha` shape the residual term that dominates close to the camera.
    BackscatterParams {
        gamma_inf / set_gamma_inf,
        beta / set_beta,
        eta / set_eta,
        alpha / set_alpha
    }
}

param_set! {
    /// Range-dependent attenuation coefficient
    /// `a(z) = w exp(-v z) + y exp(-x z)`, all in inverse meters.
    AttenuationParams {
        v / set_v,
        w / set_w,
        x / set_x,
        y / set_y
    }
}

/// Both parameter sets plus the optimizer state of each fitting stage.
/// Carried from frame to frame in streaming mode.
#[derive(Clone, Debug, PartialEq)]
pub struct FitState<T> {
    pub backscatter: BackscatterParams<T>,
    pub attenuation: AttenuationParams<T>,
    pub backscatter_opt: AdamState<T, PARAMS_PER_SET>,
    pub attenuation_opt: AdamState<T, PARAMS_PER_SET>,
}

impl<T: Real> FitState<T> {
    pub fn new(backscatter: BackscatterParams<T>, attenuation: AttenuationParams<T>) -> Self {
        FitState {
            backscatter,
            attenuation,
            backscatter_opt: AdamState::default(),
            attenuation_opt: AdamState::default(),
        }
    }

    /// Serializes to the flat `key = value` text format. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = self.params_text();
        let sets: [(&[&str; 4], &AdamState<T, PARAMS_PER_SET>); 2] = [
            (&BackscatterParams::<T>::GROUPS, &self.backscatter_opt),
            (&AttenuationParams::<T>::GROUPS, &self.attenuation_opt),
        ];
        for (moment, pick) in [("moment1", 0usize), ("moment2", 1)] {
            for (groups, opt) in sets {
                let values = if pick == 0 { &opt.m } else { &opt.v };
                for (i, value) in values.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{moment}.{}.{} = {value}",
                        groups[i / 3],
                        CHANNEL_NAMES[i % 3]
                    );
                }
            }
        }
        let _ = writeln!(out, "steps.backscatter = {}", self.backscatter_opt.step);
        let _ = writeln!(out, "steps.attenuation = {}", self.attenuation_opt.step);
        out
    }

    /// The 24 model parameters only, in the same format.
    pub fn params_text(&self) -> String {
        let mut out = String::new();
        let bs = self.backscatter.to_flat();
        for (i, v) in bs.iter().enumerate() {
            let _ = writeln!(out, "{} = {v}", BackscatterParams::<T>::key(i));
        }
        let at = self.attenuation.to_flat();
        for (i, v) in at.iter().enumerate() {
            let _ = writeln!(out, "{} = {v}", AttenuationParams::<T>::key(i));
        }
        out
    }

    /// Parses the text format. All 24 parameters are required; moments and
    /// step counters default to zero when absent. Unknown or duplicate keys
    /// are rejected. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values: HashMap<String, (usize, String)> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            if values
                .insert(key.clone(), (n + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }

        let mut take_float = |key: &str, required: bool| -> Result<Option<T>> {
            match values.remove(key) {
                None if required => Err(Error::Parse {
                    line: 0,
                    message: format!("missing key `{key}`"),
                }),
                None => Ok(None),
                Some((line, v)) => {
                    let parsed: T = v.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("`{key}`: `{v}` is not a number"),
                    })?;
                    if !parsed.is_finite() {
                        return Err(Error::Parse {
                            line,
                            message: format!("`{key}` must be finite"),
                        });
                    }
                    Ok(Some(parsed))
                }
            }
        };

        let mut bs = [T::zero(); PARAMS_PER_SET];
        let mut at = [T::zero(); PARAMS_PER_SET];
        for i in 0..PARAMS_PER_SET {
            bs[i] = take_float(&BackscatterParams::<T>::key(i), true)?.unwrap_or_default();
            at[i] = take_float(&AttenuationParams::<T>::key(i), true)?.unwrap_or_default();
        }
        if let Some(i) = bs.iter().chain(&at).position(|v| *v < T::zero()) {
            let key = if i < PARAMS_PER_SET {
                BackscatterParams::<T>::key(i)
            } else {
                AttenuationParams::<T>::key(i - PARAMS_PER_SET)
            };
            return Err(Error::Parse {
                line: 0,
                message: format!("`{key}` must be non-negative"),
            });
        }

        let mut opts = [AdamState::default(), AdamState::default()];
        let groups = [
            BackscatterParams::<T>::GROUPS,
            AttenuationParams::<T>::GROUPS,
        ];
        for (opt, groups) in opts.iter_mut().zip(groups) {
            for i in 0..PARAMS_PER_SET {
                let suffix = format!("{}.{}", groups[i / 3], CHANNEL_NAMES[i % 3]);
                if let Some(m) = take_float(&format!("moment1.{suffix}"), false)? {
                    opt.m[i] = m;
                }
                if let Some(v) = take_float(&format!("moment2.{suffix}"), false)? {
                    if v < T::zero() {
                        return Err(Error::Parse {
                            line: 0,
                            message: format!("`moment2.{suffix}` must be non-negative"),
                        });
                    }
                    opt.v[i] = v;
                }
            }
        }
        for (opt, key) in opts
            .iter_mut()
            .zip(["steps.backscatter", "steps.attenuation"])
        {
            if let Some((line, v)) = values.remove(key) {
                opt.step = v.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{key}`: `{v}` is not a step count"),
                })?;
            }
        }

        if let Some((key, (line, _))) = values.into_iter().min_by_key(|(_, (l, _))| *l) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }

        let [backscatter_opt, attenuation_opt] = opts;
        Ok(FitState {
            backscatter: BackscatterParams::from_flat_projected(bs),
            attenuation: AttenuationParams::from_flat_projected(at),
            backscatter_opt,
            attenuation_opt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize) -> Image<f64> {
        Image::filled(w, h, [0.2, 0.3, 0.4]).unwrap()
    }

    #[test]
    fn validate_accepts_all_valid() {
        let img = image(64, 64);
        let range = RangeMap::filled(64, 64, 2.0).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        assert_eq!(pair.valid_count(), 64 * 64);
        assert_eq!(pair.valid_fraction(), 1.0);
    }

    #[test]
    fn validate_rejects_mismatched_dims() {
        let img = image(64, 64);
        let range = RangeMap::filled(32, 32, 2.0).unwrap();
        assert!(matches!(
            validate_pair(&img, &range),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validate_rejects_nan_range() {
        let img = image(64, 64);
        let range = RangeMap::filled(64, 64, f64::NAN).unwrap();
        assert!(matches!(
            validate_pair(&img, &range),
            Err(Error::InsufficientValidRange { valid: 0, .. })
        ));
    }

    #[test]
    fn validate_threshold_is_one_percent() {
        let img = image(10, 10);
        let mut z = vec![0.0; 100];
        z[17] = 3.0;
        let range = RangeMap::new(10, 10, z.clone()).unwrap();
        assert!(validate_pair(&img, &range).is_ok());
        z[17] = -3.0;
        let range = RangeMap::new(10, 10, z).unwrap();
        assert!(validate_pair(&img, &range).is_err());
    }

    #[test]
    fn range_validity_mask() {
        let r = RangeMap::new(4, 1, vec![1.0, 0.0, f64::INFINITY, -2.0]).unwrap();
        assert_eq!(r.mask(), &[true, false, false, false]);
        assert_eq!(r.at(0), Some(1.0));
        assert_eq!(r.at(3), None);
    }

    #[test]
    fn image_rejects_bad_input() {
        assert!(Image::<f64>::new(0, 3, vec![]).is_err());
        assert!(Image::new(1, 1, vec![[f64::NAN, 0.0, 0.0]]).is_err());
        assert!(Image::new(2, 1, vec![[0.0; 3]]).is_err());
        assert!(Image::<f64>::filled(MAX_SIDE + 1, 1, [0.0; 3]).is_err());
    }

    #[test]
    fn setters_clamp_negative_values() {
        let mut bs = BackscatterParams::<f64>::zero();
        bs.set_beta([-1.0, 0.5, -0.0]).unwrap();
        assert_eq!(bs.beta(), [0.0, 0.5, 0.0]);
        assert!(bs.set_eta([f64::NAN, 0.0, 0.0]).is_err());
        let at = AttenuationParams::new([-1.0; 3], [1.0; 3], [2.0; 3], [-0.1; 3]).unwrap();
        assert!(at.to_flat().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn flat_layout_is_group_major() {
        let bs = BackscatterParams::new([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [
            10.0, 11.0, 12.0,
        ])
        .unwrap();
        let flat = bs.to_flat();
        assert_eq!(flat[0], 1.0);
        assert_eq!(flat[4], 5.0);
        assert_eq!(flat[11], 12.0);
        assert_eq!(BackscatterParams::<f64>::key(4), "beta.g");
        assert_eq!(AttenuationParams::<f64>::key(11), "y.b");
        assert_eq!(BackscatterParams::from_flat_projected(flat), bs);
    }

    #[test]
    fn fit_state_text_rejects_unknown_and_missing_keys() {
        let state = FitState::new(BackscatterParams::<f64>::zero(), AttenuationParams::zero());
        let text = state.to_text();
        let bad = format!("{text}bogus.key = 1\n");
        let err = FitState::<f64>::from_text(&bad).unwrap_err();
        assert!(err.to_string().contains("bogus.key"), "{err}");

        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("eta.g"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = FitState::<f64>::from_text(&missing).unwrap_err();
        assert!(err.to_string().contains("eta.g"), "{err}");
    }

    #[test]
    fn params_only_text_loads_with_zero_moments() {
        let bs = BackscatterParams::new([0.3; 3], [1.0; 3], [0.1; 3], [0.5; 3]).unwrap();
        let at = AttenuationParams::new([0.1; 3], [0.2; 3], [0.3; 3], [0.4; 3]).unwrap();
        let state = FitState::new(bs, at);
        let parsed = FitState::<f64>::from_text(&state.params_text()).unwrap();
        assert_eq!(parsed, state);
    }
}
