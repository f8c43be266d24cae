//! Closed-form image formation model.
//!
//! A captured image is `I = J * A + B` per channel, with attenuation
//! `A = exp(-a(z) z)` and backscatter `B` both functions of range only.
//! Everything here is pure and elementwise.

use crate::domain::{AttenuationParams, BackscatterParams, Image, Raster, RangeMap, Rgb, ValidPair};
use crate::scalar::Real;

/// Gated exponential decay: `1` for `x <= 0`, `exp(-x)` otherwise.
#[inline]
pub fn ged<T: Real>(x: T) -> T {
    if x <= T::zero() {
        T::one()
    } else {
        (-x).exp()
    }
}

/// Complement of [`ged`]: `0` for `x <= 0`, `1 - exp(-x)` otherwise.
#[inline]
pub fn cged<T: Real>(x: T) -> T {
    T::one() - ged(x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// How the raw backscatter estimate is squashed into `[0, 1]` before it is
/// subtracted from the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoundMode {
    /// `min(max(x, 0), 1)`.
    #[default]
    Clamp,
    /// Logistic sigmoid. Note `sigmoid(x) >= 0.5` for the non-negative raw
    /// values this model produces.
    Sigmoid,
}

impl BoundMode {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            BoundMode::Clamp => x.max(T::zero()).min(T::one()),
            BoundMode::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative of [`apply`](Self::apply). For `Clamp` it is 1 strictly
    /// inside `(0, 1)` and 0 elsewhere, including at the kinks.
    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            BoundMode::Clamp => {
                if x > T::zero() && x < T::one() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            BoundMode::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
        }
    }
}

impl std::str::FromStr for BoundMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clamp" => Ok(BoundMode::Clamp),
            "sigmoid" => Ok(BoundMode::Sigmoid),
            other => Err(format!("unknown bound mode `{other}` (expected clamp or sigmoid)")),
        }
    }
}

impl std::fmt::Display for BoundMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundMode::Clamp => "clamp",
            BoundMode::Sigmoid => "sigmoid",
        })
    }
}

/// Raw backscatter at range `z`: `gamma_inf cged(beta z) + eta ged(alpha z)`.
#[inline]
pub fn backscatter_at<T: Real>(p: &BackscatterParams<T>, z: T) -> Rgb<T> {
    let (g, b, e, a) = (p.gamma_inf(), p.beta(), p.eta(), p.alpha());
    [0, 1, 2].map(|c| g[c] * cged(b[c] * z) + e[c] * ged(a[c] * z))
}

/// Attenuation coefficient `a(z) = w exp(-v z) + y exp(-x z)`.
#[inline]
pub fn attenuation_coeff_at<T: Real>(p: &AttenuationParams<T>, z: T) -> Rgb<T> {
    let (v, w, x, y) = (p.v(), p.w(), p.x(), p.y());
    [0, 1, 2].map(|c| w[c] * ged(v[c] * z) + y[c] * ged(x[c] * z))
}

/// Attenuation map value `exp(-a(z) z)`.
#[inline]
pub fn attenuation_at<T: Real>(p: &AttenuationParams<T>, z: T) -> Rgb<T> {
    attenuation_coeff_at(p, z).map(|a| ged(a * z))
}

pub fn backscatter_raw<T: Real>(params: &BackscatterParams<T>, range: &RangeMap<T>) -> Raster<T> {
    Raster::from_range(range, |_, z| backscatter_at(params, z))
}

pub fn backscatter_bounded<T: Real>(raw: &Raster<T>, mode: BoundMode) -> Raster<T> {
    raw.map(|p| p.map(|v| mode.apply(v)))
}

pub fn attenuation_coeff<T: Real>(params: &AttenuationParams<T>, range: &RangeMap<T>) -> Raster<T> {
    Raster::from_range(range, |_, z| attenuation_coeff_at(params, z))
}

pub fn attenuation_map<T: Real>(params: &AttenuationParams<T>, range: &RangeMap<T>) -> Raster<T> {
    Raster::from_range(range, |_, z| attenuation_at(params, z))
}

/// Forward model: degrades the true-color image of `pair` into what a
/// camera would capture. Uses unbounded backscatter and clamps only the
/// final intensities. Pixels without a valid range are copied through.
pub fn synthesize<T: Real>(
    pair: &ValidPair<'_, T>,
    bs: &BackscatterParams<T>,
    at: &AttenuationParams<T>,
) -> Image<T> {
    let truth = pair.image();
    let range = pair.range();
    let (w, h) = truth.dims();
    let data = truth
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, j)| match range.at(i) {
            None => *j,
            Some(z) => {
                let a = attenuation_at(at, z);
                let b = backscatter_at(bs, z);
                [0, 1, 2].map(|c| (j[c] * a[c] + b[c]).max(T::zero()).min(T::one()))
            }
        })
        .collect();
    Image::new(w, h, data).expect("synthesized intensities are finite")
}
