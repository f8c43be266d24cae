//! Synthetic scenes with known model parameters.
//!
//! Every scene embeds truly black pixels in each of the ten equal-width
//! range bins, so the dark-pixel assumption behind backscatter fitting holds
//! by construction. Degrading the true image with the forward model gives an
//! input whose correct answer is known exactly.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{validate_pair, AttenuationParams, BackscatterParams, FitState, Image, RangeMap, MAX_SIDE};
use crate::error::{Error, Result};
use crate::eval::{PatchSet, Rect};
use crate::formation::{attenuation_at, backscatter_at, synthesize};
use crate::io::{save_image, save_range_pfm, ImageFileSpec};
use crate::scalar::Real;

/// Number of range bins that must each contain a black pixel.
pub const RANGE_BINS: usize = 10;

/// Gray levels of the optional test chart, brightest first.
pub const CHART_LEVELS: [f64; 6] = [0.9, 0.75, 0.6, 0.45, 0.3, 0.2];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RangeProfile {
    /// Range falls linearly from `z_max` at the top row to `z_min` at the bottom.
    #[default]
    LinearRamp,
    /// Range grows linearly with distance from the image center.
    Radial,
    /// Low-frequency random field rescaled onto `[z_min, z_max]`.
    RandomSmooth,
}

impl std::str::FromStr for RangeProfile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ramp" | "linear" => Ok(RangeProfile::LinearRamp),
            "radial" => Ok(RangeProfile::Radial),
            "smooth" | "random" => Ok(RangeProfile::RandomSmooth),
            other => Err(format!("unknown range profile `{other}` (expected ramp, radial or smooth)")),
        }
    }
}

/// Procedural true-color texture: a smooth shared luminance field plus
/// per-channel chroma fields and a little per-pixel noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureSpec {
    /// Center intensity of every channel.
    pub mean: f64,
    /// Half-width of the luminance swing.
    pub luminance: f64,
    /// Half-width of the per-channel swing.
    pub chroma: f64,
    /// Half-width of uniform per-pixel noise.
    pub noise: f64,
    /// Embed a row of six gray patches.
    pub chart: bool,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            mean: 0.5,
            luminance: 0.25,
            chroma: 0.1,
            noise: 0.05,
            chart: false,
        }
    }
}

/// Inclusive draw ranges for the physical parameters plus the acceptance
/// bounds that keep a scene invertible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamRanges {
    pub gamma_inf: (f64, f64),
    pub beta: (f64, f64),
    pub eta: (f64, f64),
    pub alpha: (f64, f64),
    /// Shared by `w` and `y`.
    pub coeff: (f64, f64),
    /// Shared by `v` and `x`.
    pub rate: (f64, f64),
    /// Backscatter must stay below this at every range in the scene.
    pub max_backscatter: f64,
    /// Attenuation must stay above this at every range in the scene.
    pub min_attenuation: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            gamma_inf: (0.1, 0.6),
            beta: (0.2, 2.0),
            eta: (0.0, 0.2),
            alpha: (0.2, 2.0),
            coeff: (0.05, 0.8),
            rate: (0.05, 1.0),
            max_backscatter: 0.7,
            min_attenuation: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub profile: RangeProfile,
    pub z_min: f64,
    pub z_max: f64,
    pub texture: TextureSpec,
    /// Fraction of each range bin forced to black, in `(0, 0.05]`.
    pub black_fraction: f64,
    pub ranges: ParamRanges,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 128,
            height: 128,
            profile: RangeProfile::LinearRamp,
            z_min: 1.0,
            z_max: 6.0,
            texture: TextureSpec::default(),
            black_fraction: 0.02,
            ranges: ParamRanges::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > MAX_SIDE || self.height > MAX_SIDE {
            return Err(Error::invalid(format!(
                "scene size {}x{} out of range",
                self.width, self.height
            )));
        }
        if !(self.z_min.is_finite() && self.z_min > 0.0) {
            return Err(Error::invalid(format!("z_min must be positive, got {}", self.z_min)));
        }
        if !(self.z_max.is_finite() && self.z_max > self.z_min) {
            return Err(Error::invalid(format!(
                "z_max ({}) must exceed z_min ({})",
                self.z_max, self.z_min
            )));
        }
        if !(self.black_fraction > 0.0 && self.black_fraction <= 0.05) {
            return Err(Error::invalid(format!(
                "black fraction must lie in (0, 0.05], got {}",
                self.black_fraction
            )));
        }
        let r = &self.ranges;
        for (name, (lo, hi)) in [
            ("gamma_inf", r.gamma_inf),
            ("beta", r.beta),
            ("eta", r.eta),
            ("alpha", r.alpha),
            ("coeff", r.coeff),
            ("rate", r.rate),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// A generated scene: the ground truth and everything needed to degrade it.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub truth: Image<T>,
    pub range: RangeMap<T>,
    pub backscatter: BackscatterParams<T>,
    pub attenuation: AttenuationParams<T>,
    /// Gray patches, when the texture asked for a chart.
    pub chart: Option<PatchSet>,
}

/// Sum of random sinusoids, normalized into `[-1, 1]`.
struct SmoothField {
    waves: Vec<(f64, f64, f64, f64)>,
    norm: f64,
}

impl SmoothField {
    fn new(rng: &mut ChaCha8Rng, waves: usize, max_cycles: f64) -> Self {
        let waves: Vec<_> = (0..waves)
            .map(|_| {
                let angle = rng.gen_range(0.0..TAU);
                let cycles = rng.gen_range(0.5..max_cycles);
                let amp = rng.gen_range(0.3..1.0);
                let phase = rng.gen_range(0.0..TAU);
                (cycles * angle.cos(), cycles * angle.sin(), amp, phase)
            })
            .collect();
        let norm = waves.iter().map(|w| w.2).sum();
        SmoothField { waves, norm }
    }

    /// `u, v` are normalized image coordinates in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(fu, fv, amp, phase)| amp * (TAU * (fu * u + fv * v) + phase).sin())
            .sum::<f64>()
            / self.norm
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> [f64; 3] {
    [0; 3].map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
}

fn draw_params(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
) -> Result<(BackscatterParams<f64>, AttenuationParams<f64>)> {
    let r = &spec.ranges;
    let probes: Vec<f64> = (0..=64)
        .map(|i| spec.z_min + (spec.z_max - spec.z_min) * i as f64 / 64.0)
        .collect();
    for _ in 0..10_000 {
        let bs = BackscatterParams::new(
            draw(rng, r.gamma_inf),
            draw(rng, r.beta),
            draw(rng, r.eta),
            draw(rng, r.alpha),
        )?;
        let at = AttenuationParams::new(
            draw(rng, r.rate),
            draw(rng, r.coeff),
            draw(rng, r.rate),
            draw(rng, r.coeff),
        )?;
        let ok = probes.iter().all(|&z| {
            backscatter_at(&bs, z).iter().all(|b| *b < r.max_backscatter)
                && attenuation_at(&at, z).iter().all(|a| *a > r.min_attenuation)
        });
        if ok {
            return Ok((bs, at));
        }
    }
    Err(Error::invalid(
        "no parameter draw satisfies the backscatter/attenuation bounds over this range span",
    ))
}

fn range_field(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let span = spec.z_max - spec.z_min;
    let u = |x: usize| if w > 1 { x as f64 / (w - 1) as f64 } else { 0.5 };
    let v = |y: usize| if h > 1 { y as f64 / (h - 1) as f64 } else { 0.5 };
    let raw: Vec<f64> = match spec.profile {
        RangeProfile::LinearRamp => (0..h)
            .flat_map(|y| (0..w).map(move |_| 1.0 - v(y)))
            .collect(),
        RangeProfile::Radial => {
            let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            (0..h)
                .flat_map(|y| (0..w).map(move |x| ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt()))
                .collect()
        }
        RangeProfile::RandomSmooth => {
            let field = SmoothField::new(rng, 4, 1.5);
            (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .map(|(x, y)| field.at(u(x), v(y)))
                .collect()
        }
    };
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    raw.into_iter()
        .map(|r| {
            if hi > lo {
                spec.z_min + span * (r - lo) / (hi - lo)
            } else {
                spec.z_min
            }
        })
        .collect()
}

fn chart_layout(width: usize, height: usize) -> Option<Vec<Rect>> {
    let side = (width / 10).min(height / 6);
    if side < 3 {
        return None;
    }
    let gap = side / 3;
    let total = 6 * side + 5 * gap;
    if total > width {
        return None;
    }
    let x0 = (width - total) / 2;
    let y0 = height / 2 - side / 2;
    Some(
        (0..6)
            .map(|i| Rect {
                x: x0 + i * (side + gap),
                y: y0,
                w: side,
                h: side,
            })
            .collect(),
    )
}

/// Bin index of `z` among [`RANGE_BINS`] equal-width bins over `[lo, hi]`.
pub fn range_bin(z: f64, lo: f64, hi: f64) -> usize {
    if hi > lo {
        (((z - lo) / (hi - lo) * RANGE_BINS as f64).floor() as usize).min(RANGE_BINS - 1)
    } else {
        0
    }
}

pub fn generate_scene<T: Real>(spec: &SceneSpec) -> Result<Scene<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (bs, at) = draw_params(&mut rng, spec)?;
    let z = range_field(&mut rng, spec);

    let (w, h) = (spec.width, spec.height);
    let tex = &spec.texture;
    let lum = SmoothField::new(&mut rng, 6, 6.0);
    let chroma = [0; 3].map(|_| SmoothField::new(&mut rng, 4, 4.0));
    let mut truth: Vec<[f64; 3]> = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let l = lum.at(u, v);
            let px = [0, 1, 2].map(|c| {
                let n = if tex.noise > 0.0 {
                    rng.gen_range(-tex.noise..=tex.noise)
                } else {
                    0.0
                };
                (tex.mean + tex.luminance * l + tex.chroma * chroma[c].at(u, v) + n).clamp(0.0, 1.0)
            });
            truth.push(px);
        }
    }

    let mut reserved = vec![false; w * h];
    let chart = if tex.chart {
        chart_layout(w, h).map(|rects| {
            for (r, level) in rects.iter().zip(CHART_LEVELS) {
                for y in r.y..r.y + r.h {
                    for x in r.x..r.x + r.w {
                        truth[y * w + x] = [level; 3];
                        reserved[y * w + x] = true;
                    }
                }
            }
            PatchSet::new(rects)
        })
    } else {
        None
    };

    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); RANGE_BINS];
    for (i, &zi) in z.iter().enumerate() {
        if !reserved[i] {
            bins[range_bin(zi, lo, hi)].push(i);
        }
    }
    for members in bins.iter_mut().filter(|m| !m.is_empty()) {
        let count = ((members.len() as f64 * spec.black_fraction).round() as usize).max(1);
        // Partial Fisher-Yates: the first `count` entries become black.
        for k in 0..count {
            let j = rng.gen_range(k..members.len());
            members.swap(k, j);
            truth[members[k]] = [0.0; 3];
        }
    }

    let cast3 = |p: [f64; 3]| p.map(T::lit);
    let truth = Image::new(w, h, truth.into_iter().map(cast3).collect())?;
    let range = RangeMap::new(w, h, z.into_iter().map(T::lit).collect())?;
    let backscatter = BackscatterParams::new(
        cast3(bs.gamma_inf()),
        cast3(bs.beta()),
        cast3(bs.eta()),
        cast3(bs.alpha()),
    )?;
    let attenuation = AttenuationParams::new(cast3(at.v()), cast3(at.w()), cast3(at.x()), cast3(at.y()))?;
    Ok(Scene {
        truth,
        range,
        backscatter,
        attenuation,
        chart,
    })
}

/// The captured image the scene would produce under its parameters.
pub fn degrade<T: Real>(scene: &Scene<T>) -> Image<T> {
    let pair = validate_pair(&scene.truth, &scene.range).expect("generated scenes have full valid range");
    synthesize(&pair, &scene.backscatter, &scene.attenuation)
}

/// Writes `J.png`, `Z.pfm`, `I.png` (16-bit linear) and `params.txt`.
pub fn write_bundle<T: Real>(scene: &Scene<T>, degraded: &Image<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = ImageFileSpec::default();
    save_image(&scene.truth, dir.join("J.png"), &spec)?;
    save_range_pfm(&scene.range, dir.join("Z.pfm"))?;
    save_image(degraded, dir.join("I.png"), &spec)?;
    let params = FitState::new(scene.backscatter, scene.attenuation).params_text();
    let path = dir.join("params.txt");
    fs::write(&path, params).map_err(|e| Error::io(path, e))
}
