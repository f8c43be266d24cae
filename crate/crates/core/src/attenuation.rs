//! Attenuation estimation and true-color recovery.
//!
//! Given the backscatter-free direct signal `D`, the true color is
//! `J = D exp(a(z) z)`. The attenuation parameters are fitted by a composite
//! heuristic loss: keep pixels below saturation, pull each channel's mean
//! toward mid-gray, and keep each channel's spread close to that of `D`.

use crate::backscatter::LossAndGradient;
use crate::domain::{AttenuationParams, Image, ParamSet, Raster, Rgb, ValidPair, PARAMS_PER_SET};
use crate::error::{Error, Result};
use crate::formation::ged;
use crate::optim::{AdamConfig, AdamState};
use crate::reduce::Executor;
use crate::scalar::Real;

/// Relative weights of the saturation, intensity and variation terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttenuationLossConfig<T> {
    pub saturation: T,
    pub intensity: T,
    pub variation: T,
}

impl<T: Real> Default for AttenuationLossConfig<T> {
    fn default() -> Self {
        AttenuationLossConfig {
            saturation: T::one(),
            intensity: T::one(),
            variation: T::one(),
        }
    }
}

impl<T: Real> AttenuationLossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("saturation", self.saturation),
            ("intensity", self.intensity),
            ("variation", self.variation),
        ] {
            if !(w.is_finite() && w >= T::zero()) {
                return Err(Error::invalid(format!(
                    "{name} weight must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Default starting point: every rate and coefficient at 0.5 per meter.
pub fn initial_attenuation<T: Real>() -> AttenuationParams<T> {
    let half = [T::lit(0.5); 3];
    AttenuationParams::new(half, half, half, half).expect("finite constants")
}

/// Recovered true color before and after clamping into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recovery<T> {
    /// Unclamped estimate; masked where the range or direct signal is unusable.
    pub preclamp: Raster<T>,
    /// Clamped estimate; masked pixels copy the captured image.
    pub image: Image<T>,
}

#[inline]
fn gain<T: Real>(at: &AttenuationParams<T>, z: T) -> Rgb<T> {
    let (v, w, x, y) = (at.v(), at.w(), at.x(), at.y());
    [0, 1, 2].map(|c| {
        let a = w[c] * ged(v[c] * z) + y[c] * ged(x[c] * z);
        (a * z).exp()
    })
}

/// `J = max(D, 0) exp(a(z) z)` at pixels with a valid range and direct
/// signal.
pub fn recover_true_color<T: Real>(
    pair: &ValidPair<'_, T>,
    dhat: &Raster<T>,
    at: &AttenuationParams<T>,
) -> Result<Recovery<T>> {
    if dhat.dims() != pair.dims() {
        return Err(Error::DimensionMismatch {
            expected: pair.dims(),
            found: dhat.dims(),
        });
    }
    let range = pair.range();
    let captured = pair.image().pixels();
    let (w, h) = pair.dims();
    let mut pre = Vec::with_capacity(range.len());
    let mut out = Vec::with_capacity(range.len());
    for (i, d) in dhat.pixels().iter().enumerate() {
        match range.at(i) {
            Some(z) if dhat.is_valid(i) => {
                let g = gain(at, z);
                let j = [0, 1, 2].map(|c| {
                    if d[c] > T::zero() {
                        d[c] * g[c]
                    } else {
                        T::zero()
                    }
                });
                pre.push(j);
                out.push(j.map(|v| v.max(T::zero()).min(T::one())));
            }
            _ => {
                pre.push([T::nan(); 3]);
                out.push(captured[i]);
            }
        }
    }
    Ok(Recovery {
        preclamp: Raster::from_vec(w, h, pre)?,
        image: Image::new(w, h, out)?,
    })
}

/// Running mean and population variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments<T> {
    n: usize,
    mean: T,
    m2: T,
}

impl<T: Real> Moments<T> {
    pub fn push(&mut self, x: T) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::from_usize_lossy(self.n);
        self.m2 = self.m2 + delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        if self.n == 0 {
            T::zero()
        } else {
            (self.m2 / T::from_usize_lossy(self.n)).max(T::zero())
        }
    }

    pub fn std_dev(&self) -> T {
        self.variance().sqrt()
    }
}

/// Population standard deviation of `values`; 0 for an empty input.
pub fn population_std<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut m = Moments::default();
    for v in values {
        m.push(v);
    }
    m.std_dev()
}

fn channel_moments<T: Real>(r: &Raster<T>, mask: &Raster<T>) -> [Moments<T>; 3] {
    let mut m = [Moments::default(); 3];
    for (i, p) in r.pixels().iter().enumerate() {
        if mask.is_valid(i) {
            for c in 0..3 {
                m[c].push(p[c]);
            }
        }
    }
    m
}

/// `(1 / 3N) sum_c || max(J_c - 1, 0) ||^2` over unmasked pixels.
pub fn saturation_loss<T: Real>(jhat: &Raster<T>) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for p in jhat.valid_pixels() {
        n += 1;
        for &v in p {
            let over = (v - T::one()).max(T::zero());
            sum = sum + over * over;
        }
    }
    if n == 0 {
        return T::zero();
    }
    sum / (T::lit(3.0) * T::from_usize_lossy(n))
}

/// `(1 / 3) sum_c (mean(J_c) - 0.5)^2` over unmasked pixels.
pub fn intensity_loss<T: Real>(jhat: &Raster<T>) -> T {
    let m = channel_moments(jhat, jhat);
    if m[0].count() == 0 {
        return T::zero();
    }
    let half = T::lit(0.5);
    m.iter()
        .map(|c| (c.mean() - half) * (c.mean() - half))
        .sum::<T>()
        / T::lit(3.0)
}

/// `(1 / 3) sum_c (s(J_c) - s(D_c))^2` with `s` the population standard
/// deviation over the pixels unmasked in `jhat`.
pub fn variation_loss<T: Real>(jhat: &Raster<T>, dhat: &Raster<T>) -> Result<T> {
    if jhat.dims() != dhat.dims() {
        return Err(Error::DimensionMismatch {
            expected: jhat.dims(),
            found: dhat.dims(),
        });
    }
    let mj = channel_moments(jhat, jhat);
    if mj[0].count() < 2 {
        return Err(Error::TooFewPixels {
            count: mj[0].count(),
        });
    }
    let md = channel_moments(dhat, jhat);
    Ok((0..3)
        .map(|c| {
            let diff = mj[c].std_dev() - md[c].std_dev();
            diff * diff
        })
        .sum::<T>()
        / T::lit(3.0))
}

/// Weighted sum of the saturation, intensity and variation losses.
pub fn attenuation_loss<T: Real>(
    jhat: &Raster<T>,
    dhat: &Raster<T>,
    cfg: &AttenuationLossConfig<T>,
) -> Result<T> {
    Ok(cfg.saturation * saturation_loss(jhat)
        + cfg.intensity * intensity_loss(jhat)
        + cfg.variation * variation_loss(jhat, dhat)?)
}

/// Per-channel spread of the direct signal over the pixels the attenuation
/// losses see. Fixed for the duration of an attenuation fit.
fn direct_spread<T: Real>(pair: &ValidPair<'_, T>, dhat: &Raster<T>) -> Result<(usize, Rgb<T>)> {
    if dhat.dims() != pair.dims() {
        return Err(Error::DimensionMismatch {
            expected: pair.dims(),
            found: dhat.dims(),
        });
    }
    let range = pair.range();
    let mut m = [Moments::default(); 3];
    for (i, d) in dhat.pixels().iter().enumerate() {
        if range.is_valid(i) && dhat.is_valid(i) {
            for c in 0..3 {
                m[c].push(d[c]);
            }
        }
    }
    let n = m[0].count();
    if n < 2 {
        return Err(Error::TooFewPixels { count: n });
    }
    Ok((n, m.map(|c| c.std_dev())))
}

const LANES_PER_CHANNEL: usize = 15;
const LANES: usize = 3 * LANES_PER_CHANNEL;

/// Analytic gradient of the composite loss with respect to all 12
/// attenuation parameters, evaluated on the recovery of `dhat`.
pub fn attenuation_gradients<T: Real>(
    pair: &ValidPair<'_, T>,
    dhat: &Raster<T>,
    at: &AttenuationParams<T>,
    cfg: &AttenuationLossConfig<T>,
) -> Result<LossAndGradient<T>> {
    let spread = direct_spread(pair, dhat)?;
    Ok(evaluate(pair, dhat, spread, at, cfg, &Executor::single()))
}

fn evaluate<T: Real>(
    pair: &ValidPair<'_, T>,
    dhat: &Raster<T>,
    (n, d_std): (usize, Rgb<T>),
    at: &AttenuationParams<T>,
    cfg: &AttenuationLossConfig<T>,
    exec: &Executor,
) -> LossAndGradient<T> {
    let range = pair.range();
    let direct = dhat.pixels();
    let (v, w, x, y) = (at.v(), at.w(), at.x(), at.y());

    // Per channel: [sum J, sum J^2, sum hinge^2, then for each parameter
    // group p: sum hinge dJ/dp, sum dJ/dp, sum J dJ/dp].
    let sums: [T; LANES] = exec.sum_lanes(range.len(), |idx, acc| {
        for i in idx {
            let Some(z) = range.at(i) else { continue };
            if !dhat.is_valid(i) {
                continue;
            }
            for c in 0..3 {
                let d = direct[i][c];
                if d <= T::zero() {
                    // J is pinned at 0 and contributes nothing but its count.
                    continue;
                }
                let ev = ged(v[c] * z);
                let ex = ged(x[c] * z);
                let a = w[c] * ev + y[c] * ex;
                let j = d * (a * z).exp();
                let hinge = (j - T::one()).max(T::zero());
                let dj = [
                    -j * w[c] * z * z * ev,
                    j * z * ev,
                    -j * y[c] * z * z * ex,
                    j * z * ex,
                ];
                let o = c * LANES_PER_CHANNEL;
                acc[o] = acc[o] + j;
                acc[o + 1] = acc[o + 1] + j * j;
                acc[o + 2] = acc[o + 2] + hinge * hinge;
                for (p, q) in dj.iter().enumerate() {
                    let b = o + 3 + 3 * p;
                    acc[b] = acc[b] + hinge * *q;
                    acc[b + 1] = acc[b + 1] + *q;
                    acc[b + 2] = acc[b + 2] + j * *q;
                }
            }
        }
    });

    let nn = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let half = T::lit(0.5);
    let mut loss = T::zero();
    let mut grad = [T::zero(); PARAMS_PER_SET];
    for c in 0..3 {
        let s = &sums[c * LANES_PER_CHANNEL..(c + 1) * LANES_PER_CHANNEL];
        let mean = s[0] / nn;
        let var = (s[1] / nn - mean * mean).max(T::zero());
        let sd = var.sqrt();
        let dev = sd - d_std[c];
        loss = loss
            + cfg.saturation * s[2] / (three * nn)
            + cfg.intensity * (mean - half) * (mean - half) / three
            + cfg.variation * dev * dev / three;

        let k_sat = cfg.saturation * two / (three * nn);
        let k_int = cfg.intensity * two * (mean - half) / (three * nn);
        let k_var = if sd > T::zero() {
            cfg.variation * two * dev / (three * nn * sd)
        } else {
            T::zero()
        };
        for p in 0..4 {
            let b = 3 + 3 * p;
            let (h, q, jq) = (s[b], s[b + 1], s[b + 2]);
            grad[3 * p + c] = k_sat * h + k_int * q + k_var * (jq - mean * q);
        }
    }
    LossAndGradient { loss, grad }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttenuationFit<T> {
    pub params: AttenuationParams<T>,
    pub trace: Vec<T>,
}

/// Fits from `init` with a fresh optimizer state.
pub fn fit_attenuation<T: Real>(
    pair: &ValidPair<'_, T>,
    dhat: &Raster<T>,
    init: &AttenuationParams<T>,
    iters: usize,
    cfg: &AttenuationLossConfig<T>,
    adam: &AdamConfig<T>,
) -> Result<AttenuationFit<T>> {
    if iters == 0 {
        return Err(Error::invalid("attenuation fit needs at least one iteration"));
    }
    let mut params = *init;
    let mut state = AdamState::default();
    let trace = run_attenuation(
        pair,
        dhat,
        &mut params,
        &mut state,
        iters,
        cfg,
        adam,
        &Executor::single(),
    )?;
    Ok(AttenuationFit { params, trace })
}

/// Warm-started counterpart of [`fit_attenuation`]; see
/// [`run_backscatter`](crate::backscatter::run_backscatter).
#[allow(clippy::too_many_arguments)]
pub fn run_attenuation<T: Real>(
    pair: &ValidPair<'_, T>,
    dhat: &Raster<T>,
    params: &mut AttenuationParams<T>,
    state: &mut AdamState<T, PARAMS_PER_SET>,
    iters: usize,
    cfg: &AttenuationLossConfig<T>,
    adam: &AdamConfig<T>,
    exec: &Executor,
) -> Result<Vec<T>> {
    cfg.validate()?;
    adam.validate()?;
    let spread = direct_spread(pair, dhat)?;
    let mut p = *params;
    let mut s = *state;
    let mut trace = Vec::with_capacity(iters);
    for iteration in 0..iters {
        let eval = evaluate(pair, dhat, spread, &p, cfg, exec);
        if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                stage: "attenuation",
                iteration,
            });
        }
        trace.push(eval.loss);
        let mut flat = p.to_flat();
        s.update(adam, &mut flat, &eval.grad);
        p = AttenuationParams::from_flat_projected(flat);
    }
    *params = p;
    *state = s;
    Ok(trace)
}

/// Composite loss at `at` using the fitter's own accumulation path.
pub(crate) fn fitted_loss<T: Real>(
    pair: &ValidPair<'_, T>,
    dhat: &Raster<T>,
    at: &AttenuationParams<T>,
    cfg: &AttenuationLossConfig<T>,
    exec: &Executor,
) -> Result<T> {
    let spread = direct_spread(pair, dhat)?;
    Ok(evaluate(pair, dhat, spread, at, cfg, exec).loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_pair, RangeMap};

    fn raster(px: Vec<[f64; 3]>) -> Raster<f64> {
        let n = px.len();
        Raster::from_vec(n, 1, px).unwrap()
    }

    fn uniform_at(v: f64, w: f64, x: f64, y: f64) -> AttenuationParams<f64> {
        AttenuationParams::new([v; 3], [w; 3], [x; 3], [y; 3]).unwrap()
    }

    #[test]
    fn recovery_examples() {
        let img = Image::filled(1, 1, [0.5; 3]).unwrap();
        let range = RangeMap::filled(1, 1, 1.0).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        // a(z) z = 1 at z = 1 with v = x = 0, w = y = 0.5.
        let at = uniform_at(0.0, 0.5, 0.0, 0.5);
        let d = raster(vec![[0.3, 0.9, -0.2]]);
        let rec = recover_true_color(&pair, &d, &at).unwrap();
        let pre = rec.preclamp.pixels()[0];
        assert!((pre[0] - 0.3 * std::f64::consts::E).abs() < 1e-15);
        assert!((pre[0] - 0.81548).abs() < 1e-5);
        assert!((pre[1] - 2.4465).abs() < 1e-4);
        assert_eq!(pre[2], 0.0);
        assert_eq!(rec.image.pixels()[0][1], 1.0);

        let rec = recover_true_color(&pair, &d, &AttenuationParams::zero()).unwrap();
        assert_eq!(rec.preclamp.pixels()[0], [0.3, 0.9, 0.0]);
    }

    #[test]
    fn recovery_copies_masked_pixels() {
        let img = Image::new(2, 1, vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]).unwrap();
        let range = RangeMap::new(2, 1, vec![1.0, -1.0]).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        let d = raster(vec![[0.2; 3], [f64::NAN; 3]]);
        let rec = recover_true_color(&pair, &d, &uniform_at(0.1, 0.2, 0.3, 0.4)).unwrap();
        assert_eq!(rec.image.pixels()[1], [0.4, 0.5, 0.6]);
        assert!(!rec.preclamp.is_valid(1));
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(saturation_loss(&raster(vec![[0.2, 1.0, 0.9]; 4])), 0.0);
        let l = saturation_loss(&raster(vec![[1.5, 1.0, 0.2]]));
        assert!((l - 0.25 / 3.0).abs() < 1e-15);
        for n in [1, 7, 64] {
            let l = saturation_loss(&raster(vec![[2.0; 3]; n]));
            assert!((l - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(intensity_loss(&raster(vec![[0.5; 3]; 5])), 0.0);
        assert!((intensity_loss(&raster(vec![[1.0; 3]; 5])) - 0.25).abs() < 1e-15);
        assert!((intensity_loss(&raster(vec![[0.0; 3]; 5])) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn variation_examples() {
        let d = raster(vec![[0.1, 0.2, 0.3], [0.3, 0.5, 0.4], [0.2, 0.1, 0.0]]);
        assert_eq!(variation_loss(&d, &d).unwrap(), 0.0);

        // Red spread 0.3 against 0.1; green and blue identical.
        let j = raster(vec![[0.2, 0.4, 0.4], [0.8, 0.6, 0.6]]);
        let dd = raster(vec![[0.4, 0.4, 0.4], [0.6, 0.6, 0.6]]);
        let l = variation_loss(&j, &dd).unwrap();
        assert!((l - 0.04 / 3.0).abs() < 1e-15);

        let c = raster(vec![[0.7; 3]; 4]);
        let c2 = raster(vec![[0.1; 3]; 4]);
        assert_eq!(variation_loss(&c, &c2).unwrap(), 0.0);

        let one = raster(vec![[0.7; 3]]);
        assert!(matches!(variation_loss(&one, &one), Err(Error::TooFewPixels { count: 1 })));
    }

    #[test]
    fn composite_examples() {
        // Three pixels built so the terms are (1/12, 1/4, 0.04/3).
        let cfg = AttenuationLossConfig::default();
        let zero = raster(vec![[0.5; 3]; 2]);
        assert_eq!(attenuation_loss(&zero, &zero, &cfg).unwrap(), 0.0);

        let j = raster(vec![[1.0; 3], [1.0; 3]]);
        let only_int = AttenuationLossConfig {
            saturation: 0.0,
            intensity: 1.0,
            variation: 0.0,
        };
        assert_eq!(
            attenuation_loss(&j, &zero, &only_int).unwrap(),
            intensity_loss(&j)
        );
        let sum: f64 = 0.25 / 3.0 + 0.25 + 0.04 / 3.0;
        assert!((sum - 0.34667).abs() < 1e-5);

        let j = raster(vec![[1.5, 0.2, 0.4], [0.3, 0.9, 0.1], [0.6, 0.6, 0.7]]);
        let d = raster(vec![[0.5, 0.1, 0.2], [0.2, 0.3, 0.05], [0.3, 0.2, 0.3]]);
        let terms = saturation_loss(&j) + intensity_loss(&j) + variation_loss(&j, &d).unwrap();
        assert!((attenuation_loss(&j, &d, &cfg).unwrap() - terms).abs() < 1e-15);
    }

    #[test]
    fn std_is_scale_equivariant() {
        let xs: [f64; 5] = [0.3, -1.2, 4.5, 0.0, 2.25];
        let s = population_std(xs);
        for c in [-3.0f64, 0.5, 7.0] {
            let sc = population_std(xs.map(|x| x * c));
            assert!((sc - c.abs() * s).abs() < 1e-12);
        }
        assert_eq!(population_std([0.4; 9]), 0.0);
        assert_eq!(population_std(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn intensity_gradient_vanishes_at_its_optimum() {
        let img = Image::filled(2, 2, [0.5; 3]).unwrap();
        let range = RangeMap::from_fn(2, 2, |x, y| 1.0 + (x + 2 * y) as f64).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        let d = Raster::from_vec(2, 2, vec![[0.4; 3], [0.6; 3], [0.45; 3], [0.55; 3]]).unwrap();
        let cfg = AttenuationLossConfig {
            saturation: 0.0,
            intensity: 1.0,
            variation: 0.0,
        };
        let g = attenuation_gradients(&pair, &d, &AttenuationParams::zero(), &cfg).unwrap();
        assert!(g.grad.iter().all(|v| v.abs() < 1e-15), "{:?}", g.grad);
    }

    #[test]
    fn constant_direct_signal_has_finite_gradient() {
        let img = Image::filled(3, 3, [0.5; 3]).unwrap();
        let range = RangeMap::filled(3, 3, 2.0).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        let d = Raster::<f64>::from_vec(3, 3, vec![[0.2; 3]; 9]).unwrap();
        let g = attenuation_gradients(&pair, &d, &initial_attenuation(), &AttenuationLossConfig::default())
            .unwrap();
        assert!(g.grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stationary_start_stays_put() {
        let img = Image::filled(4, 4, [0.5; 3]).unwrap();
        let range = RangeMap::from_fn(4, 4, |x, y| 1.0 + 0.2 * (x + 4 * y) as f64).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        let d = Raster::from_vec(
            4,
            4,
            (0..16).map(|i| [0.4 + 0.2 * (i % 2) as f64; 3]).collect(),
        )
        .unwrap();
        let fit = fit_attenuation(
            &pair,
            &d,
            &AttenuationParams::zero(),
            50,
            &AttenuationLossConfig::default(),
            &AdamConfig::default(),
        )
        .unwrap();
        assert!(fit.params.to_flat().iter().all(|v| v.abs() < 1e-9), "{:?}", fit.params);
    }

    #[test]
    fn fitter_loss_matches_standalone_loss() {
        let img = Image::filled(5, 4, [0.5; 3]).unwrap();
        let range = RangeMap::from_fn(5, 4, |x, y| 0.5 + 0.3 * (x + 5 * y) as f64).unwrap();
        let pair = validate_pair(&img, &range).unwrap();
        let d = Raster::from_vec(
            5,
            4,
            (0..20)
                .map(|i| {
                    let t = i as f64 / 20.0;
                    [0.1 + 0.3 * t, 0.4 - 0.2 * t, 0.05 + 0.5 * t * t]
                })
                .collect(),
        )
        .unwrap();
        let at = uniform_at(0.2, 0.6, 0.1, 0.3);
        let cfg = AttenuationLossConfig::default();
        let rec = recover_true_color(&pair, &d, &at).unwrap();
        let standalone = attenuation_loss(&rec.preclamp, &d, &cfg).unwrap();
        let fitted = fitted_loss(&pair, &d, &at, &cfg, &Executor::single()).unwrap();
        assert!((standalone - fitted).abs() < 1e-12 * standalone.max(1.0));
    }
}
