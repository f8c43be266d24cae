//! Self-supervised backscatter estimation.
//!
//! The fit relies on every range interval containing some pixels whose true
//! color is black: at those pixels the captured intensity is pure
//! backscatter. The loss rewards pushing the direct signal `D = I - B`
//! toward zero and penalizes negative direct signal `k` times harder, so the
//! optimum hugs the darkest pixels at every range from below.

use crate::domain::{BackscatterParams, ParamSet, Raster, Rgb, ValidPair, PARAMS_PER_SET};
use crate::error::{Error, Result};
use crate::formation::{backscatter_bounded, backscatter_raw, ged, BoundMode};
use crate::optim::{AdamConfig, AdamState};
use crate::reduce::Executor;
use crate::scalar::Real;

pub const DEFAULT_K: f64 = 1000.0;

/// Number of equal-width range bins in the Ω diagnostic.
pub const OMEGA_BINS: usize = 10;

/// Fraction of each bin's pixels treated as "should be black".
pub const OMEGA_DARK_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackscatterLossConfig<T> {
    /// Penalty multiplier on negative direct signal; must exceed 1.
    pub k: T,
    pub bound_mode: BoundMode,
}

impl<T: Real> Default for BackscatterLossConfig<T> {
    fn default() -> Self {
        BackscatterLossConfig {
            k: T::lit(DEFAULT_K),
            bound_mode: BoundMode::Clamp,
        }
    }
}

impl<T: Real> BackscatterLossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > T::one() && self.k.is_finite()) {
            return Err(Error::invalid(format!("k must be finite and > 1, got {}", self.k)));
        }
        Ok(())
    }
}

/// Loss value with its gradient in the parameter set's flat order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossAndGradient<T> {
    pub loss: T,
    pub grad: [T; PARAMS_PER_SET],
}

/// `D = I - bound(B_raw)` at valid pixels. Negative values are kept.
pub fn direct_signal<T: Real>(
    pair: &ValidPair<'_, T>,
    bs: &BackscatterParams<T>,
    cfg: &BackscatterLossConfig<T>,
) -> Raster<T> {
    let bounded = backscatter_bounded(&backscatter_raw(bs, pair.range()), cfg.bound_mode);
    let image = pair.image().pixels();
    let data = bounded
        .pixels()
        .iter()
        .zip(image)
        .map(|(b, i)| [0, 1, 2].map(|c| i[c] - b[c]))
        .collect();
    Raster::from_vec(bounded.width(), bounded.height(), data).expect("dimensions preserved")
}

#[inline]
fn penalty<T: Real>(d: T, k: T) -> T {
    if d > T::zero() {
        d
    } else {
        -k * d
    }
}

#[inline]
fn penalty_slope<T: Real>(d: T, k: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -k
    } else {
        T::zero()
    }
}

/// Asymmetric L1 loss `max(D, 0) + k max(-D, 0)`, summed over channels and
/// averaged over unmasked pixels. Zero when nothing is unmasked.
pub fn backscatter_loss<T: Real>(dhat: &Raster<T>, cfg: &BackscatterLossConfig<T>) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for p in dhat.valid_pixels() {
        n += 1;
        for &d in p {
            sum = sum + penalty(d, cfg.k);
        }
    }
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_usize_lossy(n)
    }
}

/// Analytic loss gradient with respect to all 12 backscatter parameters.
pub fn backscatter_gradients<T: Real>(
    pair: &ValidPair<'_, T>,
    bs: &BackscatterParams<T>,
    cfg: &BackscatterLossConfig<T>,
) -> LossAndGradient<T> {
    evaluate(pair, bs, cfg, &Executor::single())
}

pub(crate) fn evaluate<T: Real>(
    pair: &ValidPair<'_, T>,
    bs: &BackscatterParams<T>,
    cfg: &BackscatterLossConfig<T>,
    exec: &Executor,
) -> LossAndGradient<T> {
    let image = pair.image().pixels();
    let range = pair.range();
    let (gamma, beta, eta, alpha) = (bs.gamma_inf(), bs.beta(), bs.eta(), bs.alpha());
    let k = cfg.k;
    let mode = cfg.bound_mode;

    // Lane 0 is the loss, lanes 1..=12 the gradient in flat order.
    let sums: [T; 1 + PARAMS_PER_SET] = exec.sum_lanes(range.len(), |idx, acc| {
        for i in idx {
            let Some(z) = range.at(i) else { continue };
            let px = image[i];
            for c in 0..3 {
                let eb = ged(beta[c] * z);
                let ea = ged(alpha[c] * z);
                let raw = gamma[c] * (T::one() - eb) + eta[c] * ea;
                let d = px[c] - mode.apply(raw);
                acc[0] = acc[0] + penalty(d, k);
                let s = -penalty_slope(d, k) * mode.derivative(raw);
                if s != T::zero() {
                    acc[1 + c] = acc[1 + c] + s * (T::one() - eb);
                    acc[4 + c] = acc[4 + c] + s * gamma[c] * z * eb;
                    acc[7 + c] = acc[7 + c] + s * ea;
                    acc[10 + c] = acc[10 + c] - s * eta[c] * z * ea;
                }
            }
        }
    });

    let inv_n = T::one() / T::from_usize_lossy(pair.valid_count());
    let mut grad = [T::zero(); PARAMS_PER_SET];
    for (g, s) in grad.iter_mut().zip(&sums[1..]) {
        *g = *s * inv_n;
    }
    LossAndGradient {
        loss: sums[0] * inv_n,
        grad,
    }
}

/// Fitted parameters and the loss recorded before each step.
#[derive(Clone, Debug, PartialEq)]
pub struct BackscatterFit<T> {
    pub params: BackscatterParams<T>,
    pub trace: Vec<T>,
}

/// Fits from `init` with a fresh optimizer state.
pub fn fit_backscatter<T: Real>(
    pair: &ValidPair<'_, T>,
    init: &BackscatterParams<T>,
    iters: usize,
    cfg: &BackscatterLossConfig<T>,
    adam: &AdamConfig<T>,
) -> Result<BackscatterFit<T>> {
    if iters == 0 {
        return Err(Error::invalid("backscatter fit needs at least one iteration"));
    }
    let mut params = *init;
    let mut state = AdamState::default();
    let trace = run_backscatter(pair, &mut params, &mut state, iters, cfg, adam, &Executor::single())?;
    Ok(BackscatterFit { params, trace })
}

/// Continues fitting from `params` and `state` for `iters` steps, projecting
/// onto non-negative parameters after each step. `params` and `state` are
/// left untouched on error. `iters == 0` is a no-op.
pub fn run_backscatter<T: Real>(
    pair: &ValidPair<'_, T>,
    params: &mut BackscatterParams<T>,
    state: &mut AdamState<T, PARAMS_PER_SET>,
    iters: usize,
    cfg: &BackscatterLossConfig<T>,
    adam: &AdamConfig<T>,
    exec: &Executor,
) -> Result<Vec<T>> {
    cfg.validate()?;
    adam.validate()?;
    let mut p = *params;
    let mut s = *state;
    let mut trace = Vec::with_capacity(iters);
    for iteration in 0..iters {
        let eval = evaluate(pair, &p, cfg, exec);
        if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                stage: "backscatter",
                iteration,
            });
        }
        trace.push(eval.loss);
        let mut flat = p.to_flat();
        s.update(adam, &mut flat, &eval.grad);
        p = BackscatterParams::from_flat_projected(flat);
    }
    *params = p;
    *state = s;
    Ok(trace)
}

/// Data-driven starting point: veiling light from the farthest tenth of the
/// valid pixels, residual from the per-channel minimum, unit rates.
pub fn initial_backscatter<T: Real>(pair: &ValidPair<'_, T>) -> BackscatterParams<T> {
    let image = pair.image().pixels();
    let range = pair.range();
    let mut zs: Vec<T> = (0..range.len()).filter_map(|i| range.at(i)).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).expect("valid ranges are finite"));
    let cut = zs[zs.len() - zs.len().div_ceil(10)];

    let mut far = [T::zero(); 3];
    let mut far_n = 0usize;
    let mut lo = [T::infinity(); 3];
    for (i, px) in image.iter().enumerate() {
        let Some(z) = range.at(i) else { continue };
        for c in 0..3 {
            lo[c] = lo[c].min(px[c]);
        }
        if z >= cut {
            far_n += 1;
            for c in 0..3 {
                far[c] = far[c] + px[c];
            }
        }
    }
    let far = far.map(|s| s / T::from_usize_lossy(far_n));
    BackscatterParams::new(far, [T::one(); 3], lo, [T::one(); 3])
        .expect("image statistics are finite")
}

/// One range bin of the Ω diagnostic.
#[derive(Clone, Debug, PartialEq)]
pub enum OmegaBin<T> {
    Empty {
        z_lo: T,
        z_hi: T,
    },
    Occupied {
        z_lo: T,
        z_hi: T,
        /// Valid pixels in the bin.
        pixels: usize,
        /// Pixels in the darkest-1% set.
        selected: usize,
        /// Mean direct signal over the selected pixels, per channel.
        mean_direct: Rgb<T>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmegaReport<T> {
    pub bins: Vec<OmegaBin<T>>,
}

impl<T: Real> OmegaReport<T> {
    pub fn occupied(&self) -> impl Iterator<Item = Rgb<T>> + '_ {
        self.bins.iter().filter_map(|b| match b {
            OmegaBin::Occupied { mean_direct, .. } => Some(*mean_direct),
            OmegaBin::Empty { .. } => None,
        })
    }

    /// Largest absolute per-channel mean over occupied bins.
    pub fn max_abs_mean(&self) -> T {
        self.occupied()
            .flat_map(|m| m.into_iter())
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }
}

/// Bins valid pixels into [`OMEGA_BINS`] equal-width range windows, takes the
/// darkest 1% of each (ranked by mean captured intensity) and reports the
/// mean direct signal there. Near-zero means indicate a good backscatter fit.
pub fn omega_diagnostic<T: Real>(pair: &ValidPair<'_, T>, dhat: &Raster<T>) -> Result<OmegaReport<T>> {
    if dhat.dims() != pair.dims() {
        return Err(Error::DimensionMismatch {
            expected: pair.dims(),
            found: dhat.dims(),
        });
    }
    let range = pair.range();
    let image = pair.image().pixels();
    let (z_min, z_max) = range
        .valid_bounds()
        .expect("validated pair has valid pixels");
    let bins = T::from_usize_lossy(OMEGA_BINS);
    let width = (z_max - z_min) / bins;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); OMEGA_BINS];
    for i in 0..range.len() {
        let Some(z) = range.at(i) else { continue };
        if !dhat.is_valid(i) {
            continue;
        }
        let b = if width > T::zero() {
            ((z - z_min) / width).floor().to_usize().unwrap_or(0).min(OMEGA_BINS - 1)
        } else {
            0
        };
        members[b].push(i);
    }

    let three = T::lit(3.0);
    let brightness = |i: usize| (image[i][0] + image[i][1] + image[i][2]) / three;
    let bins = members
        .into_iter()
        .enumerate()
        .map(|(b, mut idx)| {
            let z_lo = z_min + width * T::from_usize_lossy(b);
            let z_hi = z_min + width * T::from_usize_lossy(b + 1);
            if idx.is_empty() {
                return OmegaBin::Empty { z_lo, z_hi };
            }
            // Stable sort keeps ties in raster order.
            idx.sort_by(|&a, &b| {
                brightness(a)
                    .partial_cmp(&brightness(b))
                    .expect("finite intensities")
            });
            let selected = ((idx.len() as f64 * OMEGA_DARK_FRACTION).ceil() as usize).max(1);
            let mut mean = [T::zero(); 3];
            for &i in &idx[..selected] {
                let d = dhat.pixels()[i];
                for c in 0..3 {
                    mean[c] = mean[c] + d[c];
                }
            }
            let n = T::from_usize_lossy(selected);
            OmegaBin::Occupied {
                z_lo,
                z_hi,
                pixels: idx.len(),
                selected,
                mean_direct: mean.map(|m| m / n),
            }
        })
        .collect();
    Ok(OmegaReport { bins })
}
