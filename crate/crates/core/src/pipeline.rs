//! End-to-end correction of single images and of frame streams.
//!
//! Backscatter is fitted first and frozen; attenuation is then fitted on the
//! resulting direct signal. In streaming mode the parameters and optimizer
//! moments carry over from frame to frame so each frame needs only a short,
//! fixed iteration budget.

use crate::attenuation::{fitted_loss, initial_attenuation, recover_true_color, run_attenuation, AttenuationLossConfig};
use crate::backscatter::{
    direct_signal, evaluate, initial_backscatter, omega_diagnostic, run_backscatter, BackscatterLossConfig,
    OmegaReport,
};
use crate::domain::{validate_pair, FitState, Image, RangeMap, Raster, ValidPair};
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::reduce::Executor;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig<T> {
    /// Backscatter iterations for a single image (default 500).
    pub backscatter_iters: usize,
    /// Attenuation iterations for a single image (default 500).
    pub attenuation_iters: usize,
    /// Iterations of each stage per streamed frame (default 10).
    pub stream_iters: usize,
    pub backscatter: BackscatterLossConfig<T>,
    pub attenuation: AttenuationLossConfig<T>,
    pub adam: AdamConfig<T>,
    /// Clamp the corrected image into `[0, 1]`.
    pub clamp_output: bool,
    /// Worker threads for pixel reductions; results do not depend on it.
    pub threads: usize,
}

impl<T: Real> Default for PipelineConfig<T> {
    fn default() -> Self {
        PipelineConfig {
            backscatter_iters: 500,
            attenuation_iters: 500,
            stream_iters: 10,
            backscatter: BackscatterLossConfig::default(),
            attenuation: AttenuationLossConfig::default(),
            adam: AdamConfig::default(),
            clamp_output: true,
            threads: 1,
        }
    }
}

impl<T: Real> PipelineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.backscatter.validate()?;
        self.attenuation.validate()?;
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics<T> {
    pub backscatter_trace: Vec<T>,
    pub attenuation_trace: Vec<T>,
    /// Losses at the returned parameters.
    pub backscatter_loss: T,
    pub attenuation_loss: T,
    pub omega: OmegaReport<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correction<T> {
    pub image: Image<T>,
    /// Direct signal under the fitted backscatter.
    pub direct: Raster<T>,
    pub state: FitState<T>,
    pub diagnostics: Diagnostics<T>,
}

/// Corrected image for `state`, clamped or not per `cfg`.
fn render<T: Real>(
    pair: &ValidPair<'_, T>,
    state: &FitState<T>,
    cfg: &PipelineConfig<T>,
) -> Result<(Raster<T>, Image<T>)> {
    let direct = direct_signal(pair, &state.backscatter, &cfg.backscatter);
    let rec = recover_true_color(pair, &direct, &state.attenuation)?;
    let image = if cfg.clamp_output {
        rec.image
    } else {
        let (w, h) = pair.dims();
        let data = rec
            .preclamp
            .pixels()
            .iter()
            .zip(pair.image().pixels())
            .map(|(j, i)| if j[0].is_nan() { *i } else { *j })
            .collect();
        Image::new(w, h, data)?
    };
    Ok((direct, image))
}

struct StageOutcome<T> {
    backscatter_trace: Vec<T>,
    attenuation_trace: Vec<T>,
    backscatter_loss: T,
    attenuation_loss: T,
    direct: Raster<T>,
    image: Image<T>,
}

/// Runs both stages in order on `state`, committing only on success.
fn fit_stages<T: Real>(
    pair: &ValidPair<'_, T>,
    state: &mut FitState<T>,
    backscatter_iters: usize,
    attenuation_iters: usize,
    cfg: &PipelineConfig<T>,
    exec: &Executor,
) -> Result<StageOutcome<T>> {
    let mut next = state.clone();
    let backscatter_trace = run_backscatter(
        pair,
        &mut next.backscatter,
        &mut next.backscatter_opt,
        backscatter_iters,
        &cfg.backscatter,
        &cfg.adam,
        exec,
    )?;
    let backscatter_loss = evaluate(pair, &next.backscatter, &cfg.backscatter, exec).loss;
    let direct = direct_signal(pair, &next.backscatter, &cfg.backscatter);
    let attenuation_trace = run_attenuation(
        pair,
        &direct,
        &mut next.attenuation,
        &mut next.attenuation_opt,
        attenuation_iters,
        &cfg.attenuation,
        &cfg.adam,
        exec,
    )?;
    let attenuation_loss = fitted_loss(pair, &direct, &next.attenuation, &cfg.attenuation, exec)?;
    if !backscatter_loss.is_finite() || !attenuation_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            stage: "final",
            iteration: backscatter_iters.max(attenuation_iters),
        });
    }
    let (direct, image) = render(pair, &next, cfg)?;
    *state = next;
    Ok(StageOutcome {
        backscatter_trace,
        attenuation_trace,
        backscatter_loss,
        attenuation_loss,
        direct,
        image,
    })
}

/// Fresh state from data-driven backscatter and default attenuation guesses.
pub fn initial_state<T: Real>(pair: &ValidPair<'_, T>) -> FitState<T> {
    FitState::new(initial_backscatter(pair), initial_attenuation())
}

/// Fits both stages from scratch and returns the corrected image.
pub fn correct_image<T: Real>(
    image: &Image<T>,
    range: &RangeMap<T>,
    cfg: &PipelineConfig<T>,
) -> Result<Correction<T>> {
    cfg.validate()?;
    let pair = validate_pair(image, range)?;
    let exec = Executor::with_threads(cfg.threads)?;
    let mut state = initial_state(&pair);
    let out = fit_stages(
        &pair,
        &mut state,
        cfg.backscatter_iters,
        cfg.attenuation_iters,
        cfg,
        &exec,
    )?;
    let omega = omega_diagnostic(&pair, &out.direct)?;
    Ok(Correction {
        image: out.image,
        direct: out.direct,
        state,
        diagnostics: Diagnostics {
            backscatter_trace: out.backscatter_trace,
            attenuation_trace: out.attenuation_trace,
            backscatter_loss: out.backscatter_loss,
            attenuation_loss: out.attenuation_loss,
            omega,
        },
    })
}

/// Result for one streamed frame. On error the captured frame is passed
/// through unchanged and the carried state is left as it was.
#[derive(Debug)]
pub struct FrameOutcome<T> {
    pub image: Image<T>,
    pub error: Option<Error>,
    /// Losses at the state after this frame's iterations.
    pub backscatter_loss: Option<T>,
    pub attenuation_loss: Option<T>,
}

/// Warm-started frame-by-frame corrector.
pub struct StreamCorrector<T> {
    cfg: PipelineConfig<T>,
    state: Option<FitState<T>>,
    dims: Option<(usize, usize)>,
    exec: Executor,
}

impl<T: Real> StreamCorrector<T> {
    /// A stream without an initial state needs `stream_iters > 0`; with one,
    /// zero iterations simply replay the carried parameters.
    pub fn new(cfg: PipelineConfig<T>, initial: Option<FitState<T>>) -> Result<Self> {
        cfg.validate()?;
        if initial.is_none() && cfg.stream_iters == 0 {
            return Err(Error::invalid(
                "streaming needs at least one iteration per frame when no initial state is given",
            ));
        }
        let exec = Executor::with_threads(cfg.threads)?;
        Ok(StreamCorrector {
            cfg,
            state: initial,
            dims: None,
            exec,
        })
    }

    pub fn state(&self) -> Option<&FitState<T>> {
        self.state.as_ref()
    }

    pub fn into_state(self) -> Option<FitState<T>> {
        self.state
    }

    pub fn push(&mut self, image: &Image<T>, range: &RangeMap<T>) -> FrameOutcome<T> {
        match self.try_push(image, range) {
            Ok((out, bl, al)) => FrameOutcome {
                image: out,
                error: None,
                backscatter_loss: Some(bl),
                attenuation_loss: Some(al),
            },
            Err(e) => FrameOutcome {
                image: image.clone(),
                error: Some(e),
                backscatter_loss: None,
                attenuation_loss: None,
            },
        }
    }

    fn try_push(&mut self, image: &Image<T>, range: &RangeMap<T>) -> Result<(Image<T>, T, T)> {
        let pair = validate_pair(image, range)?;
        if let Some(expected) = self.dims {
            if expected != pair.dims() {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: pair.dims(),
                });
            }
        }
        let mut state = match &self.state {
            Some(s) => s.clone(),
            None => initial_state(&pair),
        };
        let iters = self.cfg.stream_iters;
        let out = fit_stages(&pair, &mut state, iters, iters, &self.cfg, &self.exec)?;
        self.state = Some(state);
        self.dims = Some(pair.dims());
        Ok((out.image, out.backscatter_loss, out.attenuation_loss))
    }
}

pub struct StreamResult<T> {
    pub frames: Vec<FrameOutcome<T>>,
    pub state: Option<FitState<T>>,
}

/// Corrects `frames` in order, carrying the fit state across frames.
pub fn correct_stream<'a, T: Real>(
    frames: impl IntoIterator<Item = (&'a Image<T>, &'a RangeMap<T>)>,
    cfg: &PipelineConfig<T>,
    initial: Option<FitState<T>>,
) -> Result<StreamResult<T>> {
    let mut corrector = StreamCorrector::new(*cfg, initial)?;
    let frames = frames
        .into_iter()
        .map(|(image, range)| corrector.push(image, range))
        .collect();
    Ok(StreamResult {
        frames,
        state: corrector.into_state(),
    })
}
