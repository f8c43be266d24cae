//! Physics-based color correction for underwater images.
//!
//! A captured underwater image is modeled per channel as
//!
//! ```text
//! I = J * A(z) + B(z)
//! A(z) = exp(-a(z) z),      a(z) = w exp(-v z) + y exp(-x z)
//! B(z) = gamma_inf (1 - exp(-beta z)) + eta exp(-alpha z)
//! ```
//!
//! where `J` is the true color and `z` the per-pixel range. Given `I` and a
//! range map, the 24 model parameters are fitted by gradient descent on
//! self-supervised losses (no ground truth needed), and `J` is recovered by
//! inverting the model. Because the model has only 24 unknowns, a few
//! iterations per frame suffice once the parameters have settled, which makes
//! warm-started streaming correction cheap.
//!
//! All math is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, which is what the fitters are tuned
//! for.
//!
//! ```no_run
//! use seacolor::{io, pipeline, Image, PipelineConfig, RangeMap};
//!
//! let spec = io::ImageFileSpec::default();
//! let image: Image = io::load_image("frame.png", &spec)?;
//! let range: RangeMap = io::load_range("frame.pfm")?;
//! let out = pipeline::correct_image(&image, &range, &PipelineConfig::default())?;
//! io::save_image(&out.image, "corrected.png", &spec)?;
//! # Ok::<(), seacolor::Error>(())
//! ```

pub mod attenuation;
pub mod backscatter;
pub mod domain;
pub mod error;
pub mod eval;
pub mod formation;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod reduce;
pub mod scalar;
pub mod synth;

pub use domain::{validate_pair, ParamSet, ValidPair};
pub use error::{Error, Result};
pub use formation::BoundMode;
pub use scalar::Real;

pub type Image = domain::Image<f64>;
pub type RangeMap = domain::RangeMap<f64>;
pub type Raster = domain::Raster<f64>;
pub type BackscatterParams = domain::BackscatterParams<f64>;
pub type AttenuationParams = domain::AttenuationParams<f64>;
pub type FitState = domain::FitState<f64>;
pub type PipelineConfig = pipeline::PipelineConfig<f64>;
pub type BackscatterLossConfig = backscatter::BackscatterLossConfig<f64>;
pub type AttenuationLossConfig = attenuation::AttenuationLossConfig<f64>;
pub type AdamConfig = optim::AdamConfig<f64>;
pub type Scene = synth::Scene<f64>;

pub type ImageF32 = domain::Image<f32>;
pub type RangeMapF32 = domain::RangeMap<f32>;
