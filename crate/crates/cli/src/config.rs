//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unset keys keep the library defaults.

use std::fs;
use std::path::Path;

use seacolor::io::{ImageFileSpec, PngDepth, Transfer};
use seacolor::{BoundMode, PipelineConfig};

pub const KEYS: [&str; 17] = [
    "backscatter_iters",
    "attenuation_iters",
    "stream_iters",
    "k",
    "bound_mode",
    "saturation_weight",
    "intensity_weight",
    "variation_weight",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "clamp_output",
    "threads",
    "input_transfer",
    "output_format",
    "output_transfer",
];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    /// Only the transfer applies on load; the bit depth comes from the file.
    pub input: ImageFileSpec,
    pub output: ImageFileSpec,
}

fn value<T: std::str::FromStr>(key: &str, raw: &str, line: usize) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| format!("config line {line}: bad value `{raw}` for `{key}`: {e}"))
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = CliConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, val)) = trimmed.split_once('=') else {
                return Err(format!("config line {line}: expected `key = value`, found `{trimmed}`"));
            };
            let (key, val) = (key.trim(), val.trim());
            if !KEYS.contains(&key) {
                return Err(format!("config line {line}: unknown key `{key}`"));
            }
            if seen.contains(&key) {
                return Err(format!("config line {line}: duplicate key `{key}`"));
            }
            seen.push(key);
            let p = &mut cfg.pipeline;
            match key {
                "backscatter_iters" => p.backscatter_iters = value(key, val, line)?,
                "attenuation_iters" => p.attenuation_iters = value(key, val, line)?,
                "stream_iters" => p.stream_iters = value(key, val, line)?,
                "k" => p.backscatter.k = value(key, val, line)?,
                "bound_mode" => p.backscatter.bound_mode = value::<BoundMode>(key, val, line)?,
                "saturation_weight" => p.attenuation.saturation = value(key, val, line)?,
                "intensity_weight" => p.attenuation.intensity = value(key, val, line)?,
                "variation_weight" => p.attenuation.variation = value(key, val, line)?,
                "learning_rate" => p.adam.learning_rate = value(key, val, line)?,
                "beta1" => p.adam.beta1 = value(key, val, line)?,
                "beta2" => p.adam.beta2 = value(key, val, line)?,
                "epsilon" => p.adam.epsilon = value(key, val, line)?,
                "clamp_output" => p.clamp_output = value(key, val, line)?,
                "threads" => p.threads = value(key, val, line)?,
                "input_transfer" => cfg.input.transfer = value::<Transfer>(key, val, line)?,
                "output_format" => cfg.output.format = value::<PngDepth>(key, val, line)?,
                "output_transfer" => cfg.output.transfer = value::<Transfer>(key, val, line)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.pipeline.validate().map_err(|e| format!("config: {e}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
