use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::denoiser::DenoiserConfig;
use super::references::ReferencePolicy;
use super::schedule::{GuidanceSchedule, ScheduleParams};
use super::synthetic::SyntheticSpec;

/// Input files of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub content: PathBuf,
    pub stylized: PathBuf,
    pub flows: PathBuf,
}

/// Everything a run needs. Every key is required in the JSON form except
/// `synthetic`; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: [usize; 2],
    pub temporal_factor: usize,
    pub offset: usize,
    pub reference_policy: ReferencePolicy,
    pub steps: usize,
    pub fixed_point_iterations: usize,
    pub ihc_fraction: f64,
    pub ihc_lambda: f32,
    pub lowpass_cutoff: f64,
    pub beta: f32,
    pub gamma: f32,
    pub gamma_fraction: f64,
    pub dilation: usize,
    pub model: DenoiserConfig,
    pub codec_seed: u64,
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    /// When set, inputs are generated and written to `inputs` before the run.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl RunConfig {
    /// Small default run over `dir`: 9 frames of 16x16 pixels with 4
    /// channels, 2x2 patches, 8 steps and 4 fixed-point sweeps.
    pub fn toy(dir: &Path) -> Self {
        let s = ScheduleParams::default();
        Self {
            frames: 9,
            height: 16,
            width: 16,
            channels: 4,
            patch: [2, 2],
            temporal_factor: 4,
            offset: 3,
            reference_policy: ReferencePolicy::FirstMidLast,
            steps: 8,
            fixed_point_iterations: 4,
            ihc_fraction: s.ihc_fraction,
            ihc_lambda: s.ihc_lambda,
            lowpass_cutoff: s.lowpass_cutoff,
            beta: s.beta,
            gamma: s.gamma,
            gamma_fraction: s.gamma_fraction,
            dilation: crate::flow::DEFAULT_DILATION,
            model: DenoiserConfig::toy(4, [2, 2], 7),
            codec_seed: 11,
            inputs: InputPaths {
                content: dir.join(super::synthetic::CONTENT_FILE),
                stylized: dir.join(super::synthetic::STYLIZED_FILE),
                flows: dir.join(super::synthetic::FLOWS_FILE),
            },
            output_dir: dir.join("out"),
            synthetic: None,
        }
    }

    /// Parses JSON text; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.inputs.content);
        resolve(&mut cfg.inputs.stylized);
        resolve(&mut cfg.inputs.flows);
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            ihc_fraction: self.ihc_fraction,
            ihc_lambda: self.ihc_lambda,
            lowpass_cutoff: self.lowpass_cutoff,
            beta: self.beta,
            gamma: self.gamma,
            gamma_fraction: self.gamma_fraction,
        }
    }

    pub fn schedule(&self) -> Result<GuidanceSchedule> {
        GuidanceSchedule::generate(self.steps, &self.schedule_params())
    }

    /// Checks internal consistency; file contents are checked at load time.
    pub fn validate(&self) -> Result<()> {
        let [py, px] = self.patch;
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("video dims must be >= 1".into()));
        }
        if py == 0 || px == 0 || !self.height.is_multiple_of(py) || !self.width.is_multiple_of(px) {
            return Err(Error::Config(format!(
                "{}x{} frames cannot be cut into {py}x{px} patches",
                self.height, self.width
            )));
        }
        if self.temporal_factor == 0 || !(self.frames - 1).is_multiple_of(self.temporal_factor) {
            return Err(Error::Config(format!(
                "{} frames do not form whole blocks of {} after the first",
                self.frames, self.temporal_factor
            )));
        }
        if self.offset == 0 || self.offset > self.temporal_factor {
            return Err(Error::Config(format!(
                "offset must lie in 1..={}, got {}",
                self.temporal_factor, self.offset
            )));
        }
        if self.fixed_point_iterations == 0 {
            return Err(Error::Config("fixed_point_iterations must be >= 1".into()));
        }
        if self.model.channels != self.channels || self.model.patch != self.patch {
            return Err(Error::Config("model channels and patch must match the video".into()));
        }
        if let Some(s) = &self.synthetic {
            if (s.frames, s.height, s.width, s.channels) != (self.frames, self.height, self.width, self.channels) {
                return Err(Error::Config("synthetic dims differ from the run dims".into()));
            }
        }
        self.schedule().map(|_| ())
    }
}
