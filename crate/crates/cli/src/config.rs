//! Run configuration: one TOML document with a section per module.

use std::fs;
use std::path::{Path, PathBuf};

use diffvid_core::data::CorpusConfig;
use diffvid_core::denoiser::DenoiserConfig;
use diffvid_core::schedule::ScheduleConfig;
use diffvid_core::train::TrainConfig;
use diffvid_core::tta::TTAConfig;
use diffvid_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which corpus videos `restore --corpus` and `eval` look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoSelection {
    SeenTest,
    UnseenTest,
    AllTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub videos: VideoSelection,
    /// Cap on videos per degradation kind (0 = all).
    pub max_videos_per_kind: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { videos: VideoSelection::AllTest, max_videos_per_kind: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseStatsConfig {
    pub clips: usize,
    pub n_frames: usize,
    pub channels: usize,
    pub resolution: usize,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    pub plot: bool,
}

impl Default for NoiseStatsConfig {
    fn default() -> Self {
        NoiseStatsConfig {
            clips: 200,
            n_frames: 5,
            channels: 3,
            resolution: 64,
            phi: vec![0.0, 0.2, 0.4, 0.6],
            tau: vec![0.0, 0.3],
            plot: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: CorpusConfig,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub tta: TTAConfig,
    pub eval: EvalConfig,
    pub noise_stats: NoiseStatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: CorpusConfig::default(),
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            tta: TTAConfig::default(),
            eval: EvalConfig::default(),
            noise_stats: NoiseStatsConfig::default(),
        }
    }
}

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parameter(m) => Error::Parameter(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Defaults, overlaid by an optional file, with an optional seed override.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.schedule.build()?;
        self.train.validate()?;
        self.tta.validate(self.model.n_frames)?;
        if self.train.frames_per_clip != self.model.n_frames {
            return Err(Error::Parameter(format!(
                "train.frames_per_clip ({}) must equal model.n_frames ({})",
                self.train.frames_per_clip, self.model.n_frames
            )));
        }
        let f = self.model.downsample_factor();
        for (name, v) in [("train.crop_size", self.train.crop_size), ("tta.tubelet_size", self.tta.tubelet_size), ("data.resolution", self.data.resolution)] {
            if v % f != 0 {
                return Err(Error::Parameter(format!("{name} ({v}) must be a multiple of {f}")));
            }
        }
        if self.noise_stats.n_frames < 2 || self.noise_stats.clips == 0 {
            return Err(Error::Parameter("noise_stats needs clips >= 1 and n_frames >= 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Writes the resolved config into an artifact directory.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// The documented reference file, generated from the defaults.
pub fn reference_config() -> String {
    let body = RunConfig::default().to_toml();
    format!(
        "# diffvid run configuration. Every key is optional; values shown are the defaults.\n\
         # Unknown keys are rejected.\n\n{body}"
    )
}
