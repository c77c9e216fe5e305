use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{GuidanceMode, GuidanceSpec, ScheduleConfig};
use crate::error::{Error, Result};
use crate::trainer::{TrainConfig, Variant};

/// File name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(rename = "S")]
    pub side: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { side: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub blocks: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub t_emb_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = DenoiserConfig::desk();
        Self {
            width: c.width,
            blocks: c.blocks,
            d: c.d,
            k: c.k,
            t_emb_dim: c.t_emb_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            t: s.t,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Variant,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub p_uncond: f64,
    pub fp64: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            variant: t.variant,
            iters: t.iters,
            batch: t.batch,
            lr: t.lr,
            p_uncond: t.p_uncond,
            fp64: t.fp64,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

/// A single strength or one per active modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub guidance: GuidanceMode,
    pub w: Weights,
    pub count: usize,
    pub seed: u64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            guidance: GuidanceMode::Scalar,
            w: Weights::One(2.0),
            count: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Everything a run needs. Missing sections and keys take the desk defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.variant_model_config()?;
        self.schedule_config().build()?;
        self.train_config().validate()?;
        self.guidance_spec().validate()?;
        if self.sample.count == 0 {
            return Err(Error::Config("sample.count must be at least 1".into()));
        }
        Ok(())
    }

    /// Model shape before the variant adjusts modalities, surrogates and K.
    pub fn base_model_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            side: self.data.side,
            width: self.model.width,
            blocks: self.model.blocks,
            d: self.model.d,
            k: self.model.k,
            t_emb_dim: self.model.t_emb_dim,
            timesteps: self.schedule.t,
            ..DenoiserConfig::desk()
        }
    }

    pub fn variant_model_config(&self) -> Result<DenoiserConfig> {
        let c = self.train.variant.model_config(&self.base_model_config());
        c.validate()?;
        Ok(c)
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            t: self.schedule.t,
            beta_start: self.schedule.beta_start,
            beta_end: self.schedule.beta_end,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            variant: t.variant,
            iters: t.iters,
            batch: t.batch,
            lr: t.lr,
            p_uncond: t.p_uncond,
            seed: self.data.seed,
            fp64: t.fp64,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn guidance_spec(&self) -> GuidanceSpec {
        let w = match &self.sample.w {
            Weights::One(w) => vec![*w],
            Weights::Many(ws) => ws.clone(),
        };
        match self.sample.guidance {
            GuidanceMode::None => GuidanceSpec::none(),
            GuidanceMode::Scalar => GuidanceSpec::scalar(w.first().copied().unwrap_or(f64::NAN)),
            GuidanceMode::PerModality => GuidanceSpec::per_modality(w),
            GuidanceMode::Parallel => GuidanceSpec::parallel(w),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.train.variant = variant;
        c
    }
}
