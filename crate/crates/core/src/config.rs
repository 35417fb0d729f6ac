//! Run configuration: a flat TOML file whose keys mirror the training and
//! transformation parameters. Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::HeadUnits;
use crate::training::{BinarizeScope, CvUnit, TrainConfig};
use crate::transforms::TransformParams;

pub const CONFIG_VERSION: u32 = 1;
/// Name of the resolved-config echo written into every run directory.
pub const ECHO_NAME: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,

    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub pretext_epochs: usize,
    pub emotion_epochs: usize,
    pub alphas: Vec<f64>,
    pub dropout: f64,
    pub emotion_dropout: f64,
    pub l2_beta: f64,
    pub l2_include_conv: bool,
    pub kfolds: usize,
    pub label_fraction: f64,
    pub head_units: HeadUnits,
    pub cv_unit: CvUnit,
    pub binarize_scope: BinarizeScope,
    pub targets: Vec<String>,

    pub noise_sigma_rel: f64,
    pub scale_factor: f64,
    pub permute_pieces: usize,
    pub warp_pieces: usize,
    pub warp_stretch: f64,
    /// Seed of the transformation streams; defaults to `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform_seed: Option<u64>,

    /// Recording directory, manifest or CSV file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Run directory; defaults to `runs/run-<UTC timestamp>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Pretext model for `train-eval`; pre-trains on `data` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,

    pub synth_count: usize,
    pub synth_hr_low: [f64; 2],
    pub synth_hr_high: [f64; 2],
    pub synth_fs: f64,
    pub synth_duration_s: f64,

    pub transform_limit: usize,
    pub supervised_baseline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = TransformParams::default();
        RunConfig {
            format_version: CONFIG_VERSION,
            seed: t.seed,
            lr: t.lr,
            batch_size: t.batch_size,
            pretext_epochs: t.pretext_epochs,
            emotion_epochs: t.emotion_epochs,
            alphas: t.alphas,
            dropout: t.dropout,
            emotion_dropout: t.emotion_dropout,
            l2_beta: t.l2_beta,
            l2_include_conv: t.l2_include_conv,
            kfolds: t.kfolds,
            label_fraction: t.label_fraction,
            head_units: t.head_units,
            cv_unit: t.cv_unit,
            binarize_scope: t.binarize_scope,
            targets: t.targets,
            noise_sigma_rel: p.noise_sigma_rel,
            scale_factor: p.scale_factor,
            permute_pieces: p.permute_pieces,
            warp_pieces: p.warp_pieces,
            warp_stretch: p.warp_stretch,
            transform_seed: None,
            data: None,
            out: None,
            model: None,
            synth_count: 20,
            synth_hr_low: [55.0, 65.0],
            synth_hr_high: [95.0, 105.0],
            synth_fs: 256.0,
            synth_duration_s: 100.0,
            transform_limit: 1,
            supervised_baseline: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        // Check the version first so a newer file fails with a clear message
        // rather than on an unknown key.
        let raw: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        if let Some(v) = raw.get("format_version") {
            let v = v
                .as_integer()
                .ok_or_else(|| Error::Config(format!("{}: format_version must be an integer", origin.display())))?;
            if v > CONFIG_VERSION as i64 {
                return Err(Error::Config(format!(
                    "{}: config format_version {v} is newer than supported version {CONFIG_VERSION}",
                    origin.display()
                )));
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serialising config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.transform_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for (name, [lo, hi]) in [("synth_hr_low", self.synth_hr_low), ("synth_hr_high", self.synth_hr_high)] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            pretext_epochs: self.pretext_epochs,
            emotion_epochs: self.emotion_epochs,
            alphas: self.alphas.clone(),
            dropout: self.dropout,
            emotion_dropout: self.emotion_dropout,
            l2_beta: self.l2_beta,
            l2_include_conv: self.l2_include_conv,
            kfolds: self.kfolds,
            seed: self.seed,
            label_fraction: self.label_fraction,
            head_units: self.head_units,
            cv_unit: self.cv_unit,
            binarize_scope: self.binarize_scope,
            targets: self.targets.clone(),
        }
    }

    pub fn transform_params(&self) -> TransformParams {
        TransformParams {
            noise_sigma_rel: self.noise_sigma_rel,
            scale_factor: self.scale_factor,
            permute_pieces: self.permute_pieces,
            warp_pieces: self.warp_pieces,
            warp_stretch: self.warp_stretch,
            rng_seed: self.transform_seed.unwrap_or(self.seed),
        }
    }
}
