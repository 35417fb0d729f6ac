//! Training loops, cross-validation, metrics and report files.

mod cv;
mod emotion;
mod metrics;
mod pretext;
mod report;

pub use cv::{run_cv_experiment, run_supervised_cv, LabeledSegment, Method};
pub use emotion::{
    extract_features, predict_features, predict_segments, train_emotion, train_emotion_on_features, CLASSES,
    train_supervised, EmotionTrace,
};
pub use metrics::{binarize_labels, evaluate, kfold_split, label_fraction_subset, Binarized, Fold, Metrics};
pub use pretext::{pretext_accuracy, train_pretext, train_pretext_observed, PretextTrace};
pub use report::{trace_csv, EvalReport, FoldMetrics, TargetSummary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::HeadUnits;
use crate::nn::loss::validate_alphas;
use crate::transforms::TransformId;

/// Stream ids for [`crate::rng::derive_seed`] paths.
pub(crate) mod streams {
    pub const PRETEXT_INIT: u64 = 1;
    pub const PRETEXT_SHUFFLE: u64 = 2;
    pub const PRETEXT_DROPOUT: u64 = 3;
    pub const EMOTION_INIT: u64 = 4;
    pub const EMOTION_SHUFFLE: u64 = 5;
    pub const EMOTION_DROPOUT: u64 = 6;
    pub const FOLDS: u64 = 7;
    pub const SUBSET: u64 = 8;
    pub const RUN: u64 = 9;
}

/// Whether cross-validation folds partition windows or subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CvUnit {
    #[default]
    Segment,
    Subject,
}

/// Where the binarisation threshold (the mean score) is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BinarizeScope {
    /// Over the whole corpus, once per target.
    #[default]
    Global,
    /// Over each fold's training windows.
    PerFold,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub pretext_epochs: usize,
    pub emotion_epochs: usize,
    /// Per-task loss coefficients, indexed by transformation id.
    pub alphas: Vec<f64>,
    /// Dropout in the pretext heads.
    pub dropout: f64,
    /// Dropout in the emotion head.
    pub emotion_dropout: f64,
    pub l2_beta: f64,
    /// Also regularise convolution kernels (dense weights always are).
    pub l2_include_conv: bool,
    pub kfolds: usize,
    pub seed: u64,
    pub label_fraction: f64,
    pub head_units: HeadUnits,
    pub cv_unit: CvUnit,
    pub binarize_scope: BinarizeScope,
    /// Downstream targets to evaluate; targets absent from the data are skipped.
    pub targets: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 128,
            pretext_epochs: 30,
            emotion_epochs: 100,
            alphas: vec![1.0 / TransformId::COUNT as f64; TransformId::COUNT],
            dropout: 0.6,
            emotion_dropout: 0.6,
            l2_beta: 0.0001,
            l2_include_conv: false,
            kfolds: 10,
            seed: 0,
            label_fraction: 1.0,
            head_units: HeadUnits::One,
            cv_unit: CvUnit::Segment,
            binarize_scope: BinarizeScope::Global,
            targets: crate::signal::io::TARGETS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be > 0", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0".into());
        }
        if self.alphas.len() != TransformId::COUNT {
            return bad(format!("alphas needs {} entries, got {}", TransformId::COUNT, self.alphas.len()));
        }
        validate_alphas(&self.alphas).map_err(|e| Error::Config(e.to_string()))?;
        for (name, r) in [("dropout", self.dropout), ("emotion_dropout", self.emotion_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} {r} must be in [0, 1)"));
            }
        }
        if !(self.l2_beta >= 0.0) {
            return bad(format!("l2_beta {} must be >= 0", self.l2_beta));
        }
        if self.kfolds < 2 {
            return bad(format!("kfolds {} must be >= 2", self.kfolds));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction {} must be in (0, 1]", self.label_fraction));
        }
        Ok(())
    }
}
