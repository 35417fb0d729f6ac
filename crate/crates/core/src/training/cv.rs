use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::emotion::{extract_features, predict_features, predict_segments, train_emotion_on_features, train_supervised};
use super::metrics::{binarize_at, evaluate, kfold_split, label_fraction_subset, Fold};
use super::report::{EvalReport, FoldMetrics};
use super::{streams, BinarizeScope, CvUnit, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{transfer_weights, Trunk, TrunkSpec};
use crate::rng;
use crate::signal::EcgSegment;

/// A window with the questionnaire scores of its recording.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub segment: EcgSegment,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Frozen pre-trained trunk plus a trained dense head.
    SelfSupervised,
    /// Same architecture trained end to end from random initialisation.
    Supervised,
}

fn folds_for(data: &[LabeledSegment], cfg: &TrainConfig) -> Result<Vec<Fold>> {
    let seed = rng::derive_seed(cfg.seed, &[streams::FOLDS]);
    match cfg.cv_unit {
        CvUnit::Segment => kfold_split(data.len(), cfg.kfolds, seed),
        CvUnit::Subject => {
            let subjects: Vec<&str> = {
                let mut s: Vec<&str> = data.iter().map(|d| d.segment.source.subject_id.as_str()).collect();
                s.sort_unstable();
                s.dedup();
                s
            };
            let by_subject = kfold_split(subjects.len(), cfg.kfolds, seed)?;
            Ok(by_subject
                .iter()
                .map(|f| {
                    let test_subj: Vec<&str> = f.test.iter().map(|&i| subjects[i]).collect();
                    let (test, train): (Vec<usize>, Vec<usize>) =
                        (0..data.len()).partition(|&i| test_subj.contains(&data[i].segment.source.subject_id.as_str()));
                    Fold { train, test }
                })
                .collect())
        }
    }
}

/// Targets from the config that at least one window has a score for.
fn present_targets(data: &[LabeledSegment], cfg: &TrainConfig) -> Result<Vec<String>> {
    let t: Vec<String> = cfg
        .targets
        .iter()
        .filter(|t| {
            let any = data.iter().any(|d| d.scores.contains_key(*t));
            if !any {
                log::warn!("no scores for target {t}; skipping");
            }
            any
        })
        .cloned()
        .collect();
    if t.is_empty() {
        return Err(Error::Data(format!("none of the targets {:?} has scores", cfg.targets)));
    }
    Ok(t)
}

struct Job {
    fold: usize,
    target: usize,
    train: Vec<usize>,
    train_labels: Vec<u8>,
    test: Vec<usize>,
    test_labels: Vec<u8>,
    cfg: TrainConfig,
}

fn build_jobs(data: &[LabeledSegment], cfg: &TrainConfig) -> Result<(Vec<String>, Vec<Job>)> {
    cfg.validate()?;
    let targets = present_targets(data, cfg)?;
    let folds = folds_for(data, cfg)?;
    let global: Vec<Option<f64>> = targets
        .iter()
        .map(|t| {
            let s: Vec<f64> = data.iter().filter_map(|d| d.scores.get(t).copied()).collect();
            let thr = s.iter().sum::<f64>() / s.len() as f64;
            // Logs a warning when every score is equal.
            binarize_at(&s, thr);
            (cfg.binarize_scope == BinarizeScope::Global).then_some(thr)
        })
        .collect();
    let mut jobs = Vec::new();
    for (fi, fold) in folds.iter().enumerate() {
        if fold.test.iter().any(|t| fold.train.binary_search(t).is_ok()) {
            return Err(Error::Data(format!("fold {fi}: test window also in training set")));
        }
        for (ti, t) in targets.iter().enumerate() {
            let scored = |idx: &[usize]| -> Vec<usize> { idx.iter().copied().filter(|&i| data[i].scores.contains_key(t)).collect() };
            let train = scored(&fold.train);
            let test = scored(&fold.test);
            if train.is_empty() || test.is_empty() {
                return Err(Error::Data(format!("fold {fi}, target {t}: no scored windows to train or test on")));
            }
            let score = |i: usize| data[i].scores[t];
            let thr = global[ti].unwrap_or_else(|| train.iter().map(|&i| score(i)).sum::<f64>() / train.len() as f64);
            let label = |i: usize| u8::from(score(i) > thr);
            let mut train_labels: Vec<u8> = train.iter().map(|&i| label(i)).collect();
            let mut train = train;
            if cfg.label_fraction < 1.0 {
                let cells: Vec<(String, u8)> =
                    train.iter().zip(&train_labels).map(|(&i, &l)| (data[i].segment.source.subject_id.clone(), l)).collect();
                let keep = label_fraction_subset(
                    &cells,
                    cfg.label_fraction,
                    rng::derive_seed(cfg.seed, &[streams::SUBSET, fi as u64, ti as u64]),
                )?;
                train = keep.iter().map(|&k| train[k]).collect();
                train_labels = keep.iter().map(|&k| train_labels[k]).collect();
            }
            jobs.push(Job {
                fold: fi,
                target: ti,
                test_labels: test.iter().map(|&i| label(i)).collect(),
                train,
                train_labels,
                test,
                cfg: TrainConfig {
                    seed: rng::derive_seed(cfg.seed, &[streams::RUN, fi as u64, ti as u64]),
                    ..cfg.clone()
                },
            });
        }
    }
    Ok((targets, jobs))
}

fn run_jobs(
    targets: &[String],
    jobs: Vec<Job>,
    method: Method,
    cfg: &TrainConfig,
    fit_predict: impl Fn(&Job) -> Result<Vec<u8>> + Sync,
) -> Result<EvalReport> {
    let folds = jobs
        .par_iter()
        .map(|job| {
            let pred = fit_predict(job)?;
            let m = evaluate(&pred, &job.test_labels)?;
            log::info!(
                "fold {} {}: accuracy {:.4} f1 {:.4}",
                job.fold,
                targets[job.target],
                m.accuracy,
                m.f1
            );
            Ok(FoldMetrics {
                fold: job.fold,
                target: targets[job.target].clone(),
                accuracy: m.accuracy,
                f1: m.f1,
                n_train: job.train.len(),
                n_test: job.test.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(method, cfg.kfolds, cfg.label_fraction, folds))
}

/// k-fold evaluation of the self-supervised pipeline: `trunk` is transferred
/// (frozen), features are computed once, and a fresh head is trained per
/// fold and target. Test windows never influence training.
pub fn run_cv_experiment(data: &[LabeledSegment], trunk: &Trunk<f32>, cfg: &TrainConfig) -> Result<EvalReport> {
    let frozen = transfer_weights(trunk, &trunk.spec)?;
    let (targets, jobs) = build_jobs(data, cfg)?;
    let segs: Vec<EcgSegment> = data.iter().map(|d| d.segment.clone()).collect();
    let feats = extract_features(&frozen, &segs)?;
    run_jobs(&targets, jobs, Method::SelfSupervised, cfg, |job| {
        let train: Vec<_> = job.train.iter().map(|&i| feats[i].clone()).collect();
        let (head, _) = train_emotion_on_features(&train, &job.train_labels, &job.cfg)?;
        let test: Vec<_> = job.test.iter().map(|&i| feats[i].clone()).collect();
        predict_features(&head, &test)
    })
}

/// k-fold evaluation of the fully supervised baseline on the same folds.
pub fn run_supervised_cv(data: &[LabeledSegment], spec: &TrunkSpec, cfg: &TrainConfig) -> Result<EvalReport> {
    let (targets, jobs) = build_jobs(data, cfg)?;
    run_jobs(&targets, jobs, Method::Supervised, cfg, |job| {
        let train: Vec<EcgSegment> = job.train.iter().map(|&i| data[i].segment.clone()).collect();
        let (net, _) = train_supervised(spec, &train, &job.train_labels, &job.cfg)?;
        let test: Vec<EcgSegment> = job.test.iter().map(|&i| data[i].segment.clone()).collect();
        predict_segments(&net, &test)
    })
}
