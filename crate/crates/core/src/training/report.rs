use std::fmt::Write as _;

use serde::Serialize;

use super::cv::Method;
use super::pretext::PretextTrace;
use crate::error::{Error, Result};

/// Metrics of one fold for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub target: String,
    pub accuracy: f64,
    pub f1: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Mean and standard deviation over folds for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSummary {
    pub target: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: Method,
    pub kfolds: usize,
    pub label_fraction: f64,
    /// Ordered by fold, then by target.
    pub folds: Vec<FoldMetrics>,
    pub summary: Vec<TargetSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

impl EvalReport {
    pub fn new(method: Method, kfolds: usize, label_fraction: f64, folds: Vec<FoldMetrics>) -> Self {
        let mut targets: Vec<String> = Vec::new();
        for f in &folds {
            if !targets.contains(&f.target) {
                targets.push(f.target.clone());
            }
        }
        let summary = targets
            .into_iter()
            .map(|t| {
                let acc: Vec<f64> = folds.iter().filter(|f| f.target == t).map(|f| f.accuracy).collect();
                let f1: Vec<f64> = folds.iter().filter(|f| f.target == t).map(|f| f.f1).collect();
                let (mean_accuracy, std_accuracy) = mean_std(&acc);
                let (mean_f1, std_f1) = mean_std(&f1);
                TargetSummary {
                    target: t,
                    mean_accuracy,
                    std_accuracy,
                    mean_f1,
                    std_f1,
                }
            })
            .collect();
        EvalReport {
            method,
            kfolds,
            label_fraction,
            folds,
            summary,
        }
    }

    pub fn target(&self, name: &str) -> Option<&TargetSummary> {
        self.summary.iter().find(|s| s.target == name)
    }

    /// `fold,target,accuracy,f1` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,target,accuracy,f1\n");
        for f in &self.folds {
            writeln!(s, "{},{},{},{}", f.fold, f.target, f.accuracy, f.f1).expect("write to String");
        }
        s
    }

    /// JSON summary with the resolved configuration echoed under `config`.
    pub fn summary_json(&self, config: &impl Serialize) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a, C: Serialize> {
            report: &'a EvalReport,
            config: &'a C,
        }
        serde_json::to_string_pretty(&Out { report: self, config })
            .map_err(|e| Error::Data(format!("serialising report: {e}")))
    }
}

/// `epoch,task_id,mean_loss` rows, one per epoch and head.
pub fn trace_csv(trace: &PretextTrace) -> String {
    let mut s = String::from("epoch,task_id,mean_loss\n");
    for (e, row) in trace.per_task.iter().enumerate() {
        for (j, l) in row.iter().enumerate() {
            writeln!(s, "{e},{j},{l}").expect("write to String");
        }
    }
    s
}
