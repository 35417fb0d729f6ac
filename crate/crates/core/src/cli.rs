//! Subcommands of the `ecgssl` binary.
//!
//! Every command resolves a [`RunConfig`] (defaults, then `--config`, then
//! flags), creates its run directory and writes the resolved config there
//! before producing any other artifact.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;

use crate::config::{RunConfig, ECHO_NAME};
use crate::error::{Error, Result};
use crate::models::{load_model, save_model, ModelFile, PretextNetwork, TrunkSpec};
use crate::nn::gradcheck::{self, Fragment};
use crate::rng;
use crate::signal::{self, io, EcgSegment, RawRecording};
use crate::training::{self, LabeledSegment, PretextTrace};
use crate::transforms::{self, TransformId};

pub const PRETEXT_MODEL: &str = "pretext_model.bin";
pub const PRETEXT_TRACE: &str = "pretext_trace.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const BASELINE_CSV: &str = "baseline_report.csv";
pub const BASELINE_JSON: &str = "baseline_report.json";
pub const TRANSFORMED_CSV: &str = "transformed.csv";
pub const GRADCHECK_TXT: &str = "gradcheck.txt";

/// Exit status for a failed check (as opposed to an error).
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ecgssl", version, about = "Self-supervised ECG representation learning")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run directory (default: runs/run-<UTC timestamp>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-heart-rate-population dataset.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        /// Low-population heart-rate range, e.g. `55,65`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        hr_low: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 2)]
        hr_high: Option<Vec<f64>>,
        #[arg(long)]
        fs: Option<f64>,
        /// Recording length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write every transformation of the first windows as CSV.
    Transform {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of windows to transform.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train the multi-task transformation-recognition network.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Cross-validate the emotion classifier on a transferred, frozen trunk.
    TrainEval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretext model file; pre-trains on `--data` when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        label_fraction: Option<f64>,
        /// Also train the same architecture end to end without transfer.
        #[arg(long)]
        supervised_baseline: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        kfolds: Option<usize>,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, &[]),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            code
        }
    }
}

/// Run a parsed command. `extra_checks` are appended to the gradcheck suite.
pub fn run(cli: Cli, extra_checks: &[&dyn Fragment]) -> i32 {
    match dispatch(cli, extra_checks) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: Cli, extra_checks: &[&dyn Fragment]) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    match cli.command {
        Command::Synth {
            count,
            hr_low,
            hr_high,
            fs,
            duration,
        } => {
            set(&mut cfg.synth_count, count);
            set(&mut cfg.synth_hr_low, hr_low.map(|v| [v[0], v[1]]));
            set(&mut cfg.synth_hr_high, hr_high.map(|v| [v[0], v[1]]));
            set(&mut cfg.synth_fs, fs);
            set(&mut cfg.synth_duration_s, duration);
            let dir = prepare(&cfg)?;
            cmd_synth(&cfg, &dir)?;
        }
        Command::Transform { data, limit } => {
            cfg.data = data.or(cfg.data);
            set(&mut cfg.transform_limit, limit);
            let dir = prepare(&cfg)?;
            cmd_transform(&cfg, &dir)?;
        }
        Command::Pretrain { data, epochs } => {
            cfg.data = data.or(cfg.data);
            set(&mut cfg.pretext_epochs, epochs);
            let dir = prepare(&cfg)?;
            cmd_pretrain(&cfg, &dir)?;
        }
        Command::TrainEval {
            data,
            model,
            label_fraction,
            supervised_baseline,
            epochs,
            kfolds,
        } => {
            cfg.data = data.or(cfg.data);
            cfg.model = model.or(cfg.model);
            set(&mut cfg.label_fraction, label_fraction);
            set(&mut cfg.emotion_epochs, epochs);
            set(&mut cfg.kfolds, kfolds);
            cfg.supervised_baseline |= supervised_baseline;
            let dir = prepare(&cfg)?;
            cmd_train_eval(&cfg, &dir)?;
        }
        Command::Gradcheck => {
            let report = gradcheck::run_suite(cfg.seed, extra_checks)?;
            let text = report.to_text();
            print!("{text}");
            if cfg.out.is_some() {
                let dir = prepare(&cfg)?;
                write(&dir.join(GRADCHECK_TXT), &text)?;
            }
            return Ok(if report.passed() { 0 } else { EXIT_CHECK_FAILED });
        }
    }
    Ok(0)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Validate, create the run directory, and echo the resolved config.
fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("run-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ")))
    });
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join(ECHO_NAME), &cfg.to_toml()?)?;
    log::info!("run directory {}", dir.display());
    Ok(dir)
}

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| Error::Config("no data path: pass --data or set `data` in the config".into()))
}

/// Synthetic recordings from two heart-rate populations. Odd-indexed
/// recordings come from the high-rate population and carry high scores
/// (6–8) on every target; even-indexed ones carry low scores (2–4). Each
/// recording also gets a slow baseline drift for the high-pass filter to
/// remove.
pub fn synth_dataset(cfg: &RunConfig) -> Result<Vec<RawRecording>> {
    (0..cfg.synth_count)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, &[0x5A, i as u64]);
            let high = i % 2 == 1;
            let [lo, hi] = if high { cfg.synth_hr_high } else { cfg.synth_hr_low };
            let hr = if lo < hi { r.random_range(lo..hi) } else { lo };
            let gain = r.random_range(0.95..1.05);
            let drift_amp = r.random_range(0.05..0.2);
            let drift_hz = r.random_range(0.05..0.3);
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let ecg = signal::synth_ecg(hr, cfg.synth_fs, cfg.synth_duration_s, rng::derive_seed(cfg.seed, &[0x5B, i as u64]))?;
            let samples = ecg
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let t = k as f64 / cfg.synth_fs;
                    (gain * v + drift_amp * (std::f64::consts::TAU * drift_hz * t + phase).sin()) as f32
                })
                .collect();
            let (slo, shi) = if high { (6.0, 8.0) } else { (2.0, 4.0) };
            let scores: BTreeMap<String, f64> = io::TARGETS
                .iter()
                .map(|t| (t.to_string(), (r.random_range(slo..shi) * 100.0_f64).round() / 100.0))
                .collect();
            Ok(RawRecording {
                samples,
                sample_rate_hz: cfg.synth_fs,
                subject_id: format!("synth{i:03}"),
                condition: if high { "high-hr" } else { "low-hr" }.to_string(),
                scores,
            })
        })
        .collect()
}

pub fn cmd_synth(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let recs = synth_dataset(cfg)?;
    let path = io::write_manifest(&recs, dir)?;
    println!("wrote {} recordings to {}", recs.len(), path.display());
    Ok(path)
}

/// Load and preprocess every recording into scored windows.
pub fn load_segments(path: &Path) -> Result<Vec<LabeledSegment>> {
    let recs = io::load_recordings(path)?;
    let mut out = Vec::new();
    for rec in &recs {
        let segs = signal::preprocess(rec)?;
        if segs.is_empty() {
            log::warn!("recording {} is shorter than one window; skipped", rec.subject_id);
        }
        out.extend(segs.into_iter().map(|segment| LabeledSegment {
            segment,
            scores: rec.scores.clone(),
        }));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no complete windows in {}", path.display())));
    }
    Ok(out)
}

pub fn cmd_transform(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let data = load_segments(require_data(cfg)?)?;
    let segs: Vec<EcgSegment> = data.into_iter().take(cfg.transform_limit.max(1)).map(|d| d.segment).collect();
    let samples = transforms::build_pretext_dataset(&segs, &cfg.transform_params())?;
    let mut s = String::from("segment,task_id,task,sample,value\n");
    for (n, p) in samples.iter().enumerate() {
        let seg = n / TransformId::COUNT;
        for (t, v) in p.segment.samples.iter().enumerate() {
            writeln!(s, "{seg},{},{},{t},{v}", p.task.code(), p.task.name()).expect("write to String");
        }
    }
    let path = dir.join(TRANSFORMED_CSV);
    write(&path, &s)?;
    println!("wrote {} transformed windows to {}", samples.len(), path.display());
    Ok(path)
}

fn pretrain(cfg: &RunConfig, data: &[LabeledSegment], dir: &Path) -> Result<(PretextNetwork<f32>, PretextTrace)> {
    let segs: Vec<EcgSegment> = data.iter().map(|d| d.segment.clone()).collect();
    let samples = transforms::build_pretext_dataset(&segs, &cfg.transform_params())?;
    let (net, trace) = training::train_pretext(&samples, &cfg.train_config(), None)?;
    save_model(&ModelFile::Pretext(net.clone()), &dir.join(PRETEXT_MODEL))?;
    write(&dir.join(PRETEXT_TRACE), &training::trace_csv(&trace))?;
    Ok((net, trace))
}

pub fn cmd_pretrain(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let data = load_segments(require_data(cfg)?)?;
    let (_, trace) = pretrain(cfg, &data, dir)?;
    println!(
        "pretrained on {} windows for {} epochs; final loss {:.5}; model in {}",
        data.len(),
        trace.total.len(),
        trace.total.last().copied().unwrap_or(f64::NAN),
        dir.join(PRETEXT_MODEL).display()
    );
    Ok(dir.join(PRETEXT_MODEL))
}

pub fn cmd_train_eval(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_segments(require_data(cfg)?)?;
    let trunk = match &cfg.model {
        Some(p) => match load_model(p)? {
            ModelFile::Pretext(n) => n.trunk,
            ModelFile::Emotion(_) => {
                return Err(Error::Transfer(format!("{} is an emotion model, not a pretext model", p.display())));
            }
        },
        None => pretrain(cfg, &data, dir)?.0.trunk,
    };
    let tc = cfg.train_config();
    let report = training::run_cv_experiment(&data, &trunk, &tc)?;
    write(&dir.join(REPORT_CSV), &report.to_csv())?;
    write(&dir.join(REPORT_JSON), &report.summary_json(cfg)?)?;
    print_summary("self-supervised", &report);
    if cfg.supervised_baseline {
        let base = training::run_supervised_cv(&data, &TrunkSpec::default(), &tc)?;
        write(&dir.join(BASELINE_CSV), &base.to_csv())?;
        write(&dir.join(BASELINE_JSON), &base.summary_json(cfg)?)?;
        print_summary("supervised baseline", &base);
    }
    Ok(())
}

fn print_summary(label: &str, r: &training::EvalReport) {
    for s in &r.summary {
        println!(
            "{label} {}: accuracy {:.4} ± {:.4}, f1 {:.4}",
            s.target, s.mean_accuracy, s.std_accuracy, s.mean_f1
        );
    }
}
