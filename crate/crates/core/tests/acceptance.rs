//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stdout
//! (bypassing the harness capture) before asserting.
//!
//! Criteria 5 to 7 share one pre-trained network built from the default
//! synthetic corpus: 20 recordings of 100 s, ten windows each.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::ops::ControlFlow;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ecgssl::cli::{self, synth_dataset};
use ecgssl::config::RunConfig;
use ecgssl::models::{transfer_weights, HeadUnits, Mode, PretextNetwork, Trunk, TrunkSpec, PRETEXT_HIDDEN};
use ecgssl::nn::gradcheck::{self, TOLERANCE};
use ecgssl::nn::ops::{conv1d, dense, maxpool1d, pooled_len, same_pad_left};
use ecgssl::nn::Tensor;
use ecgssl::rng;
use ecgssl::signal::{io::write_manifest, synth_ecg, EcgSegment, SegmentSource, WINDOW_LEN};
use ecgssl::training::{
    pretext_accuracy, run_cv_experiment, run_supervised_cv, train_emotion, train_pretext_observed, LabeledSegment, PretextTrace,
    TrainConfig,
};
use ecgssl::transforms::{self, apply, build_pretext_dataset, PretextSample, TransformId, TransformParams};
use rand::Rng;

fn report(id: u32, name: &str, ok: bool, detail: &str, elapsed: Duration) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "[{tag}] criterion {id} {name}: {detail} ({:.1}s)", elapsed.as_secs_f64()).unwrap();
}

fn check(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> (bool, String)) {
    let t = Instant::now();
    let (ok, detail) = f();
    let el = t.elapsed();
    let ok = ok && el < budget;
    report(id, name, ok, &detail, el);
    assert!(ok, "criterion {id} {name}: {detail}; {el:?} against budget {budget:?}");
}

#[test]
fn c1_gradient_correctness() {
    check(1, "gradient correctness", Duration::from_secs(60), || {
        let r = gradcheck::run_suite(0, &[]).unwrap();
        let worst = r.results.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        let names: Vec<&str> = r.results.iter().map(|c| c.name.as_str()).collect();
        let covered = ["conv1d", "maxpool1d", "global_maxpool", "dense", "relu", "sigmoid", "dropout", "bce", "cross_entropy", "l2"]
            .iter()
            .all(|k| names.iter().any(|n| n.contains(k)));
        (
            r.passed() && covered && worst < TOLERANCE,
            format!("{} checks, worst relative error {worst:.2e}, all layers covered: {covered}", r.results.len()),
        )
    });
}

fn naive_conv(x: &[f64], l: usize, cin: usize, w: &[f64], k: usize, cout: usize, b: &[f64]) -> Vec<f64> {
    let pl = (k - 1) / 2;
    let mut y = vec![0.0; l * cout];
    for t in 0..l {
        for o in 0..cout {
            let mut s = b[o];
            for kk in 0..k {
                let src = t as isize + kk as isize - pl as isize;
                if src < 0 || src >= l as isize {
                    continue;
                }
                for c in 0..cin {
                    s += x[src as usize * cin + c] * w[(kk * cin + c) * cout + o];
                }
            }
            y[t * cout + o] = s;
        }
    }
    y
}

fn naive_pool(x: &[f64], l: usize, c: usize, pool: usize, stride: usize) -> Vec<f64> {
    let mut y = Vec::new();
    let mut start = 0;
    while start + pool <= l {
        for ch in 0..c {
            y.push((start..start + pool).map(|t| x[t * c + ch]).fold(f64::NEG_INFINITY, f64::max));
        }
        start += stride;
    }
    y
}

fn naive_dense(x: &[f64], rows: usize, din: usize, w: &[f64], dout: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            y[r * dout + o] = b[o] + (0..din).map(|i| x[r * din + i] * w[i * dout + o]).sum::<f64>();
        }
    }
    y
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn c2_oracle_equivalence() {
    check(2, "oracle equivalence", Duration::from_secs(30), || {
        let mut r = rng::stream(2, &[]);
        let v = |n: usize, r: &mut rng::StreamRng| -> Vec<f64> { (0..n).map(|_| r.random_range(-2.0..2.0)).collect() };
        let (mut conv, mut pool, mut fc) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..200 {
            let (l, cin, cout, k) = (r.random_range(1..40), r.random_range(1..5), r.random_range(1..6), r.random_range(1..9));
            let (x, w, b) = (v(l * cin, &mut r), v(k * cin * cout, &mut r), v(cout, &mut r));
            let y = conv1d(
                &Tensor::from_vec(&[l, cin], x.clone()).unwrap(),
                &Tensor::from_vec(&[k, cin, cout], w.clone()).unwrap(),
                &Tensor::from_vec(&[cout], b.clone()).unwrap(),
            )
            .unwrap();
            assert_eq!(same_pad_left(k), (k - 1) / 2);
            conv = conv.max(max_diff(y.data(), &naive_conv(&x, l, cin, &w, k, cout, &b)));

            let (c, pool_w, stride) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..4));
            let l = r.random_range(pool_w..pool_w + 30);
            let x = v(l * c, &mut r);
            let p = maxpool1d(&Tensor::from_vec(&[l, c], x.clone()).unwrap(), pool_w, stride).unwrap();
            assert_eq!(p.output.shape(), [pooled_len(l, pool_w, stride), c]);
            pool = pool.max(max_diff(p.output.data(), &naive_pool(&x, l, c, pool_w, stride)));

            let (rows, din, dout) = (r.random_range(1..5), r.random_range(1..20), r.random_range(1..20));
            let (x, w, b) = (v(rows * din, &mut r), v(din * dout, &mut r), v(dout, &mut r));
            let y = dense(
                &Tensor::from_vec(&[rows, din], x.clone()).unwrap(),
                &Tensor::from_vec(&[din, dout], w.clone()).unwrap(),
                &Tensor::from_vec(&[dout], b.clone()).unwrap(),
            )
            .unwrap();
            fc = fc.max(max_diff(y.data(), &naive_dense(&x, rows, din, &w, dout, &b)));
        }
        let worst = conv.max(pool).max(fc);
        (worst < 1e-6, format!("200 instances each; max |diff| conv {conv:.1e}, maxpool {pool:.1e}, dense {fc:.1e}"))
    });
}

#[test]
fn c3_architecture_fidelity() {
    check(3, "architecture fidelity", Duration::from_secs(60), || {
        let net = PretextNetwork::<f32>::build(3).unwrap();
        let trace = net.trunk.shape_trace().unwrap();
        let expected: Vec<Vec<usize>> =
            vec![vec![2560, 1], vec![2560, 32], vec![1277, 32], vec![1277, 64], vec![635, 64], vec![635, 128], vec![1, 128]];
        let heads_ok = net.heads.len() == 7 && net.heads.iter().all(|h| h.dims == [128, 128, 128, 1]);
        let batch = Tensor::<f32>::zeros(&[2, 2560, 1]);
        let out = net.forward(&batch, 0.0, Mode::Inference).unwrap();
        let emo = ecgssl::models::EmotionNetwork::new(transfer_weights(&net.trunk, &TrunkSpec::default()).unwrap(), 2, 0).unwrap();
        let emo_ok = emo.head.dims == [128, 64, 64, 2];
        let ok = trace == expected && heads_ok && out.shape() == [2, 7] && emo_ok;
        (ok, format!("trace {trace:?}; heads 7×[128,128,128,1]: {heads_ok}; emotion [128,64,64,2]: {emo_ok}"))
    });
}

fn random_segment(r: &mut rng::StreamRng, i: usize) -> EcgSegment {
    let hr = r.random_range(45.0..140.0);
    let gain: f64 = r.random_range(0.2..3.0);
    let offset: f64 = r.random_range(-0.5..0.5);
    let x = synth_ecg(hr, 256.0, 10.0, i as u64).unwrap();
    let samples = x.iter().map(|v| (gain * v + offset) as f32).collect();
    EcgSegment::new(samples, SegmentSource { subject_id: format!("r{i}"), index: 0 }).unwrap()
}

fn sorted(x: &[f32]) -> Vec<f32> {
    let mut v = x.to_vec();
    v.sort_by(f32::total_cmp);
    v
}

#[test]
fn c4_transformation_algebra() {
    check(4, "transformation algebra", Duration::from_secs(30), || {
        let mut r = rng::stream(4, &[]);
        let p = TransformParams::default();
        let mut failures = Vec::new();
        for i in 0..1000 {
            let seg = random_segment(&mut r, i);
            let seed: u64 = r.random();
            if transforms::negate(&transforms::negate(&seg)) != seg {
                failures.push(format!("{i}: negate is not an involution"));
            }
            if transforms::hflip(&transforms::hflip(&seg)) != seg {
                failures.push(format!("{i}: hflip is not an involution"));
            }
            let perm = transforms::permute(&seg, p.permute_pieces, seed).unwrap();
            if sorted(&perm.samples) != sorted(&seg.samples) {
                failures.push(format!("{i}: permute changed the sample multiset"));
            }
            for id in TransformId::ALL {
                let a = apply(id, &seg, &p, seed).unwrap();
                if a.samples.len() != WINDOW_LEN {
                    failures.push(format!("{i}: {} changed the length", id.name()));
                }
                if a != apply(id, &seg, &p, seed).unwrap() {
                    failures.push(format!("{i}: {} is not deterministic", id.name()));
                }
            }
        }
        (failures.is_empty(), format!("1000 segments; {} violations {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()))
    });
}

/// Pre-training setup shared by criteria 5 to 7. Training stops at the
/// first epoch whose held-out accuracy reaches the target, at the epoch cap,
/// or when the time budget runs out.
const MAX_PRETEXT_EPOCHS: usize = 30;
const PRETEXT_BATCH: usize = 32;
const HOLDOUT_EVERY: usize = 5;
const TARGET_ACCURACY: f64 = 0.9;
const PRETEXT_BUDGET: Duration = Duration::from_secs(15 * 60);

struct Pretrained {
    data: Vec<LabeledSegment>,
    net: PretextNetwork<f32>,
    trace: PretextTrace,
    holdout: Vec<f64>,
    elapsed: Duration,
}

fn corpus() -> Vec<LabeledSegment> {
    let cfg = RunConfig { seed: 1, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    write_manifest(&synth_dataset(&cfg).unwrap(), dir.path()).unwrap();
    cli::load_segments(dir.path()).unwrap()
}

fn pretrained() -> &'static Pretrained {
    static CELL: OnceLock<Pretrained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let data = corpus();
        assert_eq!(data.len(), 200);
        let segs: Vec<EcgSegment> = data.iter().map(|d| d.segment.clone()).collect();
        let all = build_pretext_dataset(&segs, &TransformParams { rng_seed: 1, ..Default::default() }).unwrap();
        // Hold out whole windows (all seven of their transformations).
        let (test, train): (Vec<(usize, PretextSample)>, Vec<_>) =
            all.into_iter().enumerate().partition(|(i, _)| (i / TransformId::COUNT) % HOLDOUT_EVERY == 0);
        let train: Vec<PretextSample> = train.into_iter().map(|(_, s)| s).collect();
        let test: Vec<PretextSample> = test.into_iter().map(|(_, s)| s).collect();
        let cfg = TrainConfig {
            pretext_epochs: MAX_PRETEXT_EPOCHS,
            batch_size: PRETEXT_BATCH,
            seed: 1,
            ..Default::default()
        };
        let init = PretextNetwork::with_spec(TrunkSpec::default(), PRETEXT_HIDDEN, HeadUnits::One, 11).unwrap();
        let mut holdout = Vec::new();
        let (net, trace) = train_pretext_observed(&train, &cfg, Some(init), |_, net, _| {
            let acc = pretext_accuracy(net, &test)?;
            holdout.push(acc);
            // Stopping on wall time would make the trunk that criteria 6 and 7
            // see depend on machine speed; the budget is checked afterwards.
            Ok(if acc >= TARGET_ACCURACY { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        })
        .unwrap();
        Pretrained {
            data,
            net,
            trace,
            holdout,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn c5_pretext_separability() {
    let p = pretrained();
    let last = *p.holdout.last().unwrap();
    let ok = last >= TARGET_ACCURACY && p.elapsed < PRETEXT_BUDGET;
    let curve: Vec<String> = p.holdout.iter().map(|a| format!("{a:.3}")).collect();
    let detail = format!(
        "held-out 7-way accuracy {last:.3} after {} epochs (cap {MAX_PRETEXT_EPOCHS}) on 160 windows, tested on 40; per-epoch [{}]",
        p.holdout.len(),
        curve.join(", ")
    );
    report(5, "pretext separability", ok, &detail, p.elapsed);
    assert!(ok, "{detail}; {:?}", p.elapsed);
}

#[test]
fn c6_loss_curve_shape() {
    let p = pretrained();
    check(6, "loss-curve shape", Duration::from_secs(15 * 60), || {
        let t = &p.trace.per_task;
        let mut rises = Vec::new();
        // The tolerance is 5% of the task's first-epoch loss. Relative to the
        // previous epoch it would flag jitter on losses that are already near 0.
        for j in 0..TransformId::COUNT {
            let tol = 0.05 * t[0][j];
            for e in 1..t.len() {
                if t[e][j] > t[e - 1][j] + tol {
                    rises.push(format!("task {j} epoch {e}: {:.4} -> {:.4}", t[e - 1][j], t[e][j]));
                }
            }
        }
        let last = t.last().unwrap();
        let (lo, hi) = last.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let distinct = hi > 1.5 * lo;
        let ok = rises.is_empty() && distinct;
        let detail = format!(
            "rises beyond 5% of the initial loss: {:?}; final per-task losses {:?}; max/min {:.2}",
            rises,
            last.map(|v| (v * 1e4).round() / 1e4),
            hi / lo
        );
        (ok, detail)
    });
}

fn param_bytes(t: &Trunk<f32>) -> Vec<u8> {
    t.params.params.iter().flat_map(|p| p.value.data().iter().flat_map(|v| v.to_le_bytes())).collect()
}

const CV_FOLDS: usize = 10;
const REDUCED_FRACTION: f64 = 0.01;

#[test]
fn c7_transfer_and_freezing() {
    let p = pretrained();
    check(7, "transfer and freezing", Duration::from_secs(20 * 60), || {
        let before = param_bytes(&p.net.trunk);
        let frozen = transfer_weights(&p.net.trunk, &TrunkSpec::default()).unwrap();
        let segs: Vec<EcgSegment> = p.data.iter().map(|d| d.segment.clone()).collect();
        let labels: Vec<u8> = p.data.iter().map(|d| u8::from(d.scores["arousal"] > 5.0)).collect();
        let cfg = TrainConfig {
            kfolds: CV_FOLDS,
            targets: vec!["arousal".into()],
            seed: 7,
            ..Default::default()
        };
        let (emo, _) = train_emotion(&frozen, &segs, &labels, &TrainConfig { emotion_epochs: 5, ..cfg.clone() }).unwrap();
        let unchanged = param_bytes(&emo.trunk) == before && param_bytes(&p.net.trunk) == before;

        let full = run_cv_experiment(&p.data, &p.net.trunk, &cfg).unwrap().summary[0].mean_accuracy;
        let reduced_cfg = TrainConfig { label_fraction: REDUCED_FRACTION, ..cfg.clone() };
        let ssl = run_cv_experiment(&p.data, &p.net.trunk, &reduced_cfg).unwrap().summary[0].mean_accuracy;
        let sup = run_supervised_cv(&p.data, &TrunkSpec::default(), &reduced_cfg).unwrap().summary[0].mean_accuracy;
        let unchanged_after = param_bytes(&p.net.trunk) == before;

        // Both reduced runs are compared against the same full-label
        // reference, so "loses less" is ssl > sup.
        let ok = unchanged && unchanged_after && full >= 0.9 && full - ssl < full - sup;
        let detail = format!(
            "trunk unchanged: {}; {CV_FOLDS}-fold arousal accuracy {full:.3} full labels; reduced labels ({REDUCED_FRACTION}): transferred {ssl:.3}, supervised {sup:.3}",
            unchanged && unchanged_after
        );
        (ok, detail)
    });
}

fn train_eval_run(config: &Path, data: &Path, out: &Path) -> Vec<(String, Vec<u8>)> {
    let args = [
        "ecgssl", "--config", config.to_str().unwrap(), "--seed", "8", "train-eval", "--data", data.to_str().unwrap(), "--kfolds", "2", "--epochs", "3",
        "--supervised-baseline", "--out", out.to_str().unwrap(),
    ];
    assert_eq!(cli::run_from(args), 0);
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn c8_determinism() {
    check(8, "determinism", Duration::from_secs(15 * 60), || {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let synth = ["ecgssl", "--seed", "8", "synth", "--count", "4", "--duration", "30", "--out", data.to_str().unwrap()];
        assert_eq!(cli::run_from(synth), 0);
        let config = tmp.path().join("c.toml");
        fs::write(&config, "pretext_epochs = 2\n").unwrap();
        // Same --out both times: the run directory is part of the echoed
        // configuration, so the first run is moved aside before the second.
        let out = tmp.path().join("run");
        let a = train_eval_run(&config, &data, &out);
        fs::rename(&out, tmp.path().join("first")).unwrap();
        let b = train_eval_run(&config, &data, &out);
        let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
        let expected = [cli::PRETEXT_MODEL, cli::REPORT_CSV, cli::REPORT_JSON, cli::BASELINE_CSV, cli::BASELINE_JSON];
        let complete = expected.iter().all(|n| names.contains(n));
        let ok = complete && a == b;
        (ok, format!("files {names:?}; byte-identical: {}", a == b))
    });
}

/// Runs only when `ECGSSL_GATED_DATA` points at user-supplied recordings
/// (optionally with `ECGSSL_GATED_CONFIG`). Matching published accuracies is
/// not a gate, so this checks that the protocol runs and emits every report.
#[test]
fn c9_gated_data_protocol() {
    let Some(data) = std::env::var_os("ECGSSL_GATED_DATA") else {
        writeln!(std::io::stdout().lock(), "[SKIP] criterion 9 gated-data protocol: ECGSSL_GATED_DATA not set").unwrap();
        return;
    };
    check(9, "gated-data protocol", Duration::MAX, || {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        let mut args = vec!["ecgssl".to_string()];
        if let Some(c) = std::env::var_os("ECGSSL_GATED_CONFIG") {
            args.extend(["--config".into(), c.to_string_lossy().into_owned()]);
        }
        args.extend(["train-eval", "--data"].map(String::from));
        args.push(data.to_string_lossy().into_owned());
        args.extend(["--out".into(), out.to_string_lossy().into_owned()]);
        let code = cli::run_from(args);
        let json = fs::read_to_string(out.join(cli::REPORT_JSON)).unwrap_or_default();
        (code == 0 && out.join(cli::REPORT_CSV).exists() && !json.is_empty(), format!("exit {code}; report.json {} bytes", json.len()))
    });
}
