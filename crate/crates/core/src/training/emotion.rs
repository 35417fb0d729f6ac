use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::pretext::{apply_l2, window, GRAD_CHUNK};
use super::{streams, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{argmax, EmotionNetwork, Head, Mode, Trunk, TrunkSpec, EMOTION_HIDDEN};
use crate::nn::loss::sigmoid_cross_entropy;
use crate::nn::{AdamState, Gradients, Tensor};
use crate::rng;
use crate::signal::EcgSegment;

/// Binary affect classes: low (0) and high (1).
pub const CLASSES: usize = 2;

/// Mean emotion loss per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmotionTrace {
    pub loss: Vec<f64>,
}

/// Trunk features (global-max-pooled) for each window, computed in parallel.
pub fn extract_features(trunk: &Trunk<f32>, segments: &[EcgSegment]) -> Result<Vec<Tensor<f32>>> {
    let len = trunk.spec.input_len;
    segments
        .par_iter()
        .map(|s| trunk.features(&window(s, len)?))
        .collect()
}

fn onehot(label: u8) -> Result<[f32; CLASSES]> {
    match label {
        0 => Ok([1.0, 0.0]),
        1 => Ok([0.0, 1.0]),
        _ => Err(Error::Data(format!("label {label} is not binary"))),
    }
}

fn check_labels(n: usize, labels: &[u8]) -> Result<()> {
    if n == 0 || n != labels.len() {
        return Err(Error::Data(format!("{n} inputs but {} labels", labels.len())));
    }
    labels.iter().try_for_each(|&l| onehot(l).map(|_| ()))
}

/// Shared epoch/batch loop. `grads_for(chunk, epoch, inv_batch)` returns the
/// summed gradients and loss of a chunk, `reduce` folds chunks in order and
/// `step` applies one optimizer update.
fn run_epochs<G>(
    n: usize,
    cfg: &TrainConfig,
    mut grads_for: impl FnMut(&[usize], usize, f32) -> Result<(G, f64)>,
    mut reduce: impl FnMut(&mut G, G),
    mut step: impl FnMut(G) -> Result<()>,
) -> Result<EmotionTrace> {
    let mut trace = EmotionTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.emotion_epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[streams::EMOTION_SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f32;
            let mut acc: Option<G> = None;
            let mut loss = 0.0;
            for c in batch.chunks(GRAD_CHUNK) {
                let (g, l) = grads_for(c, epoch, inv)?;
                loss += l;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => reduce(a, g),
                }
            }
            total += loss;
            step(acc.expect("non-empty batch"))?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Data(format!("emotion loss diverged at epoch {epoch}")));
        }
        trace.loss.push(mean);
    }
    Ok(trace)
}

fn head_sample(
    head: &Head<f32>,
    feat: &Tensor<f32>,
    label: u8,
    cfg: &TrainConfig,
    seed: u64,
    inv: f32,
    grads: &mut Gradients<f32>,
) -> Result<(Tensor<f32>, f64)> {
    let y = onehot(label)?;
    let cache = head.forward(feat, cfg.emotion_dropout, Mode::Train { seed })?;
    let p = cache.probs.data();
    let loss = sigmoid_cross_entropy(&p.iter().map(|&v| v as f64).collect::<Vec<_>>(), &y.map(f64::from));
    let dl = Tensor::from_vec(&[CLASSES], p.iter().zip(&y).map(|(&p, &y)| (p - y) * inv).collect())?;
    Ok((head.backward(&cache, &dl, grads)?, loss))
}

/// Train a fresh emotion head on precomputed trunk features.
pub fn train_emotion_on_features(
    features: &[Tensor<f32>],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(Head<f32>, EmotionTrace)> {
    cfg.validate()?;
    check_labels(features.len(), labels)?;
    let f = features[0].len();
    let mut head = Head::new(
        "emotion",
        &[f, EMOTION_HIDDEN, EMOTION_HIDDEN, CLASSES],
        rng::derive_seed(cfg.seed, &[streams::EMOTION_INIT]),
        &[2],
    )?;
    let mut opt = AdamState::new(&head.params, cfg.lr);
    let head_cell = std::cell::RefCell::new(&mut head);
    let trace = run_epochs(
        features.len(),
        cfg,
        |chunk, epoch, inv| {
            let h = head_cell.borrow();
            let mut g = h.params.zero_grads();
            let mut loss = 0.0;
            for &i in chunk {
                let seed = rng::derive_seed(cfg.seed, &[streams::EMOTION_DROPOUT, epoch as u64, i as u64]);
                loss += head_sample(&h, &features[i], labels[i], cfg, seed, inv, &mut g)?.1;
            }
            Ok((g, loss))
        },
        |a, b| a.accumulate(&b),
        |mut g| {
            let mut h = head_cell.borrow_mut();
            apply_l2(&h.params, &mut g, h.weight_indices(), cfg.l2_beta);
            opt.step(&mut h.params, &g)
        },
    )?;
    Ok((head, trace))
}

/// Train the emotion head on top of a frozen trunk. The trunk is run once
/// per window; only the head is optimised.
pub fn train_emotion(
    trunk: &Trunk<f32>,
    segments: &[EcgSegment],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(EmotionNetwork<f32>, EmotionTrace)> {
    if !trunk.is_frozen() {
        return Err(Error::Transfer("train_emotion expects a frozen trunk; use transfer_weights".into()));
    }
    check_labels(segments.len(), labels)?;
    let feats = extract_features(trunk, segments)?;
    let (head, trace) = train_emotion_on_features(&feats, labels, cfg)?;
    Ok((
        EmotionNetwork {
            trunk: trunk.clone(),
            head,
        },
        trace,
    ))
}

/// End-to-end supervised baseline: same architecture, randomly initialised,
/// every layer trainable.
pub fn train_supervised(
    spec: &TrunkSpec,
    segments: &[EcgSegment],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(EmotionNetwork<f32>, EmotionTrace)> {
    cfg.validate()?;
    check_labels(segments.len(), labels)?;
    let trunk = Trunk::new(spec.clone(), rng::derive_seed(cfg.seed, &[streams::PRETEXT_INIT]))?;
    let net = EmotionNetwork::new(trunk, CLASSES, rng::derive_seed(cfg.seed, &[streams::EMOTION_INIT]))?;
    let mut trunk_opt = AdamState::new(&net.trunk.params, cfg.lr);
    let mut head_opt = AdamState::new(&net.head.params, cfg.lr);
    let len = spec.input_len;
    let cell = std::cell::RefCell::new(net);
    let trace = run_epochs(
        segments.len(),
        cfg,
        |chunk, epoch, inv| {
            let guard = cell.borrow();
            let net = &*guard;
            let parts = chunk
                .par_iter()
                .map(|&i| {
                    let mut tg = net.trunk.params.zero_grads();
                    let mut hg = net.head.params.zero_grads();
                    let (feat, tc) = net.trunk.forward(&window(&segments[i], len)?)?;
                    let seed = rng::derive_seed(cfg.seed, &[streams::EMOTION_DROPOUT, epoch as u64, i as u64]);
                    let (dfeat, loss) = head_sample(&net.head, &feat, labels[i], cfg, seed, inv, &mut hg)?;
                    net.trunk.backward(&tc, &dfeat, &mut tg)?;
                    Ok((tg, hg, loss))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut it = parts.into_iter();
            let (mut tg, mut hg, mut loss) = it.next().expect("non-empty chunk");
            for (t, h, l) in it {
                tg.accumulate(&t);
                hg.accumulate(&h);
                loss += l;
            }
            Ok(((tg, hg), loss))
        },
        |a, b| {
            a.0.accumulate(&b.0);
            a.1.accumulate(&b.1);
        },
        |(tg, mut hg)| {
            let mut net = cell.borrow_mut();
            let net = &mut *net;
            apply_l2(&net.head.params, &mut hg, net.head.weight_indices(), cfg.l2_beta);
            head_opt.step(&mut net.head.params, &hg)?;
            let mut tg = tg;
            if cfg.l2_include_conv {
                let k = (0..net.trunk.params.len()).step_by(2);
                apply_l2(&net.trunk.params, &mut tg, k, cfg.l2_beta);
            }
            trunk_opt.step(&mut net.trunk.params, &tg)
        },
    )?;
    Ok((cell.into_inner(), trace))
}

/// Argmax class for each feature vector (inference mode).
pub fn predict_features(head: &Head<f32>, features: &[Tensor<f32>]) -> Result<Vec<u8>> {
    features
        .iter()
        .map(|f| Ok(argmax(head.forward(f, 0.0, Mode::Inference)?.probs.data()) as u8))
        .collect()
}

/// Argmax class for each window (inference mode).
pub fn predict_segments(net: &EmotionNetwork<f32>, segments: &[EcgSegment]) -> Result<Vec<u8>> {
    let feats = extract_features(&net.trunk, segments)?;
    predict_features(&net.head, &feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize) -> (Vec<Tensor<f32>>, Vec<u8>) {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let feats = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let v: Vec<f32> = (0..6).map(|k| if k == 0 { l as f32 * 2.0 - 1.0 } else { ((i * k) % 5) as f32 * 0.1 }).collect();
                Tensor::from_vec(&[6], v).unwrap()
            })
            .collect();
        (feats, labels)
    }

    #[test]
    fn head_learns_separable_features() {
        let (f, y) = separable(40);
        let cfg = TrainConfig {
            emotion_epochs: 60,
            batch_size: 8,
            emotion_dropout: 0.0,
            ..Default::default()
        };
        let (head, trace) = train_emotion_on_features(&f, &y, &cfg).unwrap();
        assert!(trace.loss.last().unwrap() < &trace.loss[0]);
        assert_eq!(predict_features(&head, &f).unwrap(), y);
        let (again, _) = train_emotion_on_features(&f, &y, &cfg).unwrap();
        assert_eq!(head, again);
    }

    #[test]
    fn rejects_bad_labels() {
        let (f, mut y) = separable(4);
        let cfg = TrainConfig::default();
        y[0] = 2;
        assert!(train_emotion_on_features(&f, &y, &cfg).is_err());
        assert!(train_emotion_on_features(&f, &y[..2], &cfg).is_err());
    }
}
