use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{streams, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{Mode, PretextNetwork, TrunkSpec, PRETEXT_HIDDEN};
use crate::nn::loss::{bce_loss, l2_grad};
use crate::nn::{AdamState, Gradients, ParamSet, Tensor};
use crate::rng;
use crate::signal::EcgSegment;
use crate::transforms::{PretextSample, TransformId};

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// summed gradient does not depend on how many threads ran them.
pub(crate) const GRAD_CHUNK: usize = 8;

/// Per-epoch training losses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretextTrace {
    /// `per_task[e][j]`: mean BCE of head `j` over the samples of epoch `e`.
    pub per_task: Vec<[f64; TransformId::COUNT]>,
    /// `Σ_j α_j per_task[e][j]`.
    pub total: Vec<f64>,
}

struct Partial {
    trunk: Gradients<f32>,
    heads: Vec<Gradients<f32>>,
    loss: [f64; TransformId::COUNT],
}

pub(crate) fn window(seg: &EcgSegment, len: usize) -> Result<Tensor<f32>> {
    if seg.samples.len() != len {
        return Err(Error::shape("window", &[seg.samples.len(), 1], &[len, 1]));
    }
    Tensor::from_vec(&[len, 1], seg.samples.clone())
}

fn sample_grads(
    net: &PretextNetwork<f32>,
    data: &[PretextSample],
    chunk: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    inv_batch: f32,
) -> Result<Partial> {
    let (trunk, heads) = net.zero_grads();
    let mut part = Partial {
        trunk,
        heads,
        loss: [0.0; TransformId::COUNT],
    };
    let len = net.trunk.spec.input_len;
    let train_trunk = !net.trunk.is_frozen();
    for &i in chunk {
        let s = &data[i];
        let x = window(&s.segment, len)?;
        let seed = rng::derive_seed(cfg.seed, &[streams::PRETEXT_DROPOUT, epoch as u64, i as u64]);
        let cache = net.forward_one(&x, cfg.dropout, Mode::Train { seed })?;
        let mut dfeat = Tensor::zeros(&[net.trunk.spec.feature_dim()]);
        for (j, (head, hc)) in net.heads.iter().zip(&cache.heads).enumerate() {
            let y: Vec<f32> = net.head_units.targets(s.task.code() as usize == j);
            let p = hc.probs.data();
            part.loss[j] += p.iter().zip(&y).map(|(&p, &y)| bce_loss(p as f64, y as f64)).sum::<f64>();
            let a = cfg.alphas[j] as f32 * inv_batch;
            let dl: Vec<f32> = p.iter().zip(&y).map(|(&p, &y)| a * (p - y)).collect();
            let dl = Tensor::from_vec(&[dl.len()], dl)?;
            dfeat.add_assign(&head.backward(hc, &dl, &mut part.heads[j])?);
        }
        if train_trunk {
            net.trunk.backward(&cache.trunk, &dfeat, &mut part.trunk)?;
        }
    }
    Ok(part)
}

/// Add `2βw` to the gradients of regularised weights; returns `β Σ w²`.
pub(crate) fn apply_l2(params: &ParamSet<f32>, grads: &mut Gradients<f32>, idx: impl Iterator<Item = usize>, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let b = beta as f32;
    let mut pen = 0.0;
    for i in idx {
        let p = &params.params[i];
        if !p.trainable {
            continue;
        }
        for (g, &w) in grads.tensors[i].data_mut().iter_mut().zip(p.value.data()) {
            *g += l2_grad(w, b);
            pen += (w as f64) * (w as f64);
        }
    }
    beta * pen
}

fn check_balance(data: &[PretextSample]) -> Result<()> {
    let mut counts = [0usize; TransformId::COUNT];
    data.iter().for_each(|s| counts[s.task.code() as usize] += 1);
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::Data(format!("pretext dataset is not balanced across tasks: {counts:?}")));
    }
    Ok(())
}

/// Train the multi-task network with Adam on the weighted BCE sum.
///
/// `init` defaults to the standard architecture seeded from `cfg.seed`.
/// Results are bit-identical for the same inputs regardless of thread count.
pub fn train_pretext(
    data: &[PretextSample],
    cfg: &TrainConfig,
    init: Option<PretextNetwork<f32>>,
) -> Result<(PretextNetwork<f32>, PretextTrace)> {
    train_pretext_observed(data, cfg, init, |_, _, _| Ok(ControlFlow::Continue(())))
}

/// [`train_pretext`] with `observe(epoch, net, trace)` called after every
/// epoch. Returning `Break` stops training early.
pub fn train_pretext_observed(
    data: &[PretextSample],
    cfg: &TrainConfig,
    init: Option<PretextNetwork<f32>>,
    mut observe: impl FnMut(usize, &PretextNetwork<f32>, &PretextTrace) -> Result<ControlFlow<()>>,
) -> Result<(PretextNetwork<f32>, PretextTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty pretext dataset".into()));
    }
    check_balance(data)?;
    let mut net = match init {
        Some(n) => n,
        None => PretextNetwork::with_spec(
            TrunkSpec::default(),
            PRETEXT_HIDDEN,
            cfg.head_units,
            rng::derive_seed(cfg.seed, &[streams::PRETEXT_INIT]),
        )?,
    };
    let mut trunk_opt = AdamState::new(&net.trunk.params, cfg.lr);
    let mut head_opts: Vec<_> = net.heads.iter().map(|h| AdamState::new(&h.params, cfg.lr)).collect();
    let conv_kernels: Vec<usize> = (0..net.trunk.params.len()).step_by(2).collect();
    let mut trace = PretextTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.pretext_epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[streams::PRETEXT_SHUFFLE, epoch as u64]));
        let mut epoch_loss = [0.0; TransformId::COUNT];
        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f32;
            let parts = batch
                .par_chunks(GRAD_CHUNK)
                .map(|c| sample_grads(&net, data, c, cfg, epoch, inv))
                .collect::<Result<Vec<_>>>()?;
            let mut it = parts.into_iter();
            let mut acc = it.next().expect("non-empty batch");
            for p in it {
                acc.trunk.accumulate(&p.trunk);
                for (a, b) in acc.heads.iter_mut().zip(&p.heads) {
                    a.accumulate(b);
                }
                for j in 0..TransformId::COUNT {
                    acc.loss[j] += p.loss[j];
                }
            }
            for j in 0..TransformId::COUNT {
                epoch_loss[j] += acc.loss[j];
            }
            for ((h, g), opt) in net.heads.iter_mut().zip(&mut acc.heads).zip(&mut head_opts) {
                apply_l2(&h.params, g, h.weight_indices(), cfg.l2_beta);
                opt.step(&mut h.params, g)?;
            }
            if !net.trunk.is_frozen() {
                if cfg.l2_include_conv {
                    apply_l2(&net.trunk.params, &mut acc.trunk, conv_kernels.iter().copied(), cfg.l2_beta);
                }
                trunk_opt.step(&mut net.trunk.params, &acc.trunk)?;
            }
        }
        let n = data.len() as f64;
        let mean = epoch_loss.map(|l| l / n);
        let total = mean.iter().zip(&cfg.alphas).map(|(l, a)| l * a).sum::<f64>();
        if !total.is_finite() {
            return Err(Error::Data(format!("pretext loss diverged at epoch {epoch}")));
        }
        log::info!("pretext epoch {}/{}: loss {total:.5}", epoch + 1, cfg.pretext_epochs);
        trace.per_task.push(mean);
        trace.total.push(total);
        if observe(epoch, &net, &trace)?.is_break() {
            break;
        }
    }
    Ok((net, trace))
}

/// Fraction of samples whose most confident head names the applied
/// transformation.
pub fn pretext_accuracy(net: &PretextNetwork<f32>, data: &[PretextSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let len = net.trunk.spec.input_len;
    let hits = data
        .par_iter()
        .map(|s| {
            let cache = net.forward_one(&window(&s.segment, len)?, 0.0, Mode::Inference)?;
            let probs: Vec<f32> = cache.heads.iter().map(|h| net.task_prob(&h.probs)).collect();
            Ok(usize::from(crate::models::argmax(&probs) == s.task.code() as usize))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ConvBlockSpec, HeadUnits};
    use crate::signal::SegmentSource;
    use crate::transforms::{build_pretext_dataset, TransformParams};

    pub(crate) fn tiny_spec() -> TrunkSpec {
        TrunkSpec {
            input_len: 64,
            blocks: vec![ConvBlockSpec { kernel: 5, filters: 4 }, ConvBlockSpec { kernel: 3, filters: 6 }],
            convs_per_block: 1,
            pool: 4,
            pool_stride: 2,
        }
    }

    fn tiny_data() -> Vec<PretextSample> {
        let segs: Vec<EcgSegment> = (0..4)
            .map(|k| {
                let s = (0..64).map(|i| (i as f32 * 0.3 + k as f32).sin() + 0.2 * (i as f32 * 0.05).cos()).collect();
                EcgSegment::new(s, SegmentSource { subject_id: "s".into(), index: k }).unwrap()
            })
            .collect();
        build_pretext_dataset(&segs, &TransformParams { permute_pieces: 4, ..Default::default() }).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            pretext_epochs: 3,
            batch_size: 10,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let data = tiny_data();
        let net = PretextNetwork::with_spec(tiny_spec(), 8, HeadUnits::One, 1).unwrap();
        let (a, ta) = train_pretext(&data, &tiny_cfg(), Some(net.clone())).unwrap();
        let (b, tb) = train_pretext(&data, &tiny_cfg(), Some(net.clone())).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.per_task.len(), 3);
        assert!(ta.total.iter().all(|l| l.is_finite()));
        assert_ne!(a.trunk, net.trunk);
    }

    #[test]
    fn loss_decreases_on_tiny_problem() {
        let data = tiny_data();
        let net = PretextNetwork::with_spec(tiny_spec(), 16, HeadUnits::One, 2).unwrap();
        let cfg = TrainConfig {
            pretext_epochs: 40,
            dropout: 0.0,
            lr: 0.01,
            ..tiny_cfg()
        };
        let (_, t) = train_pretext(&data, &cfg, Some(net)).unwrap();
        assert!(t.total.last().unwrap() < &(0.8 * t.total[0]), "{:?}", t.total);
    }

    #[test]
    fn observer_sees_every_epoch_and_can_stop() {
        let data = tiny_data();
        let net = PretextNetwork::with_spec(tiny_spec(), 8, HeadUnits::One, 1).unwrap();
        let mut seen = Vec::new();
        let (_, t) = train_pretext_observed(&data, &tiny_cfg(), Some(net.clone()), |e, _, t| {
            seen.push((e, t.total.len()));
            Ok(if e == 1 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        })
        .unwrap();
        assert_eq!(seen, [(0, 1), (1, 2)]);
        assert_eq!(t.total.len(), 2);
        let (_, full) = train_pretext(&data, &tiny_cfg(), Some(net)).unwrap();
        assert_eq!(full.per_task[..2], t.per_task[..]);
    }

    #[test]
    fn rejects_unbalanced_data() {
        let mut data = tiny_data();
        data.pop();
        let net = PretextNetwork::with_spec(tiny_spec(), 8, HeadUnits::One, 1).unwrap();
        assert!(matches!(train_pretext(&data, &tiny_cfg(), Some(net)), Err(Error::Data(_))));
    }

    #[test]
    fn two_unit_heads_train() {
        let data = tiny_data();
        let net = PretextNetwork::with_spec(tiny_spec(), 8, HeadUnits::Two, 1).unwrap();
        let (n, t) = train_pretext(&data, &tiny_cfg(), Some(net)).unwrap();
        assert!(t.total.iter().all(|l| l.is_finite()));
        let acc = pretext_accuracy(&n, &data).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
