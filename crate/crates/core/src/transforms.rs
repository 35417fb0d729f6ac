//! Pretext signal transformations and the pseudo-labelled dataset builder.
//!
//! Each window is emitted once untouched and once per transformation; the
//! transformation id is the pseudo-label the pretext network learns to
//! recognise.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::EcgSegment;

/// Transformation ids. The integer codes are stable and used in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TransformId {
    Original = 0,
    Noise = 1,
    Scale = 2,
    Negate = 3,
    HFlip = 4,
    Permute = 5,
    TimeWarp = 6,
}

impl TransformId {
    pub const COUNT: usize = 7;
    pub const ALL: [TransformId; 7] = [
        TransformId::Original,
        TransformId::Noise,
        TransformId::Scale,
        TransformId::Negate,
        TransformId::HFlip,
        TransformId::Permute,
        TransformId::TimeWarp,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformId::Original => "original",
            TransformId::Noise => "noise",
            TransformId::Scale => "scale",
            TransformId::Negate => "negate",
            TransformId::HFlip => "hflip",
            TransformId::Permute => "permute",
            TransformId::TimeWarp => "time_warp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Transformation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformParams {
    /// Noise standard deviation as a fraction of the window's standard deviation.
    pub noise_sigma_rel: f64,
    pub scale_factor: f64,
    pub permute_pieces: usize,
    pub warp_pieces: usize,
    pub warp_stretch: f64,
    pub rng_seed: u64,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            noise_sigma_rel: 0.05,
            scale_factor: 1.2,
            permute_pieces: 10,
            warp_pieces: 4,
            warp_stretch: 1.25,
            rng_seed: 0,
        }
    }
}

impl TransformParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.noise_sigma_rel > 0.0) {
            return bad(format!("noise_sigma_rel {} must be > 0", self.noise_sigma_rel));
        }
        if !(self.scale_factor > 0.0) || self.scale_factor == 1.0 {
            return bad(format!("scale_factor {} must be > 0 and != 1", self.scale_factor));
        }
        if self.permute_pieces < 2 {
            return bad(format!("permute_pieces {} must be >= 2", self.permute_pieces));
        }
        if self.warp_pieces < 2 || self.warp_pieces % 2 != 0 {
            return bad(format!("warp_pieces {} must be even and >= 2", self.warp_pieces));
        }
        if !(self.warp_stretch > 1.0) {
            return bad(format!("warp_stretch {} must be > 1", self.warp_stretch));
        }
        Ok(())
    }
}

/// A window paired with its transformation pseudo-label.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextSample {
    pub segment: EcgSegment,
    pub task: TransformId,
}

fn std_dev(x: &[f32]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    (x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Add seeded Gaussian noise with standard deviation `sigma_rel × std(seg)`.
/// A constant window uses `sigma_rel` as an absolute standard deviation.
pub fn add_noise(seg: &EcgSegment, sigma_rel: f64, seed: u64) -> Result<EcgSegment> {
    if !(sigma_rel > 0.0) {
        return Err(Error::Parameter(format!("sigma_rel {sigma_rel} must be > 0")));
    }
    let s = std_dev(&seg.samples);
    let sigma = if s > 0.0 { sigma_rel * s } else { sigma_rel };
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut r = rng::stream(seed, &[]);
    Ok(seg.derived(
        seg.samples
            .iter()
            .map(|&v| (v as f64 + dist.sample(&mut r)) as f32)
            .collect(),
    ))
}

pub fn scale(seg: &EcgSegment, factor: f64) -> Result<EcgSegment> {
    if !(factor > 0.0) {
        return Err(Error::Parameter(format!("scale factor {factor} must be > 0")));
    }
    let f = factor as f32;
    Ok(seg.derived(seg.samples.iter().map(|&v| v * f).collect()))
}

pub fn negate(seg: &EcgSegment) -> EcgSegment {
    seg.derived(seg.samples.iter().map(|&v| -v).collect())
}

pub fn hflip(seg: &EcgSegment) -> EcgSegment {
    seg.derived(seg.samples.iter().rev().copied().collect())
}

/// Split into `pieces` equal blocks and reorder them with a seeded
/// non-identity permutation.
pub fn permute(seg: &EcgSegment, pieces: usize, seed: u64) -> Result<EcgSegment> {
    let n = seg.len();
    if pieces < 2 || n % pieces != 0 {
        return Err(Error::Parameter(format!(
            "cannot split {n} samples into {pieces} equal pieces (need pieces >= 2 dividing the length)"
        )));
    }
    let block = n / pieces;
    let mut order: Vec<usize> = (0..pieces).collect();
    let mut r = rng::stream(seed, &[]);
    loop {
        order.shuffle(&mut r);
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            break;
        }
    }
    Ok(seg.derived(
        order
            .iter()
            .flat_map(|&b| seg.samples[b * block..(b + 1) * block].iter().copied())
            .collect(),
    ))
}

/// Linear interpolation of `x` onto `m` evenly spaced points spanning the
/// same first and last sample.
fn resize_linear(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    if m == 1 || n == 1 {
        return vec![x[0]; m];
    }
    let step = (n - 1) as f64 / (m - 1) as f64;
    (0..m)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(n - 2);
            let frac = pos - lo as f64;
            x[lo] + (x[lo + 1] - x[lo]) * frac
        })
        .collect()
}

/// Stretch a seeded half of `pieces` equal blocks by `stretch` and squeeze
/// the other half by `1 / stretch`, then resample the concatenation back to
/// the original length.
pub fn time_warp(seg: &EcgSegment, pieces: usize, stretch: f64, seed: u64) -> Result<EcgSegment> {
    let n = seg.len();
    if pieces < 2 || pieces % 2 != 0 || n % pieces != 0 {
        return Err(Error::Parameter(format!(
            "time warp needs an even number of pieces >= 2 dividing {n}, got {pieces}"
        )));
    }
    if !(stretch > 1.0) {
        return Err(Error::Parameter(format!("warp stretch {stretch} must be > 1")));
    }
    let block = n / pieces;
    let mut idx: Vec<usize> = (0..pieces).collect();
    idx.shuffle(&mut rng::stream(seed, &[]));
    let mut stretched = vec![false; pieces];
    for &i in &idx[..pieces / 2] {
        stretched[i] = true;
    }
    let x: Vec<f64> = seg.samples.iter().map(|&v| v as f64).collect();
    let mut warped = Vec::with_capacity(2 * n);
    for (b, chunk) in x.chunks_exact(block).enumerate() {
        let factor = if stretched[b] { stretch } else { 1.0 / stretch };
        let m = ((block as f64 * factor).round() as usize).max(2);
        warped.extend(resize_linear(chunk, m));
    }
    Ok(seg.derived(resize_linear(&warped, n).into_iter().map(|v| v as f32).collect()))
}

/// Apply transformation `id` with the given parameters and stream seed.
pub fn apply(id: TransformId, seg: &EcgSegment, p: &TransformParams, seed: u64) -> Result<EcgSegment> {
    match id {
        TransformId::Original => Ok(seg.clone()),
        TransformId::Noise => add_noise(seg, p.noise_sigma_rel, seed),
        TransformId::Scale => scale(seg, p.scale_factor),
        TransformId::Negate => Ok(negate(seg)),
        TransformId::HFlip => Ok(hflip(seg)),
        TransformId::Permute => permute(seg, p.permute_pieces, seed),
        TransformId::TimeWarp => time_warp(seg, p.warp_pieces, p.warp_stretch, seed),
    }
}

/// Emit every segment once per transformation id, in segment-major order.
/// The stream for sample `(i, j)` is `(params.rng_seed, [i, j])`.
pub fn build_pretext_dataset(segments: &[EcgSegment], params: &TransformParams) -> Result<Vec<PretextSample>> {
    params.validate()?;
    if segments.is_empty() {
        return Err(Error::Data("no segments to build a pretext dataset from".into()));
    }
    let mut out = Vec::with_capacity(segments.len() * TransformId::COUNT);
    for (i, seg) in segments.iter().enumerate() {
        for task in TransformId::ALL {
            let seed = rng::derive_seed(params.rng_seed, &[i as u64, task.code() as u64]);
            out.push(PretextSample {
                segment: apply(task, seg, params, seed)?,
                task,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SegmentSource;
    use proptest::prelude::*;

    fn seg(v: &[f32]) -> EcgSegment {
        EcgSegment::new(v.to_vec(), SegmentSource::default()).unwrap()
    }

    fn unit_std_segment() -> EcgSegment {
        let x: Vec<f32> = (0..2560).map(|i| (i as f32 * 0.05).sin()).collect();
        let s = std_dev(&x) as f32;
        seg(&x.iter().map(|v| v / s).collect::<Vec<_>>())
    }

    #[test]
    fn codes_are_stable() {
        for (i, t) in TransformId::ALL.iter().enumerate() {
            assert_eq!(t.code() as usize, i);
            assert_eq!(TransformId::from_code(i as u8), Some(*t));
            assert_eq!(TransformId::from_name(t.name()), Some(*t));
        }
        assert_eq!(TransformId::from_code(7), None);
    }

    #[test]
    fn noise_statistics() {
        let s = unit_std_segment();
        let out = add_noise(&s, 0.1, 11).unwrap();
        assert_eq!(out, add_noise(&s, 0.1, 11).unwrap());
        let diff: Vec<f64> = out.samples.iter().zip(&s.samples).map(|(a, b)| (a - b) as f64).collect();
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diff.len() as f64).sqrt();
        assert!((0.08..=0.12).contains(&sd), "{sd}");
        assert!(mean.abs() <= 0.01, "{mean}");
    }

    #[test]
    fn noise_on_constant_uses_absolute_sigma() {
        let s = seg(&[2.0; 2560]);
        let out = add_noise(&s, 0.1, 3).unwrap();
        let sd = std_dev(&out.samples);
        assert!((0.08..=0.12).contains(&sd));
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale(&seg(&[1.0, -0.5, 2.0]), 1.2).unwrap().samples, vec![1.2f32, -0.6, 2.4]);
        let s = unit_std_segment();
        assert_eq!(scale(&s, 1.0).unwrap(), s);
        assert!(scale(&s, 0.0).is_err());
    }

    #[test]
    fn negate_and_flip_examples() {
        assert_eq!(negate(&seg(&[1.0, -2.0, 3.0])).samples, vec![-1.0, 2.0, -3.0]);
        assert_eq!(negate(&seg(&[0.0; 4])).samples, vec![0.0; 4]);
        assert_eq!(hflip(&seg(&[1.0, 2.0, 3.0, 4.0])).samples, vec![4.0, 3.0, 2.0, 1.0]);
        let pal = seg(&[1.0, 2.0, 1.0]);
        assert_eq!(hflip(&pal), pal);
    }

    #[test]
    fn permute_two_pieces() {
        for s in 0..20 {
            assert_eq!(permute(&seg(&[1.0, 2.0, 3.0, 4.0]), 2, s).unwrap().samples, vec![3.0, 4.0, 1.0, 2.0]);
        }
        assert!(matches!(permute(&seg(&[1.0, 2.0, 3.0]), 2, 0), Err(Error::Parameter(_))));
        assert!(permute(&seg(&[1.0, 2.0]), 1, 0).is_err());
    }

    #[test]
    fn time_warp_shape_and_constant() {
        let c = seg(&[0.7; 2560]);
        let w = time_warp(&c, 4, 1.25, 5).unwrap();
        assert_eq!(w.len(), 2560);
        assert!(w.samples.iter().all(|v| (v - 0.7).abs() < 1e-6));
        assert!(time_warp(&c, 3, 1.25, 5).is_err());
        assert!(time_warp(&c, 4, 1.0, 5).is_err());
    }

    #[test]
    fn time_warp_keeps_ramp_monotone() {
        let ramp: Vec<f32> = (0..2560).map(|i| i as f32 / 2559.0).collect();
        for s in 0..10 {
            let w = time_warp(&seg(&ramp), 4, 1.25, s).unwrap();
            assert!(w.samples.windows(2).all(|p| p[1] >= p[0] - 1e-6));
            assert_ne!(w.samples, ramp);
        }
    }

    #[test]
    fn dataset_cardinality_and_passthrough() {
        let segs: Vec<EcgSegment> = (0..10)
            .map(|k| seg(&(0..2560).map(|i| ((i * (k + 1)) as f32 * 0.01).sin()).collect::<Vec<_>>()))
            .collect();
        let p = TransformParams::default();
        let ds = build_pretext_dataset(&segs, &p).unwrap();
        assert_eq!(ds.len(), 70);
        for t in TransformId::ALL {
            assert_eq!(ds.iter().filter(|s| s.task == t).count(), 10);
        }
        for (i, s) in ds.iter().filter(|s| s.task == TransformId::Original).enumerate() {
            assert_eq!(s.segment, segs[i]);
        }
        assert_eq!(ds, build_pretext_dataset(&segs, &p).unwrap());
        assert!(build_pretext_dataset(&[], &p).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(TransformParams::default().validate().is_ok());
        let bad = [
            TransformParams { noise_sigma_rel: 0.0, ..Default::default() },
            TransformParams { scale_factor: 1.0, ..Default::default() },
            TransformParams { permute_pieces: 1, ..Default::default() },
            TransformParams { warp_pieces: 3, ..Default::default() },
            TransformParams { warp_stretch: 1.0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    proptest! {
        #[test]
        fn algebraic_laws(x in prop::collection::vec(-3.0f32..3.0, 20), seed in any::<u64>()) {
            let s = seg(&x);
            prop_assert_eq!(&negate(&negate(&s)), &s);
            prop_assert_eq!(&hflip(&hflip(&s)), &s);
            prop_assert_eq!(negate(&hflip(&s)), hflip(&negate(&s)));
            let mut a = permute(&s, 10, seed).unwrap().samples;
            let mut b = x.clone();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
            let sc = scale(&s, 1.2).unwrap();
            for (o, i) in sc.samples.iter().zip(&x) {
                prop_assert_eq!(o.signum(), i.signum());
            }
        }
    }
}
