//! Synthetic ECG from Gaussian P, Q, R, S and T waves.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// One wave of the beat template: offset from the R peak (seconds, at
/// 60 bpm), width (seconds), amplitude (mV).
struct Wave {
    offset: f64,
    width: f64,
    amp: f64,
    /// Whether the offset shortens with the RR interval (√RR scaling).
    rate_scaled: bool,
}

const WAVES: [Wave; 5] = [
    Wave { offset: -0.20, width: 0.025, amp: 0.15, rate_scaled: true },
    Wave { offset: -0.028, width: 0.010, amp: -0.12, rate_scaled: false },
    Wave { offset: 0.0, width: 0.012, amp: 1.00, rate_scaled: false },
    Wave { offset: 0.030, width: 0.011, amp: -0.25, rate_scaled: false },
    Wave { offset: 0.30, width: 0.055, amp: 0.30, rate_scaled: true },
];

/// Relative standard deviation of beat-to-beat interval jitter.
const RR_JITTER: f64 = 0.015;
/// Relative beat amplitude jitter.
const AMP_JITTER: f64 = 0.02;
/// Additive measurement noise (mV).
const NOISE_MV: f64 = 0.004;

pub const MIN_HR_BPM: f64 = 30.0;
pub const MAX_HR_BPM: f64 = 220.0;

/// Deterministic synthetic ECG of `duration_s` seconds at `fs` Hz.
///
/// Beats are spaced `60 / heart_rate_bpm` seconds apart with seeded jitter;
/// each beat is a sum of five Gaussian bumps whose P and T offsets shrink
/// with `√RR` as the rate rises. The returned signal has zero mean.
pub fn synth_ecg(heart_rate_bpm: f64, fs: f64, duration_s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(MIN_HR_BPM..=MAX_HR_BPM).contains(&heart_rate_bpm) {
        return Err(Error::Parameter(format!(
            "heart rate {heart_rate_bpm} bpm outside [{MIN_HR_BPM}, {MAX_HR_BPM}]"
        )));
    }
    if !(fs > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Parameter(format!("fs {fs} and duration {duration_s} must be positive")));
    }
    let n = (fs * duration_s).round() as usize;
    let rr = 60.0 / heart_rate_bpm;
    let stretch = rr.sqrt();
    let mut r = rng::stream(seed, &[0x5EC6]);
    let jitter = Normal::<f64>::new(0.0, 1.0).expect("unit normal");

    let mut x = vec![0.0; n];
    let span = 0.6;
    let mut t = r.random_range(0.0..rr) - rr;
    while t < duration_s + span {
        let gain = 1.0 + AMP_JITTER * jitter.sample(&mut r).clamp(-3.0, 3.0);
        let lo = (((t - span) * fs).floor().max(0.0)) as usize;
        let hi = ((((t + span) * fs).ceil()).max(0.0) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let ti = i as f64 / fs - t;
            for w in &WAVES {
                let mu = if w.rate_scaled { w.offset * stretch } else { w.offset };
                let d = (ti - mu) / w.width;
                *v += gain * w.amp * (-0.5 * d * d).exp();
            }
        }
        t += rr * (1.0 + RR_JITTER * jitter.sample(&mut r).clamp(-3.0, 3.0));
    }
    let noise = Normal::new(0.0, NOISE_MV).expect("positive std");
    for v in &mut x {
        *v += noise.sample(&mut r);
    }
    let mean = x.iter().sum::<f64>() / n.max(1) as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lag of the first autocorrelation peak that reaches 90% of the largest
    /// peak among lags corresponding to 30..220 bpm.
    fn dominant_lag(x: &[f64], fs: f64) -> usize {
        let n = x.len();
        let ac = |lag: usize| -> f64 { (0..n - lag).map(|i| x[i] * x[i + lag]).sum::<f64>() / (n - lag) as f64 };
        let lo = (fs * 60.0 / MAX_HR_BPM) as usize;
        let hi = ((fs * 60.0 / MIN_HR_BPM) as usize).min(n / 2);
        let vals: Vec<f64> = (lo..=hi).map(ac).collect();
        let best = vals.iter().cloned().fold(f64::MIN, f64::max);
        for i in 1..vals.len() - 1 {
            if vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] && vals[i] >= 0.9 * best {
                return lo + i;
            }
        }
        lo + vals.iter().position(|&v| v == best).unwrap()
    }

    #[test]
    fn sixty_bpm_period() {
        let x = synth_ecg(60.0, 256.0, 10.0, 7).unwrap();
        assert_eq!(x.len(), 2560);
        let lag = dominant_lag(&x, 256.0);
        assert!((251..=261).contains(&lag), "lag {lag}");
    }

    #[test]
    fn one_twenty_bpm_period() {
        let x = synth_ecg(120.0, 256.0, 10.0, 7).unwrap();
        let lag = dominant_lag(&x, 256.0);
        assert!((125..=131).contains(&lag), "lag {lag}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_ecg(72.0, 256.0, 10.0, 3).unwrap();
        let b = synth_ecg(72.0, 256.0, 10.0, 3).unwrap();
        let c = synth_ecg(72.0, 256.0, 10.0, 4).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, c);
    }

    #[test]
    fn finite_and_centred() {
        for (hr, seed) in [(30.0, 1), (75.0, 2), (180.0, 3), (220.0, 4)] {
            let x = synth_ecg(hr, 256.0, 10.0, seed).unwrap();
            assert!(x.iter().all(|v| v.is_finite()));
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            assert!(mean.abs() < 0.1 * std);
        }
    }

    #[test]
    fn rejects_out_of_range_rate() {
        assert!(matches!(synth_ecg(29.0, 256.0, 10.0, 0), Err(Error::Parameter(_))));
        assert!(matches!(synth_ecg(221.0, 256.0, 10.0, 0), Err(Error::Parameter(_))));
        assert!(synth_ecg(60.0, 256.0, 0.0, 0).is_err());
    }
}
