//! Zero-phase Butterworth high-pass as cascaded second-order sections.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const BASELINE_CUTOFF_HZ: f64 = 0.8;
pub const BASELINE_ORDER: usize = 4;
/// Edge extension of the baseline filter, in periods of the cutoff.
const EDGE_PAD_CYCLES: f64 = 3.2;
const MIN_LEN: usize = 64;

/// Second-order section, `a[0] == 1`, run in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// State that holds the output steady for a unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

/// Digital Butterworth high-pass of even `order` via the bilinear transform
/// with pre-warping.
pub fn butterworth_highpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::Parameter(format!("butterworth order {order} must be even and > 0")));
    }
    if !(cutoff > 0.0) || !(fs > 2.0 * cutoff) {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff} Hz must lie in (0, fs/2) for fs = {fs} Hz"
        )));
    }
    let k = (PI * cutoff / fs).tan();
    let k2 = k * k;
    Ok((0..order / 2)
        .map(|i| {
            // Analog section s² / (s² + 2ζΩs + Ω²) mapped through s = (1 - z⁻¹)/(1 + z⁻¹).
            let zeta = (PI * (2 * i + 1) as f64 / (2 * order) as f64).sin();
            let a0 = 1.0 + 2.0 * zeta * k + k2;
            Biquad {
                b: [1.0 / a0, -2.0 / a0, 1.0 / a0],
                a: [1.0, (2.0 * k2 - 2.0) / a0, (1.0 - 2.0 * zeta * k + k2) / a0],
            }
        })
        .collect())
}

/// Run the cascade over `x` in place. Each section starts from its steady
/// state for a constant input equal to `x[0]`.
fn sosfilt_steady(sections: &[Biquad], x: &mut [f64]) {
    let Some(&x0) = x.first() else { return };
    let mut level = x0;
    for s in sections {
        let [mut z1, mut z2] = s.step_state().map(|z| z * level);
        level *= s.dc_gain();
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * y + z2;
            z2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with a short odd extension at both ends.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    filtfilt_padded(sections, x, 3 * (2 * sections.len() + 1))
}

/// [`filtfilt`] with `pad` samples of odd extension (capped at `len - 1`).
pub fn filtfilt_padded(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    sosfilt_steady(sections, &mut ext);
    ext.reverse();
    sosfilt_steady(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Remove baseline wander: order-4 Butterworth high-pass at 0.8 Hz,
/// applied forward and backward for zero phase.
pub fn highpass_baseline_filter(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    if !(fs > 2.0 * BASELINE_CUTOFF_HZ) {
        return Err(Error::Parameter(format!(
            "sampling rate {fs} Hz must exceed {} Hz",
            2.0 * BASELINE_CUTOFF_HZ
        )));
    }
    if signal.len() < MIN_LEN {
        return Err(Error::Parameter(format!(
            "signal of {} samples is shorter than the {MIN_LEN}-sample minimum",
            signal.len()
        )));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite sample at index {i}")));
    }
    let sos = butterworth_highpass(BASELINE_ORDER, BASELINE_CUTOFF_HZ, fs)?;
    // The slowest pole pair decays with a time constant of about
    // 1 / (2π · 0.8 · sin(π/8)) ≈ 0.5 s; 4 s of extension lets the start-up
    // transient die out before the real samples.
    let pad = (EDGE_PAD_CYCLES / BASELINE_CUTOFF_HZ * fs).ceil() as usize;
    Ok(filtfilt_padded(&sos, signal, pad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 256.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
    }

    fn central(n: usize) -> std::ops::Range<usize> {
        n / 10..n - n / 10
    }

    /// Magnitude response of the cascade at `f`, evaluated directly on the unit circle.
    fn magnitude(sos: &[Biquad], f: f64) -> f64 {
        let w = 2.0 * PI * f / FS;
        sos.iter()
            .map(|s| {
                let eval = |c: &[f64; 3]| {
                    let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
                    let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
                    (re * re + im * im).sqrt()
                };
                eval(&s.b) / eval(&s.a)
            })
            .product()
    }

    #[test]
    fn design_has_butterworth_response() {
        let sos = butterworth_highpass(4, 0.8, FS).unwrap();
        assert!((magnitude(&sos, 0.8) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(magnitude(&sos, 0.0) < 1e-12);
        assert!((magnitude(&sos, 10.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_dc() {
        let y = highpass_baseline_filter(&vec![1.0; 2560], FS).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-3), "{:?}", &y[..4]);
    }

    #[test]
    fn passes_five_hz() {
        let x = sine(5.0, 2560);
        let y = highpass_baseline_filter(&x, FS).unwrap();
        assert_eq!(y.len(), x.len());
        for i in central(2560) {
            assert!((y[i] - x[i]).abs() < 0.01, "i={i} y={} x={}", y[i], x[i]);
        }
        let peak = central(2560).map(|i| y[i].abs()).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 0.01);
    }

    #[test]
    fn removes_slow_drift() {
        let clean = sine(5.0, 2560);
        let drift = sine(0.1, 2560);
        let x: Vec<f64> = clean.iter().zip(&drift).map(|(a, b)| a + b).collect();
        let y = highpass_baseline_filter(&x, FS).unwrap();
        let r = central(2560);
        let (a, b) = (&y[r.clone()], &clean[r]);
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
        assert!(cov / (va * vb).sqrt() > 0.99);
    }

    #[test]
    fn parameter_and_validation_errors() {
        assert!(matches!(highpass_baseline_filter(&vec![0.0; 100], 1.6), Err(Error::Parameter(_))));
        assert!(matches!(highpass_baseline_filter(&vec![0.0; 63], FS), Err(Error::Parameter(_))));
        let mut x = vec![0.0; 100];
        x[50] = f64::NAN;
        assert!(matches!(highpass_baseline_filter(&x, FS), Err(Error::Validation(_))));
        assert!(butterworth_highpass(3, 0.8, FS).is_err());
    }

    proptest! {
        #[test]
        fn filter_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 64..300),
            seed in prop::collection::vec(-1.0f64..1.0, 300),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let y: Vec<f64> = seed[..x.len()].to_vec();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = highpass_baseline_filter(&mix, FS).unwrap();
            let fx = highpass_baseline_filter(&x, FS).unwrap();
            let fy = highpass_baseline_filter(&y, FS).unwrap();
            let scale = lhs.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for i in 0..x.len() {
                let rhs = a * fx[i] + b * fy[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * scale, "i={} {} vs {}", i, lhs[i], rhs);
            }
        }
    }
}
