//! Integer-factor decimation with a Kaiser-windowed sinc low-pass.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Low-pass cutoff as a fraction of the output rate.
const CUTOFF_FRACTION: f64 = 0.45;
/// One-sided filter length in output samples.
const HALF_TAPS_PER_PHASE: usize = 40;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Odd-length linear-phase low-pass with unit DC gain. `cutoff` is in
/// cycles per sample (0 < cutoff < 0.5).
pub fn kaiser_lowpass(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let center = (taps - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - center;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let r = t / center;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Decimate `signal` from `fs_in` to `fs_out`.
///
/// The ratio must be a positive integer. Output sample `n` is the filtered
/// value centred on input sample `n × ratio`; the signal is extended by odd
/// reflection at both ends, so constants and linear trends pass through
/// unchanged. Output length is `round(len × fs_out / fs_in)`.
pub fn resample(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0) || !(fs_out > 0.0) {
        return Err(Error::Parameter(format!("sampling rates must be positive ({fs_in}, {fs_out})")));
    }
    if fs_out > fs_in {
        return Err(Error::Unsupported(format!("upsampling {fs_in} Hz -> {fs_out} Hz")));
    }
    let ratio = fs_in / fs_out;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::Unsupported(format!(
            "non-integer decimation ratio {ratio} ({fs_in} Hz -> {fs_out} Hz)"
        )));
    }
    let m = ratio.round() as usize;
    if m == 1 || signal.is_empty() {
        return Ok(signal.to_vec());
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite sample at index {i}")));
    }
    let half = HALF_TAPS_PER_PHASE * m;
    let h = kaiser_lowpass(2 * half + 1, CUTOFF_FRACTION / m as f64, KAISER_BETA);

    let n = signal.len();
    let last = n - 1;
    let at = |i: isize| -> f64 {
        if i < 0 {
            2.0 * signal[0] - signal[((-i) as usize).min(last)]
        } else if i as usize > last {
            let back = (i as usize - last).min(last);
            2.0 * signal[last] - signal[last - back]
        } else {
            signal[i as usize]
        }
    };

    let out_len = (n as f64 / m as f64).round() as usize;
    Ok((0..out_len)
        .map(|k| {
            let center = (k * m) as isize;
            h.iter()
                .enumerate()
                .map(|(j, &c)| c * at(center + j as isize - half as isize))
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn lengths() {
        assert_eq!(resample(&vec![0.0; 20480], 2048.0, 256.0).unwrap().len(), 2560);
        assert_eq!(resample(&vec![0.0; 20483], 2048.0, 256.0).unwrap().len(), 2560);
        assert_eq!(resample(&vec![0.0; 20485], 2048.0, 256.0).unwrap().len(), 2561);
    }

    #[test]
    fn five_hz_sine_survives() {
        let y = resample(&sine(5.0, 2048.0, 20480), 2048.0, 256.0).unwrap();
        let expect = sine(5.0, 256.0, 2560);
        for i in 256..2304 {
            assert!((y[i] - expect[i]).abs() < 0.02, "i={i}");
        }
    }

    #[test]
    fn constant_preserved() {
        let y = resample(&vec![3.0; 20480], 2048.0, 256.0).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 3.0).abs() < 1e-6);
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    /// Amplitude of the `f` Hz component of `y` (sampled at `fs`) by
    /// projection onto sine and cosine; `y` must span whole cycles.
    fn amplitude(y: &[f64], f: f64, fs: f64) -> f64 {
        let n = y.len() as f64;
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (s, c) = y.iter().enumerate().fold((0.0, 0.0), |(s, c), (i, v)| {
            (s + v * (w * i as f64).sin(), c + v * (w * i as f64).cos())
        });
        2.0 * (s * s + c * c).sqrt() / n
    }

    #[test]
    fn passband_and_stopband() {
        // Passband up to 0.4 × fs_out within 2%; energy above the output
        // Nyquist suppressed. The 15 s window holds whole cycles of each tone.
        for f in [1.0, 40.0, 80.0, 102.4] {
            let y = resample(&sine(f, 2048.0, 40960), 2048.0, 256.0).unwrap();
            let a = amplitude(&y[512..512 + 3840], f, 256.0);
            assert!((a - 1.0).abs() < 0.02, "f={f} amplitude={a}");
        }
        let y = resample(&sine(200.0, 2048.0, 40960), 2048.0, 256.0).unwrap();
        let peak = y[512..4608].iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(peak < 1e-3, "alias peak {peak}");
    }

    #[test]
    fn unsupported_ratios() {
        assert!(matches!(resample(&[1.0; 10], 256.0, 2048.0), Err(Error::Unsupported(_))));
        assert!(matches!(resample(&[1.0; 10], 1000.0, 256.0), Err(Error::Unsupported(_))));
        assert!(matches!(resample(&[1.0; 10], 0.0, 256.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-13);
        assert!((bessel_i0(8.0) - 427.56411572180474).abs() < 1e-9);
    }
}
