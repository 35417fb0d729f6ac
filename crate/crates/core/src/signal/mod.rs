//! ECG preprocessing and synthetic signals.
//!
//! The pipeline for a raw recording is: decimate to [`TARGET_FS`] (when
//! recorded faster), remove baseline wander with a zero-phase 0.8 Hz
//! Butterworth high-pass, then cut non-overlapping 10 s windows.

mod filter;
pub mod io;
mod resample;
mod synth;

pub use filter::{
    butterworth_highpass, filtfilt, filtfilt_padded, highpass_baseline_filter, Biquad, BASELINE_CUTOFF_HZ, BASELINE_ORDER,
};
pub use io::RawRecording;
pub use resample::{kaiser_lowpass, resample};
pub use synth::synth_ecg;

use crate::error::{Error, Result};

/// Sampling rate every recording is brought to before windowing.
pub const TARGET_FS: f64 = 256.0;
/// Window length in seconds.
pub const WINDOW_SECONDS: f64 = 10.0;
/// Samples per window at [`TARGET_FS`].
pub const WINDOW_LEN: usize = 2560;

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SegmentSource {
    pub subject_id: String,
    pub index: usize,
}

/// One fixed-length preprocessed ECG window.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgSegment {
    pub samples: Vec<f32>,
    pub source: SegmentSource,
}

impl EcgSegment {
    /// Checks that the window is non-empty and finite.
    pub fn new(samples: Vec<f32>, source: SegmentSource) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empty segment".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at index {i}")));
        }
        Ok(EcgSegment { samples, source })
    }

    /// Unchecked constructor for internal transforms of already valid data.
    pub(crate) fn derived(&self, samples: Vec<f32>) -> Self {
        EcgSegment {
            samples,
            source: self.source.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Cut `signal` into consecutive non-overlapping windows of `fs × window_s`
/// samples. A trailing partial window is dropped; a signal shorter than one
/// window yields no segments.
pub fn segment(signal: &[f32], fs: f64, window_s: f64, subject_id: &str) -> Result<Vec<EcgSegment>> {
    let w = fs * window_s;
    if !(w >= 1.0) || (w - w.round()).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "window of {window_s} s at {fs} Hz is not a whole number of samples"
        )));
    }
    let w = w.round() as usize;
    signal
        .chunks_exact(w)
        .enumerate()
        .map(|(index, chunk)| {
            EcgSegment::new(
                chunk.to_vec(),
                SegmentSource {
                    subject_id: subject_id.to_string(),
                    index,
                },
            )
        })
        .collect()
}

/// Resample to [`TARGET_FS`] if needed, high-pass filter, and window.
pub fn preprocess(rec: &RawRecording) -> Result<Vec<EcgSegment>> {
    rec.validate()?;
    let raw: Vec<f64> = rec.samples.iter().map(|&v| v as f64).collect();
    let at_target = if (rec.sample_rate_hz - TARGET_FS).abs() < 1e-9 {
        raw
    } else {
        resample(&raw, rec.sample_rate_hz, TARGET_FS)?
    };
    let filtered = highpass_baseline_filter(&at_target, TARGET_FS)?;
    let samples: Vec<f32> = filtered.iter().map(|&v| v as f32).collect();
    segment(&samples, TARGET_FS, WINDOW_SECONDS, &rec.subject_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thirty_seconds_is_three_windows() {
        let s = segment(&vec![0.0; 7680], 256.0, 10.0, "a").unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|w| w.len() == 2560));
        assert_eq!(s[2].source.index, 2);
    }

    #[test]
    fn below_one_window_is_empty() {
        assert!(segment(&vec![0.0; 2559], 256.0, 10.0, "a").unwrap().is_empty());
    }

    #[test]
    fn remainder_dropped() {
        let sig: Vec<f32> = (0..5200).map(|i| i as f32).collect();
        let s = segment(&sig, 256.0, 10.0, "a").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(*s[1].samples.last().unwrap(), 5119.0);
    }

    #[test]
    fn fractional_window_rejected() {
        assert!(segment(&[0.0; 100], 256.0, 0.001, "a").is_err());
    }

    #[test]
    fn resample_then_segment_gives_full_windows() {
        let raw: Vec<f64> = (0..81920).map(|i| (i as f64 * 0.01).sin()).collect();
        let r = resample(&raw, 2048.0, 256.0).unwrap();
        let s: Vec<f32> = r.iter().map(|&v| v as f32).collect();
        let segs = segment(&s, 256.0, 10.0, "a").unwrap();
        assert_eq!(segs.len(), 4);
        assert!(segs.iter().all(|w| w.len() == WINDOW_LEN));
    }

    proptest! {
        #[test]
        fn windows_reproduce_prefix(sig in prop::collection::vec(-5.0f32..5.0, 0..700), w in 1usize..50) {
            let segs = segment(&sig, w as f64, 1.0, "p").unwrap();
            let cat: Vec<u32> = segs.iter().flat_map(|s| s.samples.iter().map(|v| v.to_bits())).collect();
            let prefix: Vec<u32> = sig[..cat.len()].iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(cat.len(), sig.len() / w * w);
            prop_assert_eq!(cat, prefix);
        }
    }
}
