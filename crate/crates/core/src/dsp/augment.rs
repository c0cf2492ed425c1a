use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::stft::{istft, stft};
use super::{resample_by_ratio, Waveform};
use crate::{Error, Result};

const VOCODER_FFT: usize = 2048;
const VOCODER_HOP: usize = 512;

/// A single waveform-level augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    TimeStretch { rate: f64 },
    PitchShift { semitones: f64 },
}

impl Augmentation {
    pub fn apply(&self, w: &Waveform) -> Result<Waveform> {
        match *self {
            Augmentation::TimeStretch { rate } => time_stretch(w, rate),
            Augmentation::PitchShift { semitones } => pitch_shift(w, semitones),
        }
    }
}

/// Ordered list of augmentations; variant `k` is stored as record `aug-k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub variants: Vec<Augmentation>,
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    /// Two stretches and two pitch shifts per training clip.
    pub fn esc50() -> Self {
        Self {
            variants: vec![
                Augmentation::TimeStretch { rate: 0.81 },
                Augmentation::TimeStretch { rate: 1.23 },
                Augmentation::PitchShift { semitones: -2.0 },
                Augmentation::PitchShift { semitones: 2.0 },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::PI;
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Phase-vocoder time stretch: `rate > 1` speeds up. Output has
/// `round(len / rate)` samples at the same rate and pitch.
pub fn time_stretch(w: &Waveform, rate: f64) -> Result<Waveform> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Domain(format!("stretch rate must be positive, got {rate}")));
    }
    if !(0.5..=2.0).contains(&rate) {
        return Err(Error::Domain(format!("stretch rate {rate} outside [0.5, 2.0]")));
    }
    let out_len = ((w.len() as f64 / rate).round() as usize).max(1);
    if rate == 1.0 {
        return Ok(w.clone());
    }
    let spec = stft(w.samples(), VOCODER_FFT, VOCODER_HOP, VOCODER_FFT);
    let n_bins = spec.n_bins();
    let n_in = spec.frames.len();
    let advance: Vec<f64> = (0..n_bins)
        .map(|k| 2.0 * std::f64::consts::PI * VOCODER_HOP as f64 * k as f64 / VOCODER_FFT as f64)
        .collect();
    let zero = vec![Complex::new(0.0, 0.0); n_bins];
    let col = |i: usize| if i < n_in { &spec.frames[i] } else { &zero };

    let mut phase: Vec<f64> = spec.frames[0].iter().map(|c| c.arg()).collect();
    let mut frames = Vec::new();
    let mut t = 0.0f64;
    while t < n_in as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let (c0, c1) = (col(i), col(i + 1));
        let frame: Vec<Complex<f64>> = (0..n_bins)
            .map(|k| {
                let mag = (1.0 - alpha) * c0[k].norm() + alpha * c1[k].norm();
                Complex::from_polar(mag, phase[k])
            })
            .collect();
        for k in 0..n_bins {
            let dphi = wrap_phase(c1[k].arg() - c0[k].arg() - advance[k]);
            phase[k] += advance[k] + dphi;
        }
        frames.push(frame);
        t += rate;
    }
    let stretched = super::ComplexFrames {
        frames,
        ..spec
    };
    let samples = istft(&stretched, out_len);
    Waveform::new(samples, w.sample_rate())
}

/// Shift pitch by `semitones` while keeping duration: stretch by
/// `2^(-n/12)`, then resample back to the original length.
pub fn pitch_shift(w: &Waveform, semitones: f64) -> Result<Waveform> {
    if !semitones.is_finite() {
        return Err(Error::Domain("semitone shift must be finite".into()));
    }
    if semitones.abs() > 12.0 {
        return Err(Error::Domain(format!("pitch shift {semitones} outside [-12, 12] semitones")));
    }
    if semitones == 0.0 {
        return Ok(w.clone());
    }
    let rate = 2f64.powf(-semitones / 12.0);
    let stretched = time_stretch(w, rate)?;
    let mut samples = resample_by_ratio(stretched.samples(), rate)?;
    samples.resize(w.len(), 0.0);
    Waveform::new(samples, w.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretch_lengths() {
        let w = Waveform::sine(440.0, 4.0, 22_050, 0.5).unwrap();
        assert_eq!(time_stretch(&w, 1.0).unwrap().len(), w.len());
        let fast = time_stretch(&w, 2.0).unwrap();
        assert!((fast.duration() - 2.0).abs() < VOCODER_HOP as f64 / 22_050.0);
        assert_eq!(fast.sample_rate(), 22_050);
    }

    #[test]
    fn invalid_rates_rejected() {
        let w = Waveform::sine(440.0, 1.0, 22_050, 0.5).unwrap();
        for r in [0.0, -1.0, 3.0, f64::NAN] {
            assert!(matches!(time_stretch(&w, r), Err(Error::Domain(_))));
        }
        assert!(pitch_shift(&w, 24.0).is_err());
    }

    #[test]
    fn pitch_shift_keeps_length() {
        let w = Waveform::sine(440.0, 1.0, 22_050, 0.5).unwrap();
        for n in [-2.0, 2.0, 4.0] {
            let y = pitch_shift(&w, n).unwrap();
            assert_eq!(y.len(), w.len());
            assert!(y.samples().iter().all(|v| v.is_finite()));
        }
    }
}
