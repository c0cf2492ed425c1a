//! Audio front end: decoding, resampling, mel filterbanks, the
//! three-channel multi-resolution log-mel tensor and waveform augmentation.

mod audio;
mod augment;
mod features;
mod mel;
mod stft;

pub use audio::{load_audio, resample, resample_by_ratio, Waveform};
pub use augment::{pitch_shift, time_stretch, Augmentation, AugmentationPolicy};
pub use features::{
    log_mel_channel, multires_melspec, normalize_tensor, resize_time, MelTensor, Spectrogram,
    LOG_FLOOR,
};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, FilterbankMatrix, MelScale};
pub use stft::{istft, power_spectrogram, stft, ComplexFrames};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of mel bands in every channel.
pub const N_MELS: usize = 128;

/// Analysis window and hop for one channel of the tensor, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub window_ms: f64,
    pub hop_ms: f64,
    #[serde(default = "default_n_mels")]
    pub n_mels: usize,
    /// Explicit FFT size; `None` picks the smallest power of two holding the
    /// window.
    #[serde(default)]
    pub fft_size: Option<usize>,
}

fn default_n_mels() -> usize {
    N_MELS
}

/// A [`WindowSpec`] converted to sample counts at a given rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGeometry {
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub n_mels: usize,
}

impl WindowSpec {
    pub const fn new(window_ms: f64, hop_ms: f64) -> Self {
        Self {
            window_ms,
            hop_ms,
            n_mels: N_MELS,
            fft_size: None,
        }
    }

    /// `{25,10}`, `{50,25}`, `{100,50}` ms, in channel order.
    pub fn canonical() -> [WindowSpec; 3] {
        [
            WindowSpec::new(25.0, 10.0),
            WindowSpec::new(50.0, 25.0),
            WindowSpec::new(100.0, 50.0),
        ]
    }

    pub fn with_fft_size(mut self, fft_size: usize) -> Self {
        self.fft_size = Some(fft_size);
        self
    }

    pub fn geometry(&self, sample_rate: u32) -> Result<FrameGeometry> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::Config(format!(
                "window and hop must be positive, got {{{}, {}}} ms",
                self.window_ms, self.hop_ms
            )));
        }
        if self.hop_ms >= self.window_ms {
            return Err(Error::Config(format!(
                "hop ({} ms) must be shorter than the window ({} ms)",
                self.hop_ms, self.window_ms
            )));
        }
        let sr = f64::from(sample_rate);
        let win_length = (self.window_ms * sr / 1000.0).round() as usize;
        let hop_length = ((self.hop_ms * sr / 1000.0).round() as usize).max(1);
        let fft_size = match self.fft_size {
            Some(n) => {
                if !n.is_power_of_two() {
                    return Err(Error::Config(format!("fft_size {n} is not a power of two")));
                }
                if n < win_length {
                    return Err(Error::Config(format!(
                        "fft_size {n} is shorter than the {win_length}-sample window"
                    )));
                }
                n
            }
            None => win_length.next_power_of_two(),
        };
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        Ok(FrameGeometry {
            win_length,
            hop_length,
            fft_size,
            n_mels: self.n_mels,
        })
    }
}

/// Everything that determines a cached feature tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    /// Nominal clip length; shorter clips are zero-padded, longer ones cropped.
    pub clip_seconds: f64,
    pub target_width: usize,
    pub specs: [WindowSpec; 3],
    #[serde(default)]
    pub mel_scale: MelScale,
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

fn default_log_floor() -> f64 {
    LOG_FLOOR
}

impl DspConfig {
    pub fn new(sample_rate: u32, clip_seconds: f64, target_width: usize) -> Self {
        Self {
            sample_rate,
            clip_seconds,
            target_width,
            specs: WindowSpec::canonical(),
            mel_scale: MelScale::Slaney,
            log_floor: LOG_FLOOR,
        }
    }

    pub fn nominal_samples(&self) -> usize {
        (self.clip_seconds * f64::from(self.sample_rate)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for spec in &self.specs {
            spec.geometry(self.sample_rate)?;
        }
        if self.target_width == 0 {
            return Err(Error::Config("target_width must be positive".into()));
        }
        if !(self.clip_seconds > 0.0) {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Fit to the nominal length, then extract the three channels.
    pub fn extract(&self, w: &Waveform) -> Result<MelTensor> {
        let fitted = w.fit_length(self.nominal_samples());
        features::multires_with(&fitted, &self.specs, self.target_width, self.mel_scale, self.log_floor)
    }
}
