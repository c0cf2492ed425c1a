use serde::{Deserialize, Serialize};

use super::mel::mel_filterbank_with;
use super::stft::power_spectrogram;
use super::{MelScale, WindowSpec, Waveform};
use crate::{Error, Result};

/// Floor added before the logarithm so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// Single-channel log-mel matrix, mel-major (`n_mels` rows of `n_frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub data: Vec<f32>,
}

impl Spectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.data[mel * self.n_frames + frame]
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.data[mel * self.n_frames..(mel + 1) * self.n_frames]
    }
}

/// `(3, 128, W)` feature tensor, channel-major then mel then time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelTensor {
    channels: usize,
    n_mels: usize,
    width: usize,
    data: Vec<f32>,
}

impl MelTensor {
    pub fn from_vec(data: Vec<f32>, channels: usize, n_mels: usize, width: usize) -> Result<Self> {
        if data.len() != channels * n_mels * width {
            return Err(Error::Integrity(format!(
                "tensor data has {} values, shape ({channels}, {n_mels}, {width}) needs {}",
                data.len(),
                channels * n_mels * width
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite tensor value at flat index {i}")));
        }
        Ok(Self {
            channels,
            n_mels,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, n_mels: usize, width: usize) -> Self {
        Self {
            channels,
            n_mels,
            width,
            data: vec![0.0; channels * n_mels * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.n_mels, self.width)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_mels * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, mel: usize, t: usize) -> f32 {
        self.data[(c * self.n_mels + mel) * self.width + t]
    }

    /// Same shape, every channel filled with its own minimum.
    pub fn channel_minimum(&self) -> MelTensor {
        let n = self.n_mels * self.width;
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            let m = self.channel(c).iter().copied().fold(f32::INFINITY, f32::min);
            data.extend(std::iter::repeat_n(m, n));
        }
        MelTensor { data, ..*self }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8], channels: usize, n_mels: usize, width: usize) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Integrity(format!("record length {} is not a multiple of 4", bytes.len())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::from_vec(data, channels, n_mels, width)
    }
}

/// Log-mel matrix of one channel with the default Slaney scale and floor.
pub fn log_mel_channel(w: &Waveform, spec: &WindowSpec) -> Result<Spectrogram> {
    log_mel_channel_with(w, spec, MelScale::Slaney, LOG_FLOOR)
}

pub(crate) fn log_mel_channel_with(
    w: &Waveform,
    spec: &WindowSpec,
    scale: MelScale,
    floor: f64,
) -> Result<Spectrogram> {
    let geom = spec.geometry(w.sample_rate())?;
    let fb = mel_filterbank_with(spec, w.sample_rate(), scale)?;
    let power = power_spectrogram(w.samples(), &geom)?;
    let n_frames = power.len();
    let n_mels = fb.n_mels();
    let mut data = vec![0.0f32; n_mels * n_frames];
    let mut mel = vec![0.0f64; n_mels];
    for (t, frame) in power.iter().enumerate() {
        fb.apply(frame, &mut mel);
        for (m, v) in mel.iter().enumerate() {
            data[m * n_frames + t] = (v + floor).ln() as f32;
        }
    }
    Ok(Spectrogram {
        n_mels,
        n_frames,
        data,
    })
}

/// Bilinear resize along time only; half-pixel centres, so equal widths are
/// an exact identity.
pub fn resize_time(s: &Spectrogram, target_width: usize) -> Spectrogram {
    if s.n_frames == target_width {
        return s.clone();
    }
    let scale = s.n_frames as f64 / target_width as f64;
    let taps: Vec<(usize, usize, f32)> = (0..target_width)
        .map(|j| {
            let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (s.n_frames - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(s.n_frames - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect();
    let mut data = Vec::with_capacity(s.n_mels * target_width);
    for m in 0..s.n_mels {
        let row = s.row(m);
        data.extend(taps.iter().map(|&(i0, i1, a)| row[i0] * (1.0 - a) + row[i1] * a));
    }
    Spectrogram {
        n_mels: s.n_mels,
        n_frames: target_width,
        data,
    }
}

/// Stack one resized log-mel channel per spec. Not normalised.
pub fn multires_melspec(w: &Waveform, specs: &[WindowSpec], target_width: usize) -> Result<MelTensor> {
    multires_with(w, specs, target_width, MelScale::Slaney, LOG_FLOOR)
}

pub(crate) fn multires_with(
    w: &Waveform,
    specs: &[WindowSpec],
    target_width: usize,
    scale: MelScale,
    floor: f64,
) -> Result<MelTensor> {
    if specs.len() != 3 {
        return Err(Error::Config(format!("expected 3 window specs, got {}", specs.len())));
    }
    if target_width == 0 {
        return Err(Error::Config("target width must be positive".into()));
    }
    let n_mels = specs[0].n_mels;
    if specs.iter().any(|s| s.n_mels != n_mels) {
        return Err(Error::Config("all channels must use the same number of mel bands".into()));
    }
    let mut data = Vec::with_capacity(3 * n_mels * target_width);
    for spec in specs {
        let ch = log_mel_channel_with(w, spec, scale, floor)?;
        data.extend(resize_time(&ch, target_width).data);
    }
    MelTensor::from_vec(data, 3, n_mels, target_width)
}

/// Per-channel z-score. Channels with standard deviation below `1e-8` are
/// zeroed.
pub fn normalize_tensor(t: &MelTensor) -> MelTensor {
    let n = t.n_mels * t.width;
    let mut out = t.clone();
    for c in 0..t.channels {
        let ch = t.channel(c);
        let mean = ch.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let var = ch.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let dst = &mut out.data[c * n..(c + 1) * n];
        if std < 1e-8 {
            dst.fill(0.0);
        } else {
            for (d, &v) in dst.iter_mut().zip(ch) {
                *d = ((f64::from(v) - mean) / std) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, sr: u32, seed: u64) -> Waveform {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        Waveform::new((0..n).map(|_| rng.random_range(-0.3f32..0.3)).collect(), sr).unwrap()
    }

    #[test]
    fn frame_count_is_ceil_len_over_hop() {
        let w = Waveform::silence(5.0, 44_100).unwrap();
        let s = log_mel_channel(&w, &WindowSpec::new(25.0, 10.0)).unwrap();
        assert_eq!(s.n_frames, 500);
        let w = noise(22_050 + 7, 22_050, 1);
        let s = log_mel_channel(&w, &WindowSpec::new(50.0, 25.0)).unwrap();
        assert_eq!(s.n_frames, (22_050usize + 7).div_ceil(551));
    }

    #[test]
    fn silence_is_log_floor() {
        let w = Waveform::silence(1.0, 22_050).unwrap();
        let s = log_mel_channel(&w, &WindowSpec::new(25.0, 10.0)).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(s.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let w = noise(22_050, 22_050, 3);
        let spec = WindowSpec::new(25.0, 10.0);
        let a = log_mel_channel(&w, &spec).unwrap();
        let b = log_mel_channel(&w.scaled(2.0), &spec).unwrap();
        let ln4 = 4f32.ln();
        for (x, y) in a.data.iter().zip(&b.data) {
            if *x > -12.0 {
                assert!((y - x - ln4).abs() < 1e-3, "{x} -> {y}");
            }
        }
    }

    #[test]
    fn too_short_waveform_rejected() {
        let w = noise(100, 22_050, 4);
        assert!(matches!(
            log_mel_channel(&w, &WindowSpec::new(25.0, 10.0)),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn resize_identity_and_endpoints() {
        let s = Spectrogram { n_mels: 2, n_frames: 4, data: vec![0., 1., 2., 3., 4., 5., 6., 7.] };
        assert_eq!(resize_time(&s, 4), s);
        let up = resize_time(&s, 8);
        assert_eq!(up.row(0)[0], 0.0);
        assert_eq!(up.row(0)[7], 3.0);
        let down = resize_time(&s, 2);
        assert_eq!(down.row(1), &[4.5, 6.5]);
    }

    #[test]
    fn multires_shapes_and_determinism() {
        let w = noise(4 * 22_050, 22_050, 5);
        let a = multires_melspec(&w, &WindowSpec::canonical(), 250).unwrap();
        assert_eq!(a.shape(), (3, 128, 250));
        let b = multires_melspec(&w, &WindowSpec::canonical(), 250).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(multires_melspec(&w, &WindowSpec::canonical()[..2], 250).is_err());
    }

    #[test]
    fn normalize_zscores_and_zeroes_constant_channels() {
        let w = noise(22_050, 22_050, 6);
        let mut t = multires_melspec(&w, &WindowSpec::canonical(), 64).unwrap();
        let n = 128 * 64;
        t.data_mut()[2 * n..].fill(-3.0);
        let z = normalize_tensor(&t);
        for c in 0..2 {
            let ch = z.channel(c);
            let mean = ch.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
            let std = (ch.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(mean.abs() < 1e-4 && (std - 1.0).abs() < 1e-4);
        }
        assert!(z.channel(2).iter().all(|&v| v == 0.0));
        let zz = normalize_tensor(&z);
        assert!(z.data().iter().zip(zz.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let w = noise(22_050, 22_050, 8);
        let t = multires_melspec(&w, &WindowSpec::canonical(), 32).unwrap();
        let back = MelTensor::from_le_bytes(&t.to_le_bytes(), 3, 128, 32).unwrap();
        assert_eq!(t, back);
    }
}
