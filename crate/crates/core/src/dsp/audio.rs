use std::fs::File;
use std::path::Path;

use audioadapter_buffers::direct::InterleavedSlice;
use rubato::{
    Async, Fft, FixedAsync, FixedSync, Resampler, SincInterpolationParameters,
    SincInterpolationType, WindowFunction,
};
use serde::{Deserialize, Serialize};
use symphonia::core::codecs::audio::AudioDecoderOptions;
use symphonia::core::formats::probe::Hint;
use symphonia::core::formats::{FormatOptions, TrackType};
use symphonia::core::io::MediaSourceStream;
use symphonia::core::meta::MetadataOptions;

use crate::{Error, Result};

/// Mono audio at a known sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// `seconds` of silence.
    pub fn silence(seconds: f64, sample_rate: u32) -> Result<Self> {
        let n = (seconds * f64::from(sample_rate)).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    /// Pure sine of the given frequency and peak amplitude.
    pub fn sine(freq_hz: f64, seconds: f64, sample_rate: u32, amplitude: f32) -> Result<Self> {
        let n = (seconds * f64::from(sample_rate)).round() as usize;
        let sr = f64::from(sample_rate);
        let samples = (0..n)
            .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / sr).sin() as f32)
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Zero-pad on the right or crop to exactly `n` samples.
    pub fn fit_length(&self, n: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(n.max(1), 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f32) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, x| m.max(x.abs()))
    }
}

/// Decode `path` (WAV, AIFF, OGG/Vorbis, or Sun `.au`), downmix to mono and
/// resample to `target_sr`. Output is peak-normalised only when it would
/// otherwise exceed unit amplitude.
pub fn load_audio(path: &Path, target_sr: u32) -> Result<Waveform> {
    if target_sr == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let (mono, source_sr) = if ext.as_deref() == Some("au") {
        decode_au(path)?
    } else {
        decode_symphonia(path, ext.as_deref())?
    };
    if mono.is_empty() {
        return Err(Error::EmptyInput(format!("{} contains no audio", path.display())));
    }
    let mut samples = if source_sr == target_sr {
        mono
    } else {
        resample(&mono, source_sr, target_sr)?
    };
    let peak = samples.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|x| *x /= peak);
    }
    Waveform::new(samples, target_sr)
}

fn decode_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    let inv = 1.0 / channels as f32;
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() * inv)
        .collect()
}

fn decode_symphonia(path: &Path, ext: Option<&str>) -> Result<(Vec<f32>, u32)> {
    let file = File::open(path).map_err(|e| decode_error(path, e.to_string()))?;
    let mss = MediaSourceStream::new(Box::new(file), Default::default());
    let mut hint = Hint::new();
    if let Some(ext) = ext {
        hint.with_extension(ext);
    }
    let mut format = symphonia::default::get_probe()
        .probe(&hint, mss, FormatOptions::default(), MetadataOptions::default())
        .map_err(|e| decode_error(path, e.to_string()))?;
    let track = format
        .default_track(TrackType::Audio)
        .ok_or_else(|| decode_error(path, "no audio track"))?;
    let track_id = track.id;
    let params = track
        .codec_params
        .as_ref()
        .and_then(|p| p.audio())
        .ok_or_else(|| decode_error(path, "track has no audio codec parameters"))?;
    let mut decoder = symphonia::default::get_codecs()
        .make_audio_decoder(params, &AudioDecoderOptions::default())
        .map_err(|e| decode_error(path, e.to_string()))?;

    let mut mono = Vec::new();
    let mut rate = None;
    let mut scratch: Vec<f32> = Vec::new();
    loop {
        let packet = match format.next_packet() {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(e) => return Err(decode_error(path, e.to_string())),
        };
        if packet.track_id != track_id {
            continue;
        }
        let buf = decoder
            .decode(&packet)
            .map_err(|e| decode_error(path, e.to_string()))?;
        let spec = buf.spec();
        rate.get_or_insert(spec.rate());
        let channels = spec.channels().count().max(1);
        scratch.resize(buf.samples_interleaved(), 0.0);
        buf.copy_to_slice_interleaved(&mut scratch);
        mono.extend(downmix(&scratch, channels));
    }
    let rate = rate.ok_or_else(|| Error::EmptyInput(format!("{} contains no audio", path.display())))?;
    Ok((mono, rate))
}

/// Sun/NeXT `.au` (big-endian header; linear PCM and float encodings).
fn decode_au(path: &Path) -> Result<(Vec<f32>, u32)> {
    let bytes = std::fs::read(path).map_err(|e| decode_error(path, e.to_string()))?;
    let be = |o: usize| -> Option<u32> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    };
    if be(0) != Some(0x2e73_6e64) {
        return Err(decode_error(path, "missing .snd magic"));
    }
    let header = (|| Some((be(4)?, be(8)?, be(12)?, be(16)?, be(20)?)))()
        .ok_or_else(|| decode_error(path, "truncated header"))?;
    let (offset, size, encoding, rate, channels) = header;
    let offset = offset as usize;
    if offset > bytes.len() || channels == 0 || rate == 0 {
        return Err(decode_error(path, "invalid header fields"));
    }
    let end = if size == u32::MAX {
        bytes.len()
    } else {
        (offset + size as usize).min(bytes.len())
    };
    let data = &bytes[offset..end];
    let interleaved: Vec<f32> = match encoding {
        2 => data.iter().map(|&b| f32::from(b as i8) / 128.0).collect(),
        3 => data
            .chunks_exact(2)
            .map(|c| f32::from(i16::from_be_bytes([c[0], c[1]])) / 32768.0)
            .collect(),
        4 => data
            .chunks_exact(3)
            .map(|c| (i32::from_be_bytes([c[0], c[1], c[2], 0]) >> 8) as f32 / 8_388_608.0)
            .collect(),
        5 => data
            .chunks_exact(4)
            .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f32 / 2_147_483_648.0)
            .collect(),
        6 => data
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        7 => data
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        other => return Err(decode_error(path, format!("unsupported AU encoding {other}"))),
    };
    Ok((downmix(&interleaved, channels as usize), rate))
}

/// Band-limited conversion between two fixed rates.
pub fn resample(samples: &[f32], from_sr: u32, to_sr: u32) -> Result<Vec<f32>> {
    if from_sr == 0 || to_sr == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if from_sr == to_sr || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let mut resampler = Fft::<f32>::new(from_sr as usize, to_sr as usize, 1024, 1, FixedSync::Both)
        .map_err(|e| Error::Config(format!("resampler construction failed: {e}")))?;
    run_resampler(&mut resampler, samples)
}

/// Resample by an arbitrary `ratio` (output rate / input rate).
pub fn resample_by_ratio(samples: &[f32], ratio: f64) -> Result<Vec<f32>> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Domain(format!("resampling ratio must be positive, got {ratio}")));
    }
    if (ratio - 1.0).abs() < 1e-12 || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let params = SincInterpolationParameters::new(128, WindowFunction::BlackmanHarris2)
        .oversampling_factor(256)
        .interpolation(SincInterpolationType::Linear);
    let mut resampler = Async::<f32>::new_sinc(ratio, 1.1, &params, 1024, 1, FixedAsync::Input)
        .map_err(|e| Error::Config(format!("resampler construction failed: {e}")))?;
    run_resampler(&mut resampler, samples)
}

fn run_resampler(resampler: &mut dyn Resampler<f32>, samples: &[f32]) -> Result<Vec<f32>> {
    let input = InterleavedSlice::new(samples, 1, samples.len())
        .map_err(|e| Error::Config(format!("resampler input: {e}")))?;
    let out = resampler
        .process_all(&input, samples.len(), None)
        .map_err(|e| Error::Numerical(format!("resampling failed: {e}")))?;
    Ok(out.take_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(Waveform::new(vec![], 22_050), Err(Error::EmptyInput(_))));
        assert!(Waveform::new(vec![0.0, f32::NAN], 22_050).is_err());
    }

    #[test]
    fn fit_length_pads_and_crops() {
        let w = Waveform::new(vec![1.0; 10], 100).unwrap();
        assert_eq!(w.fit_length(15).samples()[10..], [0.0; 5]);
        assert_eq!(w.fit_length(4).len(), 4);
    }

    #[test]
    fn resample_length_matches_rate_ratio() {
        let x = vec![0.1f32; 16_000 * 2];
        let y = resample(&x, 16_000, 22_050).unwrap();
        assert_eq!(y.len(), 44_100);
    }

    #[test]
    fn au_decoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.au");
        let mut bytes = Vec::new();
        for v in [0x2e73_6e64u32, 24, 8, 3, 22_050, 1] {
            bytes.extend(v.to_be_bytes());
        }
        for s in [16_384i16, -16_384, 0, 32_767] {
            bytes.extend(s.to_be_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let w = load_audio(&path, 22_050).unwrap();
        assert_eq!(w.samples(), &[0.5, -0.5, 0.0, 32_767.0 / 32_768.0]);
    }
}
