//! Seeded tone-burst corpora for tests, benches and smoke runs.
//!
//! Each class owns a frequency band; a clip is a single windowed burst in
//! its class band over low-level noise. Everything is reproducible from the
//! corpus seed.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{ClipEntry, DatasetKind, DatasetManifest};
use super::store::AudioSource;
use crate::dsp::Waveform;
use crate::{seed, Error, Result};

/// Generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneSetConfig {
    pub n_clips: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub seconds: f64,
    pub sample_rate: u32,
    pub noise_level: f32,
}

impl ToneSetConfig {
    pub fn new(n_clips: usize, n_classes: usize, seed: u64) -> Self {
        let dsp = DatasetKind::Synthetic.default_dsp();
        Self {
            n_clips,
            n_classes,
            seed,
            seconds: dsp.clip_seconds,
            sample_rate: dsp.sample_rate,
            noise_level: 0.01,
        }
    }
}

/// Where and what the burst is in one clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub freq_hz: f64,
    pub onset_s: f64,
    pub duration_s: f64,
    pub amplitude: f32,
    pub noise_seed: u64,
}

impl Burst {
    pub fn offset_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

/// A generated corpus: a manifest plus the recipe for every clip.
#[derive(Clone, Debug)]
pub struct ToneSet {
    pub config: ToneSetConfig,
    pub manifest: DatasetManifest,
    bursts: HashMap<String, Burst>,
}

/// Centre frequency of a class band: log-spaced between 300 Hz and 0.35·sr.
pub fn class_frequency(class: usize, n_classes: usize, sample_rate: u32) -> f64 {
    let lo: f64 = 300.0;
    let hi = 0.35 * sample_rate as f64;
    if n_classes <= 1 {
        return lo;
    }
    lo * (hi / lo).powf(class as f64 / (n_classes - 1) as f64)
}

impl ToneSet {
    pub fn generate(config: ToneSetConfig) -> Result<Self> {
        if config.n_classes == 0 || config.n_clips < config.n_classes.max(5) {
            return Err(Error::Config(format!(
                "tone set needs one clip per class and per fold ({} clips, {} classes, 5 folds)",
                config.n_clips, config.n_classes
            )));
        }
        if !(config.seconds > 0.0) || config.sample_rate == 0 {
            return Err(Error::Config("tone set needs positive duration and sample rate".into()));
        }
        let mut rng = seed::rng(seed::derive(config.seed, 0x544F_4E45));
        let mut rows = Vec::with_capacity(config.n_clips);
        let mut bursts = HashMap::with_capacity(config.n_clips);
        let width = (config.n_classes as f64).log10().max(1.0) as usize + 1;
        for i in 0..config.n_clips {
            let class = i % config.n_classes;
            let id = format!("tone-{i:05}");
            let centre = class_frequency(class, config.n_classes, config.sample_rate);
            let burst = Burst {
                freq_hz: centre * rng.random_range(0.97..1.03),
                onset_s: config.seconds * rng.random_range(0.05..0.45),
                duration_s: config.seconds * rng.random_range(0.25..0.45),
                amplitude: rng.random_range(0.3..0.9),
                noise_seed: rng.random(),
            };
            bursts.insert(id.clone(), burst);
            rows.push((
                id.clone(),
                PathBuf::from(format!("{id}.synthetic")),
                format!("tone-{class:0width$}"),
                Some((i % 5) as u32 + 1),
                config.seconds,
            ));
        }
        let manifest = DatasetManifest::from_rows(
            DatasetKind::Synthetic,
            PathBuf::from("synthetic"),
            rows,
            Some(config.sample_rate),
        )?;
        Ok(Self {
            config,
            manifest,
            bursts,
        })
    }

    pub fn burst(&self, clip_id: &str) -> Option<&Burst> {
        self.bursts.get(clip_id)
    }

    /// Render a clip at its native rate.
    pub fn render(&self, clip_id: &str) -> Result<Waveform> {
        let b = self
            .burst(clip_id)
            .ok_or_else(|| Error::Ingestion(format!("unknown synthetic clip `{clip_id}`")))?;
        let sr = self.config.sample_rate as f64;
        let n = (self.config.seconds * sr).round() as usize;
        let mut rng = seed::rng(b.noise_seed);
        let noise = Normal::new(0.0f32, self.config.noise_level.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let start = (b.onset_s * sr) as usize;
        let len = ((b.duration_s * sr) as usize).max(1);
        let samples = (0..n)
            .map(|t| {
                let mut v = noise.sample(&mut rng);
                if t >= start && t < start + len {
                    let u = (t - start) as f64 / len as f64;
                    let env = (std::f64::consts::PI * u).sin().powi(2);
                    let phase = 2.0 * std::f64::consts::PI * b.freq_hz * t as f64 / sr;
                    v += (b.amplitude as f64 * env * phase.sin()) as f32;
                }
                v
            })
            .collect();
        Waveform::new(samples, self.config.sample_rate)
    }
}

impl AudioSource for ToneSet {
    fn load(&self, entry: &ClipEntry, sample_rate: u32) -> Result<Waveform> {
        let w = self.render(&entry.clip_id)?;
        if sample_rate == self.config.sample_rate {
            return Ok(w);
        }
        let resampled = crate::dsp::resample(w.samples(), self.config.sample_rate, sample_rate)?;
        Waveform::new(resampled, sample_rate)
    }
}
