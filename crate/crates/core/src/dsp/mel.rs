use serde::{Deserialize, Serialize};

use super::WindowSpec;
use crate::{Error, Result};

/// Mel scale variant. `Slaney` is linear below 1 kHz and logarithmic above;
/// `Htk` is `2595 log10(1 + f/700)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    #[default]
    Slaney,
    Htk,
}

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn logstep() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
        MelScale::Slaney => {
            if hz >= MIN_LOG_HZ {
                MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / logstep()
            } else {
                hz / F_SP
            }
        }
    }
}

pub fn mel_to_hz(mel: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
        MelScale::Slaney => {
            if mel >= MIN_LOG_MEL {
                MIN_LOG_HZ * (logstep() * (mel - MIN_LOG_MEL)).exp()
            } else {
                F_SP * mel
            }
        }
    }
}

/// Triangular mel filters over the non-negative FFT bins, `n_mels` rows by
/// `fft_size / 2 + 1` columns, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankMatrix {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f32>,
    /// Hz centre of each filter.
    centers: Vec<f64>,
}

impl FilterbankMatrix {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_bins)
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.weights[mel * self.n_bins..(mel + 1) * self.n_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers
    }

    pub fn column_sum(&self, bin: usize) -> f64 {
        (0..self.n_mels)
            .map(|m| f64::from(self.weights[m * self.n_bins + bin]))
            .sum()
    }

    /// Project one power-spectrum frame onto the mel bands.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let row = self.row(m);
            *o = row
                .iter()
                .zip(power)
                .filter(|(w, _)| **w != 0.0)
                .map(|(w, p)| f64::from(*w) * p)
                .sum();
        }
    }
}

/// Slaney-normalised triangular filterbank spanning 0 Hz to Nyquist.
pub fn mel_filterbank(spec: &WindowSpec, sample_rate: u32) -> Result<FilterbankMatrix> {
    mel_filterbank_with(spec, sample_rate, MelScale::Slaney)
}

pub(crate) fn mel_filterbank_with(
    spec: &WindowSpec,
    sample_rate: u32,
    scale: MelScale,
) -> Result<FilterbankMatrix> {
    let geom = spec.geometry(sample_rate)?;
    let n_bins = geom.fft_size / 2 + 1;
    let n_mels = geom.n_mels;
    if n_mels > n_bins {
        return Err(Error::Config(format!(
            "{n_mels} mel filters exceed the {n_bins} FFT bins of a {}-point transform",
            geom.fft_size
        )));
    }
    let sr = f64::from(sample_rate);
    let fft_freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sr / geom.fft_size as f64)
        .collect();
    let mel_max = hz_to_mel(sr / 2.0, scale);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64, scale))
        .collect();

    let mut weights = vec![0.0f32; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            let w = rising.min(falling).max(0.0);
            weights[m * n_bins + k] = (w * norm) as f32;
        }
    }
    Ok(FilterbankMatrix {
        n_mels,
        n_bins,
        weights,
        centers: edges[1..=n_mels].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_for_2048_point_fft() {
        let spec = WindowSpec::new(25.0, 10.0).with_fft_size(2048);
        let fb = mel_filterbank(&spec, 22_050).unwrap();
        assert_eq!(fb.shape(), (128, 1025));
    }

    #[test]
    fn rows_are_single_nonnegative_bumps() {
        for sr in [22_050, 44_100] {
            for spec in WindowSpec::canonical() {
                let fb = mel_filterbank(&spec, sr).unwrap();
                for m in 0..fb.n_mels() {
                    let row = fb.row(m);
                    assert!(row.iter().all(|w| *w >= 0.0));
                    let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
                    assert!(!nz.is_empty(), "empty filter {m} at sr {sr}");
                    assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "non-contiguous filter {m}");
                    let peak = nz.iter().copied().max_by(|a, b| row[*a].total_cmp(&row[*b])).unwrap();
                    assert!(nz.iter().filter(|&&k| k < peak).all(|&k| row[k] <= row[k + 1]));
                    assert!(nz.iter().filter(|&&k| k > peak).all(|&k| row[k] <= row[k - 1]));
                }
            }
        }
    }

    #[test]
    fn no_spectral_gaps_between_first_and_last_centre() {
        let spec = WindowSpec::new(25.0, 10.0);
        let fb = mel_filterbank(&spec, 22_050).unwrap();
        let fft = spec.geometry(22_050).unwrap().fft_size as f64;
        let c = fb.centers_hz();
        let first = (c[0] * fft / 22_050.0).ceil() as usize;
        let last = (c[127] * fft / 22_050.0).floor() as usize;
        for k in first..=last {
            assert!(fb.column_sum(k) > 0.0, "gap at bin {k}");
        }
    }

    #[test]
    fn too_many_filters_is_config_error() {
        let spec = WindowSpec { n_mels: 200, ..WindowSpec::new(5.0, 2.0).with_fft_size(256) };
        assert!(matches!(mel_filterbank(&spec, 22_050), Err(Error::Config(_))));
    }

    #[test]
    fn scales_round_trip() {
        for scale in [MelScale::Slaney, MelScale::Htk] {
            for hz in [0.0, 440.0, 999.0, 1000.0, 4000.0, 11_025.0] {
                assert!((mel_to_hz(hz_to_mel(hz, scale), scale) - hz).abs() < 1e-6);
            }
        }
    }
}
