use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FrameGeometry;
use crate::{Error, Result};

/// Periodic Hann window of length `n`.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// `win_length`-point Hann window centred inside an `n_fft` frame.
fn padded_window(win_length: usize, n_fft: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let lpad = (n_fft - win_length.min(n_fft)) / 2;
    for (i, v) in hann(win_length.min(n_fft)).into_iter().enumerate() {
        w[lpad + i] = v;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Padding {
    Reflect,
    Zero,
}

fn pad_signal(x: &[f32], pad: usize, mode: Padding) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    let at = |i: isize| -> f64 {
        match mode {
            Padding::Zero => {
                if i < 0 || i as usize >= n {
                    0.0
                } else {
                    f64::from(x[i as usize])
                }
            }
            Padding::Reflect => {
                if n == 1 {
                    return f64::from(x[0]);
                }
                let period = 2 * (n as isize - 1);
                let mut j = i.rem_euclid(period);
                if j >= n as isize {
                    j = period - j;
                }
                f64::from(x[j as usize])
            }
        }
    };
    for i in -(pad as isize)..(n + pad) as isize {
        out.push(at(i));
    }
    out
}

/// Complex STFT frames, one `Vec` of `n_fft / 2 + 1` bins per frame.
#[derive(Clone, Debug)]
pub struct ComplexFrames {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub frames: Vec<Vec<Complex<f64>>>,
}

impl ComplexFrames {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Centred STFT with `n_frames` frames; frame `t` is centred on sample
/// `t * hop` of the unpadded signal.
pub(crate) fn stft_frames(
    x: &[f32],
    win_length: usize,
    hop: usize,
    n_fft: usize,
    n_frames: usize,
    padding: Padding,
) -> ComplexFrames {
    let pad = n_fft / 2;
    let padded = pad_signal(x, pad, padding);
    let window = padded_window(win_length, n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let n_bins = n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = padded.get(start + i).copied().unwrap_or(0.0);
            *b = Complex::new(v * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..n_bins].to_vec());
    }
    ComplexFrames {
        n_fft,
        win_length,
        hop,
        frames,
    }
}

/// Centred, zero-padded STFT covering the whole signal (`1 + len / hop`
/// frames), suitable for resynthesis.
pub fn stft(x: &[f32], win_length: usize, hop: usize, n_fft: usize) -> ComplexFrames {
    let n_frames = 1 + x.len() / hop;
    stft_frames(x, win_length, hop, n_fft, n_frames, Padding::Zero)
}

/// Weighted overlap-add inverse of [`stft`], trimmed to `length` samples.
pub fn istft(frames: &ComplexFrames, length: usize) -> Vec<f32> {
    let n_fft = frames.n_fft;
    let hop = frames.hop;
    let n_bins = frames.n_bins();
    let window = padded_window(frames.win_length, n_fft);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let total = n_fft + hop * frames.frames.len().saturating_sub(1);
    let mut out = vec![0.0f64; total];
    let mut norm = vec![0.0f64; total];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    for (t, frame) in frames.frames.iter().enumerate() {
        buf[..n_bins].copy_from_slice(frame);
        for k in n_bins..n_fft {
            buf[k] = frame[n_fft - k].conj();
        }
        buf[0].im = 0.0;
        if n_fft.is_multiple_of(2) {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * hop;
        for i in 0..n_fft {
            out[start + i] += buf[i].re / n_fft as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let pad = n_fft / 2;
    (0..length)
        .map(|i| {
            let j = i + pad;
            if j < total && norm[j] > 1e-8 {
                (out[j] / norm[j]) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Power spectrogram `|X|^2` with Hann window, centred reflect-padded frames
/// and `ceil(len / hop)` frames. Returned frame-major.
pub fn power_spectrogram(x: &[f32], geom: &FrameGeometry) -> Result<Vec<Vec<f64>>> {
    if x.len() < geom.win_length.max(2) || x.len() <= geom.fft_size / 2 {
        return Err(Error::TooShort {
            samples: x.len(),
            required: geom.win_length.max(geom.fft_size / 2 + 1),
        });
    }
    let n_frames = x.len().div_ceil(geom.hop_length);
    let frames = stft_frames(
        x,
        geom.win_length,
        geom.hop_length,
        geom.fft_size,
        n_frames,
        Padding::Reflect,
    );
    Ok(frames
        .frames
        .into_iter()
        .map(|f| f.into_iter().map(|c| c.norm_sqr()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding_matches_numpy() {
        let p = pad_signal(&[1.0, 2.0, 3.0, 4.0], 2, Padding::Reflect);
        assert_eq!(p, vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn stft_istft_round_trip() {
        let x: Vec<f32> = (0..5000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        let frames = stft(&x, 1024, 256, 1024);
        let y = istft(&frames, x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-4, "max reconstruction error {err}");
    }
}
