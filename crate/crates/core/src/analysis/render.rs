//! PNG output: attribution panels and block-indexed line charts.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::ig::AttributionMap;
use crate::dsp::MelTensor;
use crate::{Error, Result};

const CELL: u32 = 3;
const GAP: u32 = 6;
const ATTRIBUTION_GAMMA: f64 = 0.5;

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Serde(other.to_string()),
    })
}

/// Black-red-yellow-white ramp for `v` in [0, 1].
fn heat(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let r = (3.0 * v).min(1.0);
    let g = (3.0 * v - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * v - 2.0).clamp(0.0, 1.0);
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

fn gray(v: f64) -> Rgb<u8> {
    let g = (v.clamp(0.0, 1.0) * 255.0) as u8;
    Rgb([g, g, g])
}

fn unit_range(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// Summed absolute attribution per (mel, frame) cell.
pub fn attribution_magnitude(a: &AttributionMap) -> Vec<f64> {
    let (c, m, t) = a.shape;
    (0..m * t)
        .map(|i| (0..c).map(|ch| a.values[ch * m * t + i].abs()).sum())
        .collect()
}

/// Left: channel-0 log-mel (grayscale). Right: gamma-scaled |attribution|
/// heat map. Low frequencies at the bottom.
pub fn render_attribution(x: &MelTensor, a: &AttributionMap, path: &Path) -> Result<()> {
    if x.shape() != a.shape {
        return Err(Error::Domain(format!(
            "attribution shape {:?} differs from input shape {:?}",
            a.shape,
            x.shape()
        )));
    }
    let (_, m, t) = x.shape();
    let spec: Vec<f64> = x.channel(0).iter().map(|&v| v as f64).collect();
    let spec = unit_range(&spec);
    let mag = attribution_magnitude(a);
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let mag: Vec<f64> = mag
        .iter()
        .map(|v| if peak > 0.0 { (v / peak).powf(ATTRIBUTION_GAMMA) } else { 0.0 })
        .collect();
    let pw = t as u32 * CELL;
    let ph = m as u32 * CELL;
    let mut img = RgbImage::from_pixel(2 * pw + GAP, ph, Rgb([255, 255, 255]));
    for mel in 0..m {
        for frame in 0..t {
            let i = mel * t + frame;
            let y0 = (m - 1 - mel) as u32 * CELL;
            let x0 = frame as u32 * CELL;
            for dy in 0..CELL {
                for dx in 0..CELL {
                    img.put_pixel(x0 + dx, y0 + dy, gray(spec[i]));
                    img.put_pixel(pw + GAP + x0 + dx, y0 + dy, heat(mag[i]));
                }
            }
        }
    }
    save(&img, path)
}

/// A series of a line chart; `None` values leave a gap.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Vec<Option<f64>>,
    pub color: [u8; 3],
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=n {
        let x = x0 + (x1 - x0) * i / n;
        let y = y0 + (y1 - y0) * i / n;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

/// Line chart over evenly spaced categorical x positions with a fixed y
/// range; axes, horizontal grid every 0.1 and square markers.
pub fn line_chart(series: &[Series], y_range: (f64, f64)) -> Result<RgbImage> {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::EmptyInput("chart has no points".into()));
    }
    if !(y_range.1 > y_range.0) {
        return Err(Error::Domain(format!("empty y range {y_range:?}")));
    }
    let (w, h, margin) = (480u32, 320u32, 32i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (lo, hi) = y_range;
    let plot_w = w as i64 - 2 * margin;
    let plot_h = h as i64 - 2 * margin;
    let px = |i: usize| margin + if n > 1 { plot_w * i as i64 / (n as i64 - 1) } else { plot_w / 2 };
    let py = |v: f64| margin + ((1.0 - (v - lo) / (hi - lo)).clamp(0.0, 1.0) * plot_h as f64) as i64;
    let grid = Rgb([225, 225, 225]);
    let steps = ((hi - lo) / 0.1).round() as i64;
    for k in 0..=steps {
        let y = py(lo + k as f64 * 0.1);
        line(&mut img, (margin, y), (margin + plot_w, y), grid);
    }
    let axis = Rgb([0, 0, 0]);
    line(&mut img, (margin, margin), (margin, margin + plot_h), axis);
    line(&mut img, (margin, margin + plot_h), (margin + plot_w, margin + plot_h), axis);
    for i in 0..n {
        let x = px(i);
        line(&mut img, (x, margin + plot_h), (x, margin + plot_h + 4), axis);
    }
    for s in series {
        let c = Rgb(s.color);
        let mut prev: Option<(i64, i64)> = None;
        for (i, v) in s.values.iter().enumerate() {
            match v {
                Some(v) => {
                    let p = (px(i), py(*v));
                    if let Some(q) = prev {
                        line(&mut img, q, p, c);
                    }
                    for dy in -3..=3 {
                        line(&mut img, (p.0 - 3, p.1 + dy), (p.0 + 3, p.1 + dy), c);
                    }
                    prev = Some(p);
                }
                None => prev = None,
            }
        }
    }
    Ok(img)
}

/// Charts laid out left to right in a single PNG, one per panel.
pub fn render_panels(panels: &[Vec<Series>], y_range: (f64, f64), path: &Path) -> Result<()> {
    let charts = panels
        .iter()
        .map(|p| line_chart(p, y_range))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = charts.first() else {
        return Err(Error::EmptyInput("no panels to render".into()));
    };
    let (w, h) = first.dimensions();
    let mut img = RgbImage::from_pixel(w * charts.len() as u32, h, Rgb([255, 255, 255]));
    for (i, c) in charts.iter().enumerate() {
        image::imageops::replace(&mut img, c, (i as u32 * w) as i64, 0);
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_ramp_endpoints() {
        assert_eq!(heat(0.0), Rgb([0, 0, 0]));
        assert_eq!(heat(1.0), Rgb([255, 255, 255]));
    }
}
