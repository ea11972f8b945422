//! Image-quality metrics. Everything is computed on `[0, 1]` images; volumes
//! stored in `[-1, 1]` are mapped with `(x + 1) / 2` first.

mod ffd;
mod noise;

use std::io::Write;

use crate::error::{config, dimension, Result};
use crate::mrisim::{Image, SliceVolume};
use crate::objectives::FeatureExtractor;

pub use ffd::{ffd, ffd_features, Ffd, DIAGONAL_LOADING};
pub use noise::{estimate_noise_level, NoiseEstimate, NoiseEstimator};

/// The value range mapping recorded at the top of every metrics CSV.
pub const RANGE_NOTE: &str = "# metrics on [0,1] images: x01 = (x + 1) / 2";

/// `10 log10(range^2 / MSE)`; `+inf` for identical images.
pub fn psnr(x: &Image, y: &Image, data_range: f64) -> Result<f64> {
    x.same_shape(y)?;
    if !(data_range > 0.0) {
        return Err(config(format!("data range {data_range} must be positive")));
    }
    let mse = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| g[i] * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Windowed SSIM for `[0, 1]` images: 11x11 Gaussian window, sigma 1.5,
/// averaged over every window that fits inside the image.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    x.same_shape(y)?;
    let (h, w) = (x.height, x.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(config(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a * b).collect::<Vec<_>>();
    let mx = filter_valid(&x.data, h, w, &g);
    let my = filter_valid(&y.data, h, w, &g);
    let sxx = filter_valid(&prod(&x.data, &x.data), h, w, &g);
    let syy = filter_valid(&prod(&y.data, &y.data), h, w, &g);
    let sxy = filter_valid(&prod(&x.data, &y.data), h, w, &g);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mx[i], my[i]);
            let vx = sxx[i] - mx * mx;
            let vy = syy[i] - my * my;
            let cxy = sxy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub const PSIM_C: f64 = 1e-4;

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height as isize, img.width as isize);
    let at = |r: isize, c: isize| img.at(r.clamp(0, h - 1) as usize, c.clamp(0, w - 1) as usize);
    let mut out = Vec::with_capacity(img.data.len());
    for r in 0..h {
        for c in 0..w {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Mean gradient-magnitude similarity, a lightweight stand-in for PSIM.
pub fn psim_lite(x: &Image, y: &Image) -> Result<f64> {
    x.same_shape(y)?;
    let gx = sobel_magnitude(x);
    let gy = sobel_magnitude(y);
    let n = gx.len() as f64;
    Ok(gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (2.0 * a * b + PSIM_C) / (a * a + b * b + PSIM_C))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineDiversity {
    /// Mean cosine over unordered pairs of the usable maps.
    pub mean: f64,
    /// Indices of zero-norm maps left out.
    pub excluded: Vec<usize>,
}

/// Mean pairwise `A.B / (|A| |B|)` over flattened feature maps.
pub fn feature_cosine_diversity(maps: &[Vec<f64>]) -> Result<CosineDiversity> {
    if let Some(m) = maps.iter().find(|m| m.len() != maps[0].len()) {
        return Err(dimension(format!("feature maps of length {} and {}", maps[0].len(), m.len())));
    }
    let norms: Vec<f64> = maps.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let excluded: Vec<usize> = (0..maps.len()).filter(|&i| norms[i] == 0.0).collect();
    let kept: Vec<usize> = (0..maps.len()).filter(|&i| norms[i] > 0.0).collect();
    if kept.len() < 2 {
        return Err(config("need at least two nonzero feature maps"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in kept.iter().enumerate() {
        for &j in &kept[a + 1..] {
            let dot: f64 = maps[i].iter().zip(&maps[j]).map(|(x, y)| x * y).sum();
            total += dot / (norms[i] * norms[j]);
            pairs += 1;
        }
    }
    Ok(CosineDiversity {
        mean: total / pairs as f64,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceMetrics {
    pub slice: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub psim_lite: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Mean over slices; `+inf` if any slice is reproduced exactly.
    pub psnr: f64,
    pub ssim: f64,
    /// Feature Fréchet distance between the two slice sets.
    pub ffd: Ffd,
    pub psim_lite: f64,
    pub per_slice: Vec<SliceMetrics>,
}

/// Compares slice sets given in `[-1, 1]`.
pub fn evaluate_slices(reference: &[Image], recon: &[Image], phi: &FeatureExtractor<f64>) -> Result<MetricReport> {
    if reference.len() != recon.len() || reference.is_empty() {
        return Err(dimension(format!("{} reference vs {} reconstructed slices", reference.len(), recon.len())));
    }
    let a: Vec<Image> = reference.iter().map(Image::to_unit_range).collect();
    let b: Vec<Image> = recon.iter().map(Image::to_unit_range).collect();
    let per_slice = a
        .iter()
        .zip(&b)
        .enumerate()
        .map(|(i, (x, y))| {
            Ok(SliceMetrics {
                slice: i,
                psnr: psnr(x, y, 1.0)?,
                ssim: ssim(x, y)?,
                psim_lite: psim_lite(x, y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_slice.len() as f64;
    Ok(MetricReport {
        psnr: per_slice.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: per_slice.iter().map(|s| s.ssim).sum::<f64>() / n,
        psim_lite: per_slice.iter().map(|s| s.psim_lite).sum::<f64>() / n,
        ffd: ffd(&a, &b, phi)?,
        per_slice,
    })
}

pub fn evaluate_volumes(reference: &SliceVolume, recon: &SliceVolume, phi: &FeatureExtractor<f64>) -> Result<MetricReport> {
    if (reference.depth, reference.height, reference.width) != (recon.depth, recon.height, recon.width) {
        return Err(dimension("reference and reconstruction volumes differ in shape"));
    }
    let a: Vec<Image> = (0..reference.depth).map(|z| reference.slice(z)).collect();
    let b: Vec<Image> = (0..recon.depth).map(|z| recon.slice(z)).collect();
    evaluate_slices(&a, &b, phi)
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// One row per slice and a summary row.
pub fn write_report_csv(mut w: impl Write, r: &MetricReport) -> Result<()> {
    writeln!(w, "{RANGE_NOTE}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slice", "psnr_db", "ssim", "psim_lite", "ffd"])?;
    for s in &r.per_slice {
        out.write_record([
            s.slice.to_string(),
            fmt_db(s.psnr),
            format!("{:.6}", s.ssim),
            format!("{:.6}", s.psim_lite),
            String::new(),
        ])?;
    }
    let ffd = if r.ffd.loaded {
        format!("{:.6} (loaded)", r.ffd.value)
    } else {
        format!("{:.6}", r.ffd.value)
    };
    out.write_record([
        "mean".to_string(),
        fmt_db(r.psnr),
        format!("{:.6}", r.ssim),
        format!("{:.6}", r.psim_lite),
        ffd,
    ])?;
    out.flush()?;
    Ok(())
}
