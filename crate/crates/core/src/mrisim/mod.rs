//! Acquisition simulation: phantoms, centered FFT, undersampling, k-space
//! noise, zero-filled inversion and slice windowing.

mod fft;
mod image;
pub mod io;
mod mask;
mod phantom;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, dimension, Result};

pub use fft::{fft2c, ifft2c};
pub use image::{ComplexImage, Image};
pub use mask::{make_mask, target_count, Mask, MaskKind, MaskSpec};
pub use phantom::gen_phantom_volume;

/// Stack of real slices normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceVolume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `(D, H, W)`.
    pub voxels: Vec<f64>,
    /// Min/max before normalization.
    pub intensity_range: (f64, f64),
}

/// Voxels within this distance of -1 count as background.
pub const VOID_EPS: f64 = 1e-3;

impl SliceVolume {
    /// Maps `[min, max]` of `raw` onto `[-1, 1]`.
    pub fn normalized(depth: usize, height: usize, width: usize, raw: Vec<f64>) -> Self {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let voxels = raw
            .iter()
            .map(|&v| (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0))
            .collect();
        Self {
            depth,
            height,
            width,
            voxels,
            intensity_range: (lo, hi),
        }
    }

    pub fn from_voxels(depth: usize, height: usize, width: usize, voxels: Vec<f64>) -> Result<Self> {
        if voxels.len() != depth * height * width {
            return Err(dimension(format!(
                "{} voxels for a {depth}x{height}x{width} volume",
                voxels.len()
            )));
        }
        if height != width {
            return Err(config(format!("slices must be square, got {height}x{width}")));
        }
        let lo = voxels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = voxels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            depth,
            height,
            width,
            voxels,
            intensity_range: (lo, hi),
        })
    }

    pub fn slice(&self, z: usize) -> Image {
        let n = self.height * self.width;
        Image {
            height: self.height,
            width: self.width,
            data: self.voxels[z * n..(z + 1) * n].to_vec(),
        }
    }

    /// Fraction of the slice sitting at the background value.
    pub fn void_fraction(&self, z: usize) -> f64 {
        let s = self.slice(z);
        s.data.iter().filter(|&&v| v <= -1.0 + VOID_EPS).count() as f64 / s.data.len() as f64
    }
}

/// Measured spectrum `y = M ⊙ (F x + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSample {
    pub spectrum: ComplexImage,
    pub mask: Mask,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Masks the spectrum of `x` (with optional complex Gaussian noise whose
/// per-component std is `noise_sigma * max|F x|`) and returns it with the
/// real part of its zero-filled inversion.
pub fn degrade(x: &Image, mask: &Mask, noise_sigma: f64, seed: u64) -> Result<(KSpaceSample, Image)> {
    if (mask.height, mask.width) != (x.height, x.width) {
        return Err(dimension(format!(
            "mask {}x{} vs image {}x{}",
            mask.height, mask.width, x.height, x.width
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(config(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let full = fft2c(&ComplexImage::from_real(x))?;
    let std = noise_sigma * full.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = full
        .data
        .iter()
        .zip(&mask.bits)
        .map(|(&z, &keep)| {
            // draw for every bin so the noise field does not depend on the mask
            let e = if noise_sigma > 0.0 {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * std
            } else {
                Complex64::default()
            };
            if keep {
                z + e
            } else {
                Complex64::default()
            }
        })
        .collect();
    let spectrum = ComplexImage::new(x.height, x.width, data)?;
    let zero_filled = ifft2c(&spectrum)?.re();
    Ok((
        KSpaceSample {
            spectrum,
            mask: mask.clone(),
            noise_sigma,
            seed,
        },
        zero_filled,
    ))
}

/// `n` consecutive slices starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn center(&self) -> usize {
        self.start + self.len / 2
    }

    pub fn slices(&self, volume: &SliceVolume) -> Vec<Image> {
        (self.start..self.start + self.len).map(|z| volume.slice(z)).collect()
    }
}

/// Sliding windows of `n_slices`, dropping any window that touches a slice
/// whose background fraction exceeds `void_threshold`.
pub fn prepare_sequences(volume: &SliceVolume, n_slices: usize, void_threshold: f64) -> Result<Vec<Window>> {
    if !(3..=7).contains(&n_slices) {
        return Err(config(format!("n_slices {n_slices} outside 3..=7")));
    }
    if volume.depth < n_slices {
        return Err(config(format!("depth {} < window {n_slices}", volume.depth)));
    }
    let void: Vec<bool> = (0..volume.depth)
        .map(|z| volume.void_fraction(z) > void_threshold)
        .collect();
    Ok((0..=volume.depth - n_slices)
        .filter(|&s| !void[s..s + n_slices].iter().any(|&v| v))
        .map(|start| Window { start, len: n_slices })
        .collect())
}
