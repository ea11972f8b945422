//! Centered, orthonormal 2D DFT with the DC bin at `(H/2, W/2)`.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::image::ComplexImage;
use crate::error::{config, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_extents(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(config(format!("fft2c needs power-of-two extents, got {h}x{w}")));
    }
    Ok(())
}

/// Rotates both axes by half their extent; for even extents this is both
/// `fftshift` and `ifftshift`.
fn half_shift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..h {
        let rr = (r + h / 2) % h;
        for c in 0..w {
            out[rr * w + (c + w / 2) % w] = data[r * w + c];
        }
    }
    out
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = data[r * w + c];
        }
    }
    out
}

fn transform(img: &ComplexImage, direction: FftDirection) -> Result<ComplexImage> {
    let (h, w) = (img.height, img.width);
    check_extents(h, w)?;
    let mut buf = half_shift(&img.data, h, w);
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        p.plan_fft(w, direction).process(&mut buf);
        let mut t = transpose(&buf, h, w);
        p.plan_fft(h, direction).process(&mut t);
        buf = transpose(&t, w, h);
    });
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let data = half_shift(&buf, h, w).into_iter().map(|z| z * scale).collect();
    ComplexImage::new(h, w, data)
}

pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, FftDirection::Forward)
}

pub fn ifft2c(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, FftDirection::Inverse)
}
