//! Weak-texture patch noise estimation: the noise variance is the smallest
//! eigenvalue of the covariance of flat patches, and "flat" is decided by a
//! threshold that itself scales with the current variance estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{config, Result};
use crate::mrisim::Image;

#[derive(Debug, Clone, Copy)]
pub struct NoiseEstimator {
    pub patch: usize,
    /// Quantile of the pure-noise texture statistic used as the threshold.
    pub confidence: f64,
    pub max_iterations: usize,
    /// Fewer selected patches than this sets `low_confidence`.
    pub min_patches: usize,
}

impl Default for NoiseEstimator {
    fn default() -> Self {
        Self {
            patch: 7,
            confidence: 1.0 - 1e-6,
            max_iterations: 10,
            min_patches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub sigma: f64,
    pub patches_used: usize,
    pub iterations: usize,
    pub low_confidence: bool,
}

/// Central-difference gradients at the patch interior, stacked as rows of
/// a `2 (p-2)^2 x p^2` operator.
fn gradient_operator(p: usize) -> DMatrix<f64> {
    let q = p - 2;
    let mut d = DMatrix::zeros(2 * q * q, p * p);
    for r in 0..q {
        for c in 0..q {
            let (rr, cc) = (r + 1, c + 1);
            let row = r * q + c;
            d[(row, rr * p + cc + 1)] = 0.5;
            d[(row, rr * p + cc - 1)] = -0.5;
            d[(q * q + row, (rr + 1) * p + cc)] = 0.5;
            d[(q * q + row, (rr - 1) * p + cc)] = -0.5;
        }
    }
    d
}

/// Largest eigenvalue of the 2x2 gradient covariance at the patch interior.
fn texture_strength(img: &Image, top: usize, left: usize, p: usize) -> f64 {
    let (mut hh, mut vv, mut hv) = (0.0, 0.0, 0.0);
    for r in top + 1..top + p - 1 {
        for c in left + 1..left + p - 1 {
            let gh = 0.5 * (img.at(r, c + 1) - img.at(r, c - 1));
            let gv = 0.5 * (img.at(r + 1, c) - img.at(r - 1, c));
            hh += gh * gh;
            vv += gv * gv;
            hv += gh * gv;
        }
    }
    let mean = 0.5 * (hh + vv);
    let rad = (0.25 * (hh - vv) * (hh - vv) + hv * hv).sqrt();
    mean + rad
}

fn smallest_cov_eigenvalue(patches: &[Vec<f64>], idx: &[usize]) -> f64 {
    let d = patches[0].len();
    let n = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in idx {
        for (m, v) in mean.iter_mut().zip(&patches[i]) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for &i in idx {
        for (c, (v, m)) in centered.iter_mut().zip(patches[i].iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centered[a];
            for b in a..d {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    SymmetricEigen::new(cov).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
}

impl NoiseEstimator {
    pub fn estimate(&self, img: &Image) -> Result<NoiseEstimate> {
        let p = self.patch;
        if img.height < 32 || img.width < 32 || p < 3 {
            return Err(config(format!(
                "noise estimation needs at least 32x32 pixels, got {}x{}",
                img.height, img.width
            )));
        }
        // pure Gaussian noise of variance s^2 gives |D y|^2 ~ s^2 Gamma(r/2, 2 tr/r)
        // approximately; the largest gradient-covariance eigenvalue is below it
        let d = gradient_operator(p);
        let dd = d.transpose() * &d;
        let eig = dd.clone().symmetric_eigenvalues();
        let top = eig.iter().copied().fold(0.0, f64::max);
        let rank = eig.iter().filter(|&&v| v > 1e-10 * top).count() as f64;
        let tr = dd.trace();
        let gamma = Gamma::new(rank / 2.0, rank / (2.0 * tr)).map_err(|e| config(e.to_string()))?;
        let tau0 = gamma.inverse_cdf(self.confidence);

        let mut patches = Vec::new();
        let mut strength = Vec::new();
        for top in 0..=img.height - p {
            for left in 0..=img.width - p {
                let mut v = Vec::with_capacity(p * p);
                for r in top..top + p {
                    v.extend_from_slice(&img.data[r * img.width + left..r * img.width + left + p]);
                }
                patches.push(v);
                strength.push(texture_strength(img, top, left, p));
            }
        }
        let mut selected: Vec<usize> = (0..patches.len()).collect();
        let mut sig2 = smallest_cov_eigenvalue(&patches, &selected);
        let mut iterations = 0;
        for _ in 0..self.max_iterations {
            iterations += 1;
            let tau = sig2 * tau0;
            let next: Vec<usize> = (0..patches.len()).filter(|&i| strength[i] <= tau).collect();
            if next.len() < 2 {
                selected = next;
                break;
            }
            let s = smallest_cov_eigenvalue(&patches, &next);
            let done = next == selected;
            selected = next;
            sig2 = s;
            if done {
                break;
            }
        }
        Ok(NoiseEstimate {
            sigma: sig2.sqrt(),
            patches_used: selected.len(),
            iterations,
            low_confidence: selected.len() < self.min_patches,
        })
    }
}

pub fn estimate_noise_level(img: &Image) -> Result<NoiseEstimate> {
    NoiseEstimator::default().estimate(img)
}
