use num_complex::Complex64;

use crate::error::{config, Error, Result};
use crate::mrisim::{fft2c, ifft2c, ComplexImage, Image, KSpaceSample};

/// Smoothing inside the isotropic TV norm.
pub const TV_EPS: f64 = 1e-6;
/// Halvings tried per iteration before giving up.
pub const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub lambda_fidelity: f64,
    pub iterations: usize,
    /// Initial step; it halves on any increase and doubles back (up to this
    /// value) after every accepted step.
    pub step: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            lambda_fidelity: 20.0,
            iterations: 300,
            step: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TvResult {
    pub image: Image,
    /// Objective before the first and after every accepted iteration.
    pub objective: Vec<f64>,
    pub halvings: usize,
    /// Stopped because no step could decrease the objective beyond roundoff.
    pub stalled: bool,
}

fn residual(sample: &KSpaceSample, x: &Image) -> Result<ComplexImage> {
    let mut r = fft2c(&ComplexImage::from_real(x))?;
    for ((z, &keep), y) in r.data.iter_mut().zip(&sample.mask.bits).zip(&sample.spectrum.data) {
        *z = if keep { *z - y } else { Complex64::default() };
    }
    Ok(r)
}

fn tv_value(x: &Image) -> f64 {
    let (h, w) = (x.height, x.width);
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = x.at(r, c);
            let dx = if c + 1 < w { x.at(r, c + 1) - v } else { 0.0 };
            let dy = if r + 1 < h { x.at(r + 1, c) - v } else { 0.0 };
            s += (dx * dx + dy * dy + TV_EPS).sqrt();
        }
    }
    s
}

fn tv_grad(x: &Image) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let mut g = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let v = x.data[i];
            let dx = if c + 1 < w { x.data[i + 1] - v } else { 0.0 };
            let dy = if r + 1 < h { x.data[i + w] - v } else { 0.0 };
            let n = (dx * dx + dy * dy + TV_EPS).sqrt();
            let (ax, ay) = (dx / n, dy / n);
            g[i] -= ax + ay;
            if c + 1 < w {
                g[i + 1] += ax;
            }
            if r + 1 < h {
                g[i + w] += ay;
            }
        }
    }
    g
}

/// `lambda * ||M (F x) - y||^2 + TV_eps(x)`.
pub fn tv_objective(sample: &KSpaceSample, x: &Image, lambda: f64) -> Result<f64> {
    let r = residual(sample, x)?;
    Ok(lambda * r.norm().powi(2) + tv_value(x))
}

/// Gradient descent from the zero-filled image with step halving.
pub fn reconstruct_tv(sample: &KSpaceSample, cfg: &TvConfig) -> Result<TvResult> {
    if cfg.iterations == 0 {
        return Err(config("TV needs at least one iteration"));
    }
    if !(cfg.step > 0.0 && cfg.lambda_fidelity >= 0.0) {
        return Err(config(format!("bad TV settings {cfg:?}")));
    }
    let lambda = cfg.lambda_fidelity;
    let mut x = ifft2c(&sample.spectrum)?.re();
    let mut f = tv_objective(sample, &x, lambda)?;
    let mut objective = vec![f];
    let mut step = cfg.step;
    let mut halvings = 0;
    let mut stalled = false;
    for _ in 0..cfg.iterations {
        let back = ifft2c(&residual(sample, &x)?)?.re();
        let g: Vec<f64> = tv_grad(&x)
            .iter()
            .zip(&back.data)
            .map(|(t, b)| t + 2.0 * lambda * b)
            .collect();
        let mut accepted = None;
        for k in 0..=MAX_HALVINGS {
            let trial = Image {
                height: x.height,
                width: x.width,
                data: x.data.iter().zip(&g).map(|(v, d)| v - step * d).collect(),
            };
            let ft = tv_objective(sample, &trial, lambda)?;
            if ft <= f {
                accepted = Some((trial, ft));
                break;
            }
            if k < MAX_HALVINGS {
                step *= 0.5;
                halvings += 1;
            } else if ft - f <= 1e-12 * f.abs().max(1.0) {
                // rising only at roundoff level: nothing left to gain
                stalled = true;
            } else {
                return Err(Error::TvDiverged(MAX_HALVINGS));
            }
        }
        let Some((next, fnext)) = accepted else { break };
        x = next;
        f = fnext;
        objective.push(f);
        step = (step * 2.0).min(cfg.step);
    }
    Ok(TvResult {
        image: x,
        objective,
        halvings,
        stalled,
    })
}
