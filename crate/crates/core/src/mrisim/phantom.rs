//! Synthetic stand-ins for clinical volumes.
//!
//! Each volume is a stack of ellipse mixtures whose centres and axes drift
//! smoothly along the slice axis, plus a few bands of fine sinusoidal
//! texture. Intensities are non-negative before normalization, so the
//! background always maps to exactly -1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SliceVolume;
use crate::error::{config, Result};

struct Ellipse {
    cy: f64,
    cx: f64,
    dy: f64,
    dx: f64,
    ay: f64,
    ax: f64,
    /// Axis scaling per unit of normalized depth.
    grow: f64,
    theta: f64,
    spin: f64,
    value: f64,
}

struct Band {
    fy: f64,
    fx: f64,
    phase: f64,
    drift: f64,
    amp: f64,
    cy: f64,
    cx: f64,
    radius: f64,
}

/// `complexity` in `[0, 1]` sets the ellipse count (5 to 12) and the
/// texture amplitude.
pub fn gen_phantom_volume(
    depth: usize,
    height: usize,
    width: usize,
    complexity: f64,
    seed: u64,
) -> Result<SliceVolume> {
    if depth < 7 {
        return Err(config(format!("phantom depth {depth} < 7")));
    }
    if height != width || !height.is_power_of_two() {
        return Err(config(format!("phantom slices must be square powers of two, got {height}x{width}")));
    }
    if !(0.0..=1.0).contains(&complexity) {
        return Err(config(format!("complexity {complexity} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ellipses = 5 + (7.0 * complexity).round() as usize;

    // normalized coordinates in [-1, 1]
    let mut shapes = vec![Ellipse {
        cy: rng.random_range(-0.05..0.05),
        cx: rng.random_range(-0.05..0.05),
        dy: rng.random_range(-0.05..0.05),
        dx: rng.random_range(-0.05..0.05),
        ay: rng.random_range(0.72..0.85),
        ax: rng.random_range(0.6..0.75),
        grow: rng.random_range(-0.15..0.05),
        theta: rng.random_range(-0.3..0.3),
        spin: rng.random_range(-0.1..0.1),
        value: rng.random_range(0.45..0.6),
    }];
    for _ in 1..n_ellipses {
        shapes.push(Ellipse {
            cy: rng.random_range(-0.45..0.45),
            cx: rng.random_range(-0.4..0.4),
            dy: rng.random_range(-0.2..0.2),
            dx: rng.random_range(-0.2..0.2),
            ay: rng.random_range(0.06..0.3),
            ax: rng.random_range(0.06..0.3),
            grow: rng.random_range(-0.4..0.4),
            theta: rng.random_range(0.0..std::f64::consts::PI),
            spin: rng.random_range(-0.5..0.5),
            value: rng.random_range(-0.25..0.45),
        });
    }
    let n_bands = 2 + (2.0 * complexity).round() as usize;
    let bands: Vec<Band> = (0..n_bands)
        .map(|_| {
            let freq = rng.random_range(10.0..18.0) * std::f64::consts::PI;
            let dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Band {
                fy: freq * dir.sin(),
                fx: freq * dir.cos(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                drift: rng.random_range(-1.5..1.5),
                amp: (0.06 + 0.1 * complexity) * rng.random_range(0.7..1.3),
                cy: rng.random_range(-0.35..0.35),
                cx: rng.random_range(-0.35..0.35),
                radius: rng.random_range(0.15..0.3),
            }
        })
        .collect();

    let mut voxels = vec![0.0; depth * height * width];
    for z in 0..depth {
        // t in [-1, 1] across the stack
        let t = 2.0 * z as f64 / (depth - 1) as f64 - 1.0;
        let plane = &mut voxels[z * height * width..(z + 1) * height * width];
        for r in 0..height {
            let y = 2.0 * (r as f64 + 0.5) / height as f64 - 1.0;
            for c in 0..width {
                let x = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
                let mut v = 0.0;
                for (i, e) in shapes.iter().enumerate() {
                    let (cy, cx) = (e.cy + e.dy * t, e.cx + e.dx * t);
                    let s = (1.0 + e.grow * t).max(0.05);
                    let th = e.theta + e.spin * t;
                    let (py, px) = (y - cy, x - cx);
                    let u = px * th.cos() + py * th.sin();
                    let w = -px * th.sin() + py * th.cos();
                    let q = (u / (e.ax * s)).powi(2) + (w / (e.ay * s)).powi(2);
                    if q <= 1.0 {
                        v += e.value;
                    } else if i == 0 {
                        // everything lives inside the outer body
                        v = f64::NEG_INFINITY;
                    }
                }
                if v.is_finite() {
                    for b in &bands {
                        let d2 = (y - b.cy).powi(2) + (x - b.cx).powi(2);
                        let env = (-d2 / (2.0 * b.radius * b.radius)).exp();
                        v += b.amp * env * (b.fy * y + b.fx * x + b.phase + b.drift * t).sin();
                    }
                    // keep tissue strictly above background
                    plane[r * width + c] = v.max(0.05);
                } else {
                    plane[r * width + c] = 0.0;
                }
            }
        }
    }
    Ok(SliceVolume::normalized(depth, height, width, voxels))
}
