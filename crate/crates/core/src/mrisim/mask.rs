//! Variable-density k-space undersampling patterns.
//!
//! Every pattern keeps the DC bin and hits its target count exactly:
//! `round_half_up(fraction * total)` lines (G1D) or points (G2D, P2D).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// Whole phase-encode columns, Gaussian density across columns.
    G1D,
    /// Individual points, separable 2D Gaussian density.
    G2D,
    /// Variable-density Poisson disc.
    P2D,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::G1D => "g1d",
            MaskKind::G2D => "g2d",
            MaskKind::P2D => "p2d",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1d" => Ok(MaskKind::G1D),
            "g2d" => Ok(MaskKind::G2D),
            "p2d" => Ok(MaskKind::P2D),
            other => Err(config(format!("unknown mask kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub fraction: f64,
    pub seed: u64,
}

/// Binary sampling pattern in centered k-space coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn at(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn dc_sampled(&self) -> bool {
        self.at(self.height / 2, self.width / 2)
    }

    /// Number of fully sampled columns.
    pub fn column_count(&self) -> usize {
        (0..self.width)
            .filter(|&c| (0..self.height).all(|r| self.at(r, c)))
            .count()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Target count for `fraction` of `total`, never zero.
pub fn target_count(fraction: f64, total: usize) -> usize {
    round_half_up(fraction * total as f64).clamp(1, total)
}

/// Weighted sampling of `k` indices without replacement, always including
/// `forced`. Uses exponential keys `-ln(u) / w` (smallest wins), which is the
/// Efraimidis–Spirakis scheme in log space.
fn weighted_pick(weights: &[f64], k: usize, forced: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != forced)
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (-u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut picked = vec![forced];
    picked.extend(keyed.into_iter().take(k - 1).map(|(_, i)| i));
    picked
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    (-0.5 * (d / sigma).powi(2)).exp()
}

fn gaussian_1d(h: usize, w: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let sigma = w as f64 / 6.0;
    let weights: Vec<f64> = (0..w)
        .map(|c| gaussian(c as f64 - (w / 2) as f64, sigma))
        .collect();
    let cols = weighted_pick(&weights, k, w / 2, rng);
    let mut bits = vec![false; h * w];
    for c in cols {
        for r in 0..h {
            bits[r * w + c] = true;
        }
    }
    bits
}

fn gaussian_2d(h: usize, w: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (sy, sx) = (h as f64 / 6.0, w as f64 / 6.0);
    let weights: Vec<f64> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            gaussian(r as f64 - (h / 2) as f64, sy) * gaussian(c as f64 - (w / 2) as f64, sx)
        })
        .collect();
    let mut bits = vec![false; h * w];
    for i in weighted_pick(&weights, k, (h / 2) * w + w / 2, rng) {
        bits[i] = true;
    }
    bits
}

/// Dart throwing over a fixed candidate order; a candidate at distance `d`
/// from DC is accepted when no earlier acceptance lies within
/// `r0 * (1 + 2 d / d_max)`. Returns accepted indices in acceptance order.
fn poisson_accept(h: usize, w: usize, order: &[usize], r0: f64) -> Vec<usize> {
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let d_max = (cy * cy + cx * cx).sqrt().max(1.0);
    let mut taken = vec![false; h * w];
    let mut accepted = Vec::new();
    for &i in order {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        let d = ((r - cy).powi(2) + (c - cx).powi(2)).sqrt();
        let rad = r0 * (1.0 + 2.0 * d / d_max);
        let reach = rad.ceil() as isize;
        let (ri, ci) = ((i / w) as isize, (i % w) as isize);
        let mut free = true;
        'scan: for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (rr, cc) = (ri + dr, ci + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                if taken[rr as usize * w + cc as usize]
                    && ((dr * dr + dc * dc) as f64) < rad * rad
                {
                    free = false;
                    break 'scan;
                }
            }
        }
        if free {
            taken[i] = true;
            accepted.push(i);
        }
    }
    accepted
}

fn poisson_2d(h: usize, w: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let dc = (h / 2) * w + w / 2;
    let mut order: Vec<usize> = (0..h * w).filter(|&i| i != dc).collect();
    order.shuffle(rng);
    order.insert(0, dc);
    // Acceptance count falls as r0 grows; find the largest r0 that still
    // yields at least k points, then drop the latest acceptances.
    let (mut lo, mut hi) = (0.0f64, (h.max(w)) as f64);
    let mut best = poisson_accept(h, w, &order, lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let acc = poisson_accept(h, w, &order, mid);
        if acc.len() >= k {
            lo = mid;
            best = acc;
        } else {
            hi = mid;
        }
    }
    let mut bits = vec![false; h * w];
    for &i in best.iter().take(k) {
        bits[i] = true;
    }
    bits
}

pub fn make_mask(spec: MaskSpec, height: usize, width: usize) -> Result<Mask> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(config(format!("mask fraction {} outside (0, 1]", spec.fraction)));
    }
    if height == 0 || width == 0 {
        return Err(config("empty mask extent"));
    }
    if spec.fraction == 1.0 {
        return Ok(Mask::full(height, width));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bits = match spec.kind {
        MaskKind::G1D => gaussian_1d(height, width, target_count(spec.fraction, width), &mut rng),
        MaskKind::G2D => gaussian_2d(
            height,
            width,
            target_count(spec.fraction, height * width),
            &mut rng,
        ),
        MaskKind::P2D => poisson_2d(
            height,
            width,
            target_count(spec.fraction, height * width),
            &mut rng,
        ),
    };
    Ok(Mask { height, width, bits })
}
