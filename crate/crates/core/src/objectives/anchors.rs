//! Skew-normal anchor distributions over the K perspective outcomes, and the
//! plain-number KL divergence.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{config, Error, Result};

/// Default skewness magnitude of the anchors.
pub const DEFAULT_SHAPE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skew {
    /// The "real" anchor R1.
    Positive,
    /// The "fake" anchor R0.
    Negative,
}

impl Skew {
    fn sign(self) -> f64 {
        match self {
            Skew::Positive => 1.0,
            Skew::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDistribution {
    pub probs: Vec<f64>,
    pub skew: Skew,
}

/// Skew-normal density `2 phi(x) Phi(a x)` (location 0, scale 1) sampled at
/// K equispaced points of `[-3, 3]` and normalized.
pub fn build_anchor(k: usize, skew: Skew, shape: f64) -> Result<AnchorDistribution> {
    if k < 2 {
        return Err(config(format!("anchors need K >= 2, got {k}")));
    }
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(config(format!("anchor shape must be positive, got {shape}")));
    }
    let n = Normal::standard();
    let a = skew.sign() * shape;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            // evaluate mirrored pairs from the same magnitude so R1 and R0 are
            // exact reflections of each other
            let x = -3.0 + 6.0 * i as f64 / (k - 1) as f64;
            let x = if i >= k - 1 - i { x } else { -(-3.0 + 6.0 * (k - 1 - i) as f64 / (k - 1) as f64) };
            2.0 * n.pdf(x) * n.cdf(a * x)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(AnchorDistribution {
        probs: raw.iter().map(|v| v / total).collect(),
        skew,
    })
}

/// The real/fake anchor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub real: AnchorDistribution,
    pub fake: AnchorDistribution,
}

impl Anchors {
    pub fn new(k: usize, shape: f64) -> Result<Self> {
        Ok(Self {
            real: build_anchor(k, Skew::Positive, shape)?,
            fake: build_anchor(k, Skew::Negative, shape)?,
        })
    }

    pub fn outcomes(&self) -> usize {
        self.real.probs.len()
    }

    /// `max_v |R1(v) - R0(v)|`.
    pub fn separation(&self) -> f64 {
        self.real
            .probs
            .iter()
            .zip(&self.fake.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `sum p ln(p / q)` in nats, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(crate::error::dimension(format!("KL over {} vs {} outcomes", p.len(), q.len())));
    }
    let mut s = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::Divergence(format!("KL with q = {b} where p = {a}")));
            }
            s += a * (a / b).ln();
        }
    }
    Ok(s)
}
