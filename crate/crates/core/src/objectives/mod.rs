//! Adversarial, content and total losses.
//!
//! Every adversarial loss is batch-averaged; pixel terms are additionally
//! averaged over pixels so their scale does not depend on resolution.

mod anchors;
mod content;

use std::fmt;
use std::str::FromStr;

use hpalf_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{config, dimension, Error, Result};

pub use anchors::{build_anchor, kl_divergence, AnchorDistribution, Anchors, Skew, DEFAULT_SHAPE};
pub use content::{fft2c_op, fmse_loss, perceptual_loss, FeatureExtractor, FEATURE_CHANNELS};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-7;

/// Sign convention for the perspective (KL) terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Convention {
    /// The discriminator loss taken literally: the negated value
    /// function, so D is pushed *away* from its anchors.
    Verbatim,
    /// Sign-corrected: D pulls real perspectives toward R1 and fake ones
    /// toward R0; G pulls fake perspectives toward R1.
    Realness,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Verbatim => "verbatim",
            Convention::Realness => "realness",
        })
    }
}

impl FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbatim" => Ok(Convention::Verbatim),
            "realness" => Ok(Convention::Realness),
            other => Err(config(format!("unknown convention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Data-fidelity weight of the TV baseline.
    pub lambda_fidelity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            beta: 0.1,
            lambda_fidelity: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.lambda_fidelity >= 0.0) {
            return Err(config(format!("negative loss weight in {self:?}")));
        }
        Ok(())
    }
}

/// Which adversarial terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdversarialTerms {
    pub convention: Convention,
    /// Perspective (KL) terms on the encoder output.
    pub mpd: bool,
    /// Per-pixel decoder terms.
    pub glc: bool,
    /// Plain non-saturating scalar-head loss instead of the above.
    pub tal: bool,
}

impl Default for AdversarialTerms {
    fn default() -> Self {
        Self {
            convention: Convention::Realness,
            mpd: true,
            glc: true,
            tal: false,
        }
    }
}

/// A loss and its parts. Parts that are switched off are `None`.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialLoss {
    pub total: Var,
    pub kl: Option<Var>,
    pub scalar: Var,
    pub pixel: Option<Var>,
    /// Some probability had to be clamped away from 0 or 1.
    pub clamped: bool,
}

/// The encoder-side outputs a loss needs: `B` scalars and `B x K` perspectives.
#[derive(Debug, Clone, Copy)]
pub struct Judgement {
    pub scalar: Var,
    pub perspective: Var,
}

fn clamp_prob<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<(Var, bool)> {
    let hit = tape
        .value(x)
        .data()
        .iter()
        .any(|v| v.as_f64() < EPS || v.as_f64() > 1.0 - EPS);
    Ok((tape.clamp(x, EPS, 1.0 - EPS)?, hit))
}

/// `mean log x` with clamping.
fn mean_log<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<(Var, bool)> {
    let (c, hit) = clamp_prob(tape, x)?;
    let l = tape.log(c)?;
    Ok((tape.mean(l)?, hit))
}

/// `mean log (1 - x)` with clamping.
fn mean_log1m<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<(Var, bool)> {
    let (c, hit) = clamp_prob(tape, x)?;
    let om = tape.one_minus(c)?;
    let l = tape.log(om)?;
    Ok((tape.mean(l)?, hit))
}

/// Batch mean of `KL(anchor || perspective_b)` for a `B x K` perspective.
pub fn kl_to_anchor<T: Scalar>(tape: &mut Tape<T>, anchor: &AnchorDistribution, perspective: Var) -> Result<Var> {
    let s = tape.shape(perspective).to_vec();
    let k = anchor.probs.len();
    if s.len() != 2 || s[1] != k {
        return Err(dimension(format!("perspective {s:?} vs {k} anchor outcomes")));
    }
    if tape.value(perspective).data().iter().any(|v| !(v.as_f64() > 0.0)) {
        return Err(Error::Divergence("perspective has a non-positive entry".into()));
    }
    let b = s[0];
    let entropy: f64 = anchor.probs.iter().filter(|&&r| r > 0.0).map(|r| r * r.ln()).sum();
    let tiled: Vec<f64> = (0..b).flat_map(|_| anchor.probs.iter().map(|r| r / b as f64)).collect();
    let logp = tape.log(perspective)?;
    let cross = tape.mul_const(logp, Tensor::from_f64(&[b, k], &tiled)?)?;
    let cross = tape.sum(cross)?;
    let neg = tape.neg(cross)?;
    Ok(tape.add_scalar(neg, entropy)?)
}

fn sum_opt<T: Scalar>(tape: &mut Tape<T>, parts: &[Option<Var>]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for v in parts.iter().flatten() {
        acc = Some(match acc {
            None => *v,
            Some(a) => tape.add(a, *v)?,
        });
    }
    Ok(acc.expect("at least one loss part"))
}

/// Encoder loss for D.
///
/// realness: `mean[KL(R1||P_r) - log s_r] + mean[KL(R0||P_f) - log(1 - s_f)]`;
/// verbatim: `-mean[KL(R1||P_r) + log s_r] - mean[KL(R0||P_f) + log(1 - s_f)]`.
/// With `mpd` off only the log terms remain.
pub fn loss_d_enc<T: Scalar>(
    tape: &mut Tape<T>,
    real: Judgement,
    fake: Judgement,
    anchors: &Anchors,
    convention: Convention,
    mpd: bool,
) -> Result<AdversarialLoss> {
    let (lr, c1) = mean_log(tape, real.scalar)?;
    let (lf, c2) = mean_log1m(tape, fake.scalar)?;
    let logs = tape.add(lr, lf)?;
    let scalar = tape.neg(logs)?;
    let kl = if mpd {
        let a = kl_to_anchor(tape, &anchors.real, real.perspective)?;
        let b = kl_to_anchor(tape, &anchors.fake, fake.perspective)?;
        let k = tape.add(a, b)?;
        Some(match convention {
            Convention::Realness => k,
            Convention::Verbatim => tape.neg(k)?,
        })
    } else {
        None
    };
    let total = sum_opt(tape, &[kl, Some(scalar)])?;
    Ok(AdversarialLoss {
        total,
        kl,
        scalar,
        pixel: None,
        clamped: c1 || c2,
    })
}

/// Decoder loss for D: `-mean log M_r - mean log(1 - M_f)` over batch and pixels.
pub fn loss_d_dec<T: Scalar>(tape: &mut Tape<T>, real_map: Var, fake_map: Var) -> Result<(Var, bool)> {
    let (a, c1) = mean_log(tape, real_map)?;
    let (b, c2) = mean_log1m(tape, fake_map)?;
    let s = tape.add(a, b)?;
    Ok((tape.neg(s)?, c1 || c2))
}

/// Adversarial loss for G on the fake judgement and (optionally) its pixel map.
///
/// realness: `KL(R1||P_f) - log s_f - mean log M_f`;
/// verbatim: `-[KL(R0||P_f) + log(1 - s_f)] - mean log M_f`.
pub fn loss_adv_g<T: Scalar>(
    tape: &mut Tape<T>,
    fake: Judgement,
    fake_map: Option<Var>,
    anchors: &Anchors,
    convention: Convention,
    mpd: bool,
) -> Result<AdversarialLoss> {
    let (scalar, c1) = match convention {
        Convention::Realness => mean_log(tape, fake.scalar)?,
        Convention::Verbatim => mean_log1m(tape, fake.scalar)?,
    };
    let scalar = tape.neg(scalar)?;
    let kl = if mpd {
        Some(match convention {
            Convention::Realness => kl_to_anchor(tape, &anchors.real, fake.perspective)?,
            Convention::Verbatim => {
                let k = kl_to_anchor(tape, &anchors.fake, fake.perspective)?;
                tape.neg(k)?
            }
        })
    } else {
        None
    };
    let (pixel, c2) = match fake_map {
        Some(m) => {
            let (l, c) = mean_log(tape, m)?;
            (Some(tape.neg(l)?), c)
        }
        None => (None, false),
    };
    let total = sum_opt(tape, &[kl, Some(scalar), pixel])?;
    Ok(AdversarialLoss {
        total,
        kl,
        scalar,
        pixel,
        clamped: c1 || c2,
    })
}

/// Traditional non-saturating GAN losses on the scalar head:
/// `d = -mean log s_r - mean log(1 - s_f)`, `g = -mean log s_f`.
pub fn loss_tal<T: Scalar>(tape: &mut Tape<T>, real_scalar: Var, fake_scalar: Var) -> Result<(Var, Var)> {
    let (a, _) = mean_log(tape, real_scalar)?;
    let (b, _) = mean_log1m(tape, fake_scalar)?;
    let s = tape.add(a, b)?;
    let d = tape.neg(s)?;
    let (g, _) = mean_log(tape, fake_scalar)?;
    let g = tape.neg(g)?;
    Ok((d, g))
}

/// Full discriminator loss under the ablation switches.
pub fn discriminator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    real: Judgement,
    fake: Judgement,
    maps: Option<(Var, Var)>,
    anchors: &Anchors,
    terms: AdversarialTerms,
) -> Result<AdversarialLoss> {
    if terms.tal {
        let (d, _) = loss_tal(tape, real.scalar, fake.scalar)?;
        return Ok(AdversarialLoss {
            total: d,
            kl: None,
            scalar: d,
            pixel: None,
            clamped: false,
        });
    }
    let mut enc = loss_d_enc(tape, real, fake, anchors, terms.convention, terms.mpd)?;
    if terms.glc {
        let (rm, fm) = maps.ok_or_else(|| config("pixel terms need decoder maps"))?;
        let (pix, c) = loss_d_dec(tape, rm, fm)?;
        enc.total = tape.add(enc.total, pix)?;
        enc.pixel = Some(pix);
        enc.clamped |= c;
    }
    Ok(enc)
}

/// Full adversarial part of the generator loss under the ablation switches.
pub fn generator_adversarial_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fake: Judgement,
    fake_map: Option<Var>,
    anchors: &Anchors,
    terms: AdversarialTerms,
) -> Result<AdversarialLoss> {
    if terms.tal {
        let (_, g) = loss_tal(tape, fake.scalar, fake.scalar)?;
        return Ok(AdversarialLoss {
            total: g,
            kl: None,
            scalar: g,
            pixel: None,
            clamped: false,
        });
    }
    let map = if terms.glc {
        Some(fake_map.ok_or_else(|| config("pixel terms need a decoder map"))?)
    } else {
        None
    };
    loss_adv_g(tape, fake, map, anchors, terms.convention, terms.mpd)
}

/// `alpha * fmse + beta * vgg + adv`.
pub fn loss_total<T: Scalar>(tape: &mut Tape<T>, fmse: Var, vgg: Var, adv: Var, w: &LossWeights) -> Result<Var> {
    let a = tape.scale(fmse, w.alpha)?;
    let b = tape.scale(vgg, w.beta)?;
    let s = tape.add(a, b)?;
    Ok(tape.add(s, adv)?)
}
