//! U-net discriminator: the encoder judges the whole image (a scalar
//! realness and a K-outcome perspective distribution), the decoder judges
//! every pixel.

use hpalf_tensor::{BnMode, Bound, ParamStore, Scalar, Tape, Var};

use crate::error::{config, dimension, Result};
use crate::generator::describe_store;
use crate::nn::{scaled, Conv, ConvBlock, Dense, LEAKY_SLOPE};

/// Spatial extent of the bottleneck at every image size.
pub const BOTTLENECK: usize = 4;

const WIDTHS: [usize; 8] = [64, 128, 256, 512, 512, 512, 512, 512];

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// Number of perspective outcomes; also the bottleneck channel count.
    pub outcomes: usize,
    pub width_multiplier: f64,
    pub image_size: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            outcomes: 10,
            width_multiplier: 0.125,
            image_size: 64,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes < 2 {
            return Err(config(format!("need at least 2 outcomes, got {}", self.outcomes)));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(config(format!("width multiplier {} outside (0, 1]", self.width_multiplier)));
        }
        if !self.image_size.is_power_of_two() || self.image_size < 2 * BOTTLENECK {
            return Err(config(format!(
                "image size {} must be a power of two >= {}",
                self.image_size,
                2 * BOTTLENECK
            )));
        }
        Ok(())
    }

    /// Downsampling stages: `s - 2` for a `2^s` image.
    pub fn stages(&self) -> usize {
        (self.image_size.trailing_zeros() - BOTTLENECK.trailing_zeros()) as usize
    }

    /// Output channels of every encoder stage; the last one is `K`.
    pub fn encoder_widths(&self) -> Vec<usize> {
        let l = self.stages();
        (0..l)
            .map(|i| {
                if i + 1 == l {
                    self.outcomes
                } else {
                    scaled(self.width_multiplier, WIDTHS[i.min(7)])
                }
            })
            .collect()
    }
}

/// Encoder results for a batch of `B` images.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `B` realness scores in `(0, 1)`.
    pub scalar: Var,
    /// `B x K` perspective distributions.
    pub perspective: Var,
    /// `B x K x 4 x 4` pre-activation bottleneck.
    pub bottleneck: Var,
    /// The input followed by every encoder stage output except the bottleneck.
    pub skips: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorOutput {
    pub scalar: Var,
    pub perspective: Var,
    /// `B x 1 x H x W` per-pixel decisions in `(0, 1)`, when decoded.
    pub pixel_map: Option<Var>,
}

#[derive(Debug, Clone)]
enum Stage {
    Block(ConvBlock),
    Bottleneck(Conv),
}

pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    pub params: ParamStore<T>,
    enc: Vec<Stage>,
    head: [Dense; 3],
    /// `dec[j]` upsamples into the resolution of skip `j`.
    dec: Vec<ConvBlock>,
    out: Conv,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new(seed);
        let ew = cfg.encoder_widths();
        let l = ew.len();
        let k = cfg.outcomes;
        let mut enc = Vec::with_capacity(l);
        let mut cin = 1;
        for (i, &w) in ew.iter().enumerate() {
            enc.push(if i + 1 == l {
                Stage::Bottleneck(Conv::new(&mut s, &format!("disc.enc{i}.conv"), cin, w, 3, 2, true)?)
            } else {
                Stage::Block(ConvBlock::down(&mut s, &format!("disc.enc{i}"), cin, w)?)
            });
            cin = w;
        }
        let cells = BOTTLENECK * BOTTLENECK;
        let head = [
            Dense::new(&mut s, "disc.head0", k * cells, 64)?,
            Dense::new(&mut s, "disc.head1", 64, 32)?,
            Dense::new(&mut s, "disc.head2", 32, cells)?,
        ];
        let skip = |j: usize| if j == 0 { 1 } else { ew[j - 1] };
        let mut dec: Vec<Option<ConvBlock>> = vec![None; l];
        let mut cin = k;
        for j in (0..l).rev() {
            let w = if j == 0 { scaled(cfg.width_multiplier, WIDTHS[0]) } else { ew[j - 1] };
            dec[j] = Some(ConvBlock::up(&mut s, &format!("disc.dec{j}"), cin, w)?);
            cin = w + skip(j);
        }
        let out = Conv::new(&mut s, "disc.out", cin, 1, 3, 1, true)?;
        Ok(Self {
            cfg,
            params: s,
            enc,
            head,
            dec: dec.into_iter().map(Option::unwrap).collect(),
            out,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn describe(&self) -> String {
        describe_store(&self.params)
    }

    pub fn encode(&mut self, tape: &mut Tape<T>, p: &Bound, x: Var, mode: BnMode) -> Result<Encoded> {
        let s = tape.shape(x).to_vec();
        let size = self.cfg.image_size;
        if s.len() != 4 || s[1] != 1 || s[2] != size || s[3] != size || s[0] == 0 {
            return Err(config(format!("discriminator expects B x 1 x {size} x {size}, got {s:?}")));
        }
        let b = s[0];
        let k = self.cfg.outcomes;
        let mut skips = vec![x];
        let mut h = x;
        let mut bottleneck = None;
        for stage in &self.enc {
            match stage {
                Stage::Block(blk) => {
                    h = blk.forward(&mut self.params, tape, p, h, mode)?;
                    skips.push(h);
                }
                Stage::Bottleneck(conv) => bottleneck = Some(conv.forward(tape, p, h)?),
            }
        }
        let bottleneck = bottleneck.expect("encoder ends in a bottleneck");

        let pooled = tape.pool_global_sum(bottleneck)?;
        let perspective = tape.softmax(pooled, 1)?;

        let cells = BOTTLENECK * BOTTLENECK;
        let mut h = tape.reshape(bottleneck, &[b, k * cells])?;
        for (i, d) in self.head.iter().enumerate() {
            h = d.forward(tape, p, h)?;
            if i < 2 {
                h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        let map = tape.reshape(h, &[b, 1, BOTTLENECK, BOTTLENECK])?;
        let total = tape.pool_global_sum(map)?;
        let mean = tape.scale(total, 1.0 / cells as f64)?;
        let mean = tape.reshape(mean, &[b])?;
        let scalar = tape.sigmoid(mean)?;
        Ok(Encoded {
            scalar,
            perspective,
            bottleneck,
            skips,
        })
    }

    pub fn decode(&mut self, tape: &mut Tape<T>, p: &Bound, enc: &Encoded, mode: BnMode) -> Result<Var> {
        if enc.skips.len() != self.dec.len() {
            return Err(dimension(format!(
                "{} skip tensors for {} decoder levels",
                enc.skips.len(),
                self.dec.len()
            )));
        }
        let mut h = enc.bottleneck;
        for j in (0..self.dec.len()).rev() {
            h = self.dec[j].forward(&mut self.params, tape, p, h, mode)?;
            let (hs, ss) = (tape.shape(h), tape.shape(enc.skips[j]));
            if hs[0] != ss[0] || hs[2..] != ss[2..] {
                return Err(dimension(format!("decoder level {j}: {hs:?} vs skip {ss:?}")));
            }
            h = tape.concat(&[h, enc.skips[j]], 1)?;
        }
        let logits = self.out.forward(tape, p, h)?;
        Ok(tape.sigmoid(logits)?)
    }

    /// Encoder, plus the decoder when `decode` is set.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        mode: BnMode,
        decode: bool,
    ) -> Result<DiscriminatorOutput> {
        let enc = self.encode(tape, p, x, mode)?;
        let pixel_map = if decode {
            Some(self.decode(tape, p, &enc, mode)?)
        } else {
            None
        };
        Ok(DiscriminatorOutput {
            scalar: enc.scalar,
            perspective: enc.perspective,
            pixel_map,
        })
    }
}
