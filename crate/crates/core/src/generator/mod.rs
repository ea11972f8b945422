//! Context-aware generator: a per-slice U-net followed by a context block
//! over the slice axis, joined by a residual refinement connection.
//!
//! Inputs are `(B * n) x 1 x H x W` with slice `t` of window `b` at row
//! `b * n + t`.

mod convlstm;

use std::fmt;
use std::str::FromStr;

use hpalf_tensor::{BnMode, Bound, ParamStore, Scalar, Tape, Var};

use crate::error::{config, Error, Result};
use crate::nn::{scaled, Conv, ConvBlock, LEAKY_SLOPE};

pub use convlstm::{BiConvLstm, ConvLstmCell, LstmState};

pub const ENCODER_WIDTHS: [usize; 8] = [64, 128, 256, 512, 512, 512, 512, 512];
pub const DECODER_WIDTHS: [usize; 8] = [1024, 1024, 1024, 1024, 512, 256, 128, 64];

/// The block that mixes information across neighbouring slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextBlock {
    BiConvLstm,
    /// Per-slice 2D convolutions; no cross-slice mixing.
    Cnn2d,
    /// 3x3x3 convolutions, realized as 2D convolutions over the
    /// concatenation of each slice with its two neighbours.
    Cnn3d,
    /// No context block (the 2.5D baseline): `x_rec = tanh(x_hat)`.
    None,
}

impl fmt::Display for ContextBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextBlock::BiConvLstm => "biconvlstm",
            ContextBlock::Cnn2d => "2dcnn",
            ContextBlock::Cnn3d => "3dcnn",
            ContextBlock::None => "none",
        })
    }
}

impl FromStr for ContextBlock {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biconvlstm" => Ok(ContextBlock::BiConvLstm),
            "2dcnn" | "cnn2d" => Ok(ContextBlock::Cnn2d),
            "3dcnn" | "cnn3d" => Ok(ContextBlock::Cnn3d),
            "none" | "2.5d" => Ok(ContextBlock::None),
            other => Err(config(format!("unknown context block {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub width_multiplier: f64,
    pub n_slices: usize,
    pub lstm_channels: usize,
    pub kernel: usize,
    pub image_size: usize,
    pub context: ContextBlock,
}

impl Default for GeneratorConfig {
    /// Desk scale.
    fn default() -> Self {
        Self {
            width_multiplier: 0.125,
            n_slices: 5,
            lstm_channels: 8,
            kernel: 3,
            image_size: 64,
            context: ContextBlock::BiConvLstm,
        }
    }
}

impl GeneratorConfig {
    /// Full-scale widths at 256x256.
    pub fn full_scale() -> Self {
        Self {
            width_multiplier: 1.0,
            lstm_channels: 32,
            image_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(config(format!("width multiplier {} outside (0, 1]", self.width_multiplier)));
        }
        if !(3..=7).contains(&self.n_slices) {
            return Err(config(format!("n_slices {} outside 3..=7", self.n_slices)));
        }
        if self.kernel != 3 {
            return Err(config("only 3x3 kernels are supported"));
        }
        if !self.image_size.is_power_of_two() || self.image_size < 4 {
            return Err(config(format!("image size {} must be a power of two >= 4", self.image_size)));
        }
        if self.lstm_channels == 0 {
            return Err(config("lstm_channels must be positive"));
        }
        Ok(())
    }

    /// Number of down/up levels: eight at full scale, capped so the
    /// bottleneck never drops below 1x1.
    pub fn depth(&self) -> usize {
        (self.image_size.trailing_zeros() as usize).min(8)
    }

    /// Trainable parameter count, computed without building the network.
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let ew = self.encoder_widths();
        let dw = self.decoder_widths();
        let l = ew.len();
        let mut n = 0;
        let mut cin = 1;
        for &w in &ew {
            n += cin * w * k2 + 2 * w;
            cin = w;
        }
        for j in (0..l).rev() {
            let w = dw[l - 1 - j];
            n += cin * w * k2 + 2 * w;
            cin = w + if j == 0 { 1 } else { ew[j - 1] };
        }
        n += cin * k2 + 1;
        let c = self.lstm_channels;
        let lift_proj = (k2 * c + c) + (c * k2 + 1);
        n + match self.context {
            ContextBlock::None => 0,
            ContextBlock::Cnn2d => lift_proj + 2 * (c * c * k2 + c),
            ContextBlock::Cnn3d => lift_proj + 2 * (3 * c * c * k2 + c),
            ContextBlock::BiConvLstm => {
                let cell = (c * 4 * c * k2 + 4 * c) + c * 4 * c * k2 + c * 2 * c * k2 + c * self.image_size * self.image_size;
                lift_proj + 2 * cell + (c * c * k2 + c) + c * c * k2
            }
        }
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        ENCODER_WIDTHS[..self.depth()]
            .iter()
            .map(|&w| scaled(self.width_multiplier, w))
            .collect()
    }

    /// Decoder widths from the deepest level up.
    pub fn decoder_widths(&self) -> Vec<usize> {
        DECODER_WIDTHS[8 - self.depth()..]
            .iter()
            .map(|&w| scaled(self.width_multiplier, w))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct UNet {
    enc: Vec<ConvBlock>,
    /// Indexed by level: `dec[j]` upsamples into the resolution of level `j`.
    dec: Vec<ConvBlock>,
    out: Conv,
}

impl UNet {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &GeneratorConfig) -> Result<Self> {
        let ew = cfg.encoder_widths();
        let dw = cfg.decoder_widths();
        let l = ew.len();
        let mut enc = Vec::with_capacity(l);
        let mut cin = 1;
        for (i, &w) in ew.iter().enumerate() {
            enc.push(ConvBlock::down(store, &format!("unet.enc{i}"), cin, w)?);
            cin = w;
        }
        // skip channels at level j: the input image at 0, encoder output j-1 above
        let skip = |j: usize| if j == 0 { 1 } else { ew[j - 1] };
        let mut dec: Vec<Option<ConvBlock>> = vec![None; l];
        let mut cin = ew[l - 1];
        for j in (0..l).rev() {
            let w = dw[l - 1 - j];
            dec[j] = Some(ConvBlock::up(store, &format!("unet.dec{j}"), cin, w)?);
            cin = w + skip(j);
        }
        let out = Conv::new(store, "unet.out", cin, 1, 3, 1, true)?;
        Ok(Self {
            enc,
            dec: dec.into_iter().map(Option::unwrap).collect(),
            out,
        })
    }

    fn forward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let mut skips = vec![x];
        let mut h = x;
        for e in &self.enc {
            h = e.forward(store, tape, p, h, mode)?;
            skips.push(h);
        }
        for j in (0..self.dec.len()).rev() {
            h = self.dec[j].forward(store, tape, p, h, mode)?;
            h = tape.concat(&[h, skips[j]], 1)?;
        }
        self.out.forward(tape, p, h)
    }
}

#[derive(Debug, Clone)]
enum Context {
    BiConvLstm { lift: Conv, lstm: BiConvLstm, proj: Conv },
    Cnn2d { lift: Conv, convs: [Conv; 2], proj: Conv },
    Cnn3d { lift: Conv, convs: [Conv; 2], proj: Conv },
    None,
}

/// Output of one generator pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    /// U-net output `x_hat_u`.
    pub unet: Var,
    /// Final reconstruction in `[-1, 1]`.
    pub rec: Var,
    /// Context-block feature maps `(B * n) x C x H x W`, when a block exists.
    pub features: Option<Var>,
}

pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub params: ParamStore<T>,
    unet: UNet,
    context: Context,
}

/// Rows of `(B * n)` ordered `b * n + t` for a fixed `t`.
fn slice_rows(batch: usize, n: usize, t: usize) -> Vec<usize> {
    (0..batch).map(|b| b * n + t).collect()
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let unet = UNet::new(&mut store, &cfg)?;
        let c = cfg.lstm_channels;
        let extent = (cfg.image_size, cfg.image_size);
        let lift = |s: &mut ParamStore<T>| Conv::new(s, "cal.lift", 1, c, 3, 1, true);
        let proj = |s: &mut ParamStore<T>| Conv::new(s, "cal.proj", c, 1, 3, 1, true);
        let context = match cfg.context {
            ContextBlock::BiConvLstm => Context::BiConvLstm {
                lift: lift(&mut store)?,
                lstm: BiConvLstm::new(&mut store, "cal.lstm", c, c, c, extent)?,
                proj: proj(&mut store)?,
            },
            ContextBlock::Cnn2d => Context::Cnn2d {
                lift: lift(&mut store)?,
                convs: [
                    Conv::new(&mut store, "cal.conv0", c, c, 3, 1, true)?,
                    Conv::new(&mut store, "cal.conv1", c, c, 3, 1, true)?,
                ],
                proj: proj(&mut store)?,
            },
            ContextBlock::Cnn3d => Context::Cnn3d {
                lift: lift(&mut store)?,
                convs: [
                    Conv::new(&mut store, "cal.conv0", 3 * c, c, 3, 1, true)?,
                    Conv::new(&mut store, "cal.conv1", 3 * c, c, 3, 1, true)?,
                ],
                proj: proj(&mut store)?,
            },
            ContextBlock::None => Context::None,
        };
        Ok(Self {
            cfg,
            params: store,
            unet,
            context,
        })
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<usize> {
        let s = tape.shape(x);
        let n = self.cfg.n_slices;
        let size = self.cfg.image_size;
        if s.len() != 4 || s[1] != 1 || s[2] != size || s[3] != size || s[0] == 0 || s[0] % n != 0 {
            return Err(config(format!(
                "generator expects (B*{n}) x 1 x {size} x {size}, got {s:?}"
            )));
        }
        Ok(s[0] / n)
    }

    /// `f_Unet` alone, slice by slice.
    pub fn unet_forward(&mut self, tape: &mut Tape<T>, p: &Bound, x: Var, mode: BnMode) -> Result<Var> {
        self.check_input(tape, x)?;
        self.unet.forward(&mut self.params, tape, p, x, mode)
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, p: &Bound, x: Var, mode: BnMode) -> Result<GeneratorOutput> {
        let batch = self.check_input(tape, x)?;
        let n = self.cfg.n_slices;
        let unet = self.unet.forward(&mut self.params, tape, p, x, mode)?;
        let (features, proj) = match &self.context {
            Context::None => {
                let rec = tape.tanh(unet)?;
                return Ok(GeneratorOutput {
                    unet,
                    rec,
                    features: None,
                });
            }
            Context::BiConvLstm { lift, lstm, proj } => {
                let lifted = lift.forward(tape, p, unet)?;
                let seq = (0..n)
                    .map(|t| tape.index_select(lifted, &slice_rows(batch, n, t)))
                    .collect::<Result<Vec<_>, _>>()?;
                let ys = lstm.forward(tape, p, &seq)?;
                // rows come back ordered t * B + b
                let stacked = tape.concat(&ys, 0)?;
                let order: Vec<usize> = (0..batch * n).map(|r| (r % n) * batch + r / n).collect();
                (tape.index_select(stacked, &order)?, proj)
            }
            Context::Cnn2d { lift, convs, proj } => {
                let mut h = lift.forward(tape, p, unet)?;
                for c in convs {
                    h = c.forward(tape, p, h)?;
                    h = tape.leaky_relu(h, LEAKY_SLOPE)?;
                }
                (h, proj)
            }
            Context::Cnn3d { lift, convs, proj } => {
                let mut h = lift.forward(tape, p, unet)?;
                // replicate padding along the slice axis
                let prev: Vec<usize> = (0..batch * n).map(|r| if r % n == 0 { r } else { r - 1 }).collect();
                let next: Vec<usize> = (0..batch * n).map(|r| if r % n == n - 1 { r } else { r + 1 }).collect();
                for c in convs {
                    let a = tape.index_select(h, &prev)?;
                    let b = tape.index_select(h, &next)?;
                    let cat = tape.concat(&[a, h, b], 1)?;
                    h = c.forward(tape, p, cat)?;
                    h = tape.leaky_relu(h, LEAKY_SLOPE)?;
                }
                (h, proj)
            }
        };
        let r = proj.forward(tape, p, features)?;
        let s = tape.add(unet, r)?;
        let rec = tape.tanh(s)?;
        Ok(GeneratorOutput {
            unet,
            rec,
            features: Some(features),
        })
    }

    /// Handle to the context block's recurrent core, if it has one.
    pub fn biconvlstm(&self) -> Option<&BiConvLstm> {
        match &self.context {
            Context::BiConvLstm { lstm, .. } => Some(lstm),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// One line per parameter tensor plus a total.
    pub fn describe(&self) -> String {
        describe_store(&self.params)
    }
}

pub(crate) fn describe_store<T: Scalar>(store: &ParamStore<T>) -> String {
    let mut s = String::new();
    for (_, p) in store.iter() {
        if p.requires_grad {
            s.push_str(&format!("{:<28} {:?}\n", p.name, p.value.shape()));
        }
    }
    s.push_str(&format!("trainable parameters: {}\n", store.trainable_count()));
    s
}
