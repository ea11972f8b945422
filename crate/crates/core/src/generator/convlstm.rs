//! Convolutional LSTM cell with peephole terms, and its bidirectional wrapper.

use hpalf_tensor::{Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

use crate::error::{dimension, Result};
use crate::nn::Conv;

/// Hidden and cell state, each `B x C x h x w`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Scalar>(tape: &mut Tape<T>, batch: usize, channels: usize, h: usize, w: usize) -> Result<Self> {
        let z = tape.constant(Tensor::zeros(&[batch, channels, h, w]))?;
        Ok(Self { h: z, c: z })
    }
}

/// One ConvLSTM cell.
///
/// Parameter layout under `name`:
/// - `wx.w`, `wx.b`: input convolution to `4C` channels ordered `[i, f, c, o]`;
///   the bias blocks are `b_i, b_f, b_c, b_o`
/// - `wh.w`: hidden convolution to `4C` channels, same ordering
/// - `wc.w`: peephole convolution of `C_{t-1}` into the `i` and `f` gates
/// - `wco`: `C x h x w` Hadamard weight of `C_t` in the output gate
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    wx: Conv,
    wh: Conv,
    wc: Conv,
    wco: ParamId,
    channels: usize,
    extent: (usize, usize),
}

impl ConvLstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        channels: usize,
        extent: (usize, usize),
    ) -> Result<Self> {
        let c = channels;
        Ok(Self {
            wx: Conv::new(store, &format!("{name}.wx"), in_channels, 4 * c, 3, 1, true)?,
            wh: Conv::new(store, &format!("{name}.wh"), c, 4 * c, 3, 1, false)?,
            wc: Conv::new(store, &format!("{name}.wc"), c, 2 * c, 3, 1, false)?,
            wco: store.init_uniform(&format!("{name}.wco"), &[c, extent.0, extent.1], c)?,
            channels,
            extent,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let xs = tape.shape(x).to_vec();
        let hs = tape.shape(state.h).to_vec();
        if xs.len() != 4 || xs[2..] != [self.extent.0, self.extent.1] || hs != tape.shape(state.c) {
            return Err(dimension(format!(
                "convlstm input {xs:?}, state {hs:?}, cell extent {:?}",
                self.extent
            )));
        }
        let c = self.channels;
        let gx = self.wx.forward(tape, p, x)?;
        let gh = self.wh.forward(tape, p, state.h)?;
        let gc = self.wc.forward(tape, p, state.c)?;
        let g = tape.add(gx, gh)?;
        let gate = |tape: &mut Tape<T>, k: usize| tape.narrow(g, 1, k * c, c);

        let (gi, gf) = (gate(tape, 0)?, gate(tape, 1)?);
        let pi = tape.narrow(gc, 1, 0, c)?;
        let pf = tape.narrow(gc, 1, c, c)?;
        let si = tape.add(gi, pi)?;
        let i = tape.sigmoid(si)?;
        let sf = tape.add(gf, pf)?;
        let f = tape.sigmoid(sf)?;

        let cand = gate(tape, 2)?;
        let cand = tape.tanh(cand)?;
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, cand)?;
        let c_t = tape.add(keep, write)?;

        let go = gate(tape, 3)?;
        let peep = tape.mul_broadcast(c_t, p[self.wco])?;
        let so = tape.add(go, peep)?;
        let o = tape.sigmoid(so)?;
        let tc = tape.tanh(c_t)?;
        let h_t = tape.mul(o, tc)?;
        Ok(LstmState { h: h_t, c: c_t })
    }

    /// Runs the cell over `seq` in order, returning every hidden state.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, seq: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = seq.first() else {
            return Ok(Vec::new());
        };
        let b = tape.shape(first)[0];
        let mut state = LstmState::zeros(tape, b, self.channels, self.extent.0, self.extent.1)?;
        let mut out = Vec::with_capacity(seq.len());
        for &x in seq {
            state = self.step(tape, p, x, state)?;
            out.push(state.h);
        }
        Ok(out)
    }
}

/// Forward and backward ConvLSTMs fused by
/// `Y_t = tanh(W_f * H_fwd_t + W_b * H_bwd_t + b)`.
///
/// The bias `b` is carried by the forward projection (`yf.b`).
#[derive(Debug, Clone)]
pub struct BiConvLstm {
    pub fwd: ConvLstmCell,
    pub bwd: ConvLstmCell,
    yf: Conv,
    yb: Conv,
}

impl BiConvLstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        channels: usize,
        out_channels: usize,
        extent: (usize, usize),
    ) -> Result<Self> {
        Ok(Self {
            fwd: ConvLstmCell::new(store, &format!("{name}.fwd"), in_channels, channels, extent)?,
            bwd: ConvLstmCell::new(store, &format!("{name}.bwd"), in_channels, channels, extent)?,
            yf: Conv::new(store, &format!("{name}.yf"), channels, out_channels, 3, 1, true)?,
            yb: Conv::new(store, &format!("{name}.yb"), channels, out_channels, 3, 1, false)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, seq: &[Var]) -> Result<Vec<Var>> {
        let hf = self.fwd.run(tape, p, seq)?;
        let rev: Vec<Var> = seq.iter().rev().copied().collect();
        let mut hb = self.bwd.run(tape, p, &rev)?;
        hb.reverse();
        hf.iter()
            .zip(&hb)
            .map(|(&f, &b)| {
                let a = self.yf.forward(tape, p, f)?;
                let c = self.yb.forward(tape, p, b)?;
                let s = tape.add(a, c)?;
                Ok(tape.tanh(s)?)
            })
            .collect()
    }
}
