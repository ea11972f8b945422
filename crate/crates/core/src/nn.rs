//! Parameterized layers shared by the generator, the discriminator and the
//! frozen feature extractor.

use hpalf_tensor::{BatchNormConfig, BnMode, Bound, ParamId, ParamStore, RunningStats, Scalar, Tape, Tensor, Var};

use crate::error::Result;

pub const LEAKY_SLOPE: f64 = hpalf_tensor::DEFAULT_LEAKY_SLOPE;

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    padding: usize,
    /// `Some(output_padding)` for a transposed convolution.
    transposed: Option<usize>,
}

impl Conv {
    /// `k x k` convolution `cin -> cout`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.init_uniform(&format!("{name}.w"), &[cout, cin, k, k], cin * k * k)?;
        let b = if bias {
            Some(store.init_uniform(&format!("{name}.b"), &[cout], cin * k * k)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            stride,
            padding: k / 2,
            transposed: None,
        })
    }

    /// Exact 2x upsampling: `k = 3, stride 2, padding 1, output_padding 1`.
    pub fn up<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        let w = store.init_uniform(&format!("{name}.w"), &[cin, cout, 3, 3], cin * 9)?;
        let b = if bias {
            Some(store.init_uniform(&format!("{name}.b"), &[cout], cin * 9)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            stride: 2,
            padding: 1,
            transposed: Some(1),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let b = self.b.map(|b| p[b]);
        Ok(match self.transposed {
            None => tape.conv2d(x, p[self.w], b, self.stride, self.padding)?,
            Some(op) => tape.conv_transpose2d(x, p[self.w], b, self.stride, self.padding, op)?,
        })
    }
}

/// Batch norm whose running statistics live in the store as buffers.
#[derive(Debug, Clone)]
pub(crate) struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl Bn {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.init_const(&format!("{name}.gamma"), &[c], 1.0)?,
            beta: store.init_const(&format!("{name}.beta"), &[c], 0.0)?,
            mean: store.buffer(&format!("{name}.running_mean"), &[c], 0.0)?,
            var: store.buffer(&format!("{name}.running_var"), &[c], 1.0)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let mut rs = RunningStats {
            mean: store.get(self.mean).value.data().to_vec(),
            var: store.get(self.var).value.data().to_vec(),
        };
        let y = tape.batchnorm2d(x, p[self.gamma], p[self.beta], mode, &mut rs, BatchNormConfig::default())?;
        if mode == BnMode::Train {
            let c = rs.mean.len();
            store.get_mut(self.mean).value = Tensor::from_vec(&[c], rs.mean)?;
            store.get_mut(self.var).value = Tensor::from_vec(&[c], rs.var)?;
        }
        Ok(y)
    }
}

/// Convolution, batch norm, leaky ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock {
    pub conv: Conv,
    bn: Bn,
}

impl ConvBlock {
    pub fn down<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, 3, 2, false)?,
            bn: Bn::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    pub fn up<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::up(store, &format!("{name}.deconv"), cin, cout, false)?,
            bn: Bn::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let h = self.conv.forward(tape, p, x)?;
        let h = self.bn.forward(store, tape, p, h, mode)?;
        Ok(tape.leaky_relu(h, LEAKY_SLOPE)?)
    }
}

/// `ceil(m * w)`, at least 1.
pub(crate) fn scaled(m: f64, w: usize) -> usize {
    ((m * w as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Fully connected layer on `N x in` rows.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, out: usize) -> Result<Self> {
        Ok(Self {
            w: store.init_uniform(&format!("{name}.w"), &[out, fan_in], fan_in)?,
            b: store.init_uniform(&format!("{name}.b"), &[out], fan_in)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(tape.dense(x, p[self.w], Some(p[self.b]))?)
    }
}
