use crate::error::{cfg_err, Result};
use crate::scalar::Scalar;
use crate::tape::{split_axis, Op, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    /// Normalizes along the given axis.
    Softmax(usize),
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::LeakyRelu(slope) => self.leaky_relu(x, slope),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Tanh => self.tanh(x),
            Activation::Softmax(axis) => self.softmax(x, axis),
        }
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(cfg_err("leaky_relu", format!("slope {slope} outside (0,1)")));
        }
        let s = T::of_f64(slope);
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(value, Op::LeakyRelu { x, slope: s }, "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid { x }, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh { x }, "tanh")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(cfg_err("softmax", format!("axis {axis} for shape {:?}", xv.shape())));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let d = xv.data();
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| d[idx(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (d[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] = out[idx(k)] / total;
                }
            }
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        self.push(value, Op::Softmax { x, axis }, "softmax")
    }
}
