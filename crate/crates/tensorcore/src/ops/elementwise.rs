//! Arithmetic, reductions and pooling.

use crate::error::{dim_err, Result, TensorError};
use crate::scalar::{matmul, Scalar};
use crate::tape::{zip_map, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub { a, b }, "sub")
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul { a, b }, "mul")
    }

    /// Hadamard product with `w` repeated over the leading axes of `x`.
    pub fn mul_broadcast(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.len() > xs.len() || xs[xs.len() - ws.len()..] != *ws {
            return Err(dim_err(
                "mul_broadcast",
                format!("{ws:?} is not a suffix of {xs:?}"),
            ));
        }
        let wv = self.value(w).data();
        let inner = wv.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wv[i % inner])
            .collect();
        let value = Tensor::from_vec(self.shape(x), data)?;
        self.push(value, Op::MulBroadcast { x, w }, "mul_broadcast")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of_f64(c);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale { x, c }, "scale")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of_f64(c);
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar { x }, "add_scalar")
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        self.add_scalar(n, 1.0)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return Err(dim_err(
                "mul_const",
                format!("{:?} vs {:?}", c.shape(), self.shape(x)),
            ));
        }
        let value = zip_map(self.value(x), &c, |a, b| a * b);
        self.push(value, Op::MulConst { x, c }, "mul_const")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= T::zero()) {
            return Err(TensorError::NonFinite { op: "log" });
        }
        let value = self.value(x).map(|v| v.ln());
        self.push(value, Op::Log { x }, "log")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.exp());
        self.push(value, Op::Exp { x }, "exp")
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::of_f64(lo), T::of_f64(hi));
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { x, lo, hi }, "clamp")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::SumAll { x }, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.sum() / T::from_usize(xv.numel()).unwrap());
        self.push(value, Op::MeanAll { x }, "mean")
    }

    /// `N x C x H x W -> N x C` by summing each spatial plane.
    pub fn pool_global_sum(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] == 0 || xs[3] == 0 {
            return Err(dim_err("pool_global_sum", format!("need non-empty NCHW, got {xs:?}")));
        }
        let hw = xs[2] * xs[3];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum())
            .collect();
        let value = Tensor::from_vec(&[xs[0], xs[1]], data)?;
        self.push(value, Op::PoolGlobalSum { x }, "pool_global_sum")
    }

    /// Fully connected layer: `x W^T + b` for `x` of shape `[in]` or `[N, in]`
    /// and `W` of shape `[out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "dense";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || xs.len() > 2 || *xs.last().unwrap() != ws[1] {
            return Err(dim_err(OP, format!("input {xs:?}, weight {ws:?}")));
        }
        let (n_out, n_in) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(dim_err(OP, format!("bias {:?}, expected [{n_out}]", self.shape(b))));
            }
        }
        let rows = if xs.len() == 2 { xs[0] } else { 1 };
        let mut out = vec![T::zero(); rows * n_out];
        matmul(
            rows,
            n_in,
            n_out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..rows {
                for o in 0..n_out {
                    out[r * n_out + o] += bv[o];
                }
            }
        }
        let shape = if xs.len() == 2 { vec![rows, n_out] } else { vec![n_out] };
        let value = Tensor::from_vec(&shape, out)?;
        self.push(value, Op::Dense { x, w, b }, OP)
    }
}
