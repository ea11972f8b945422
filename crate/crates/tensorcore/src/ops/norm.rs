use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Per-channel running statistics updated by training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch-norm constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

pub(crate) struct Saved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

pub(crate) fn backward<T: Scalar>(
    shape: &[usize],
    gamma: &Tensor<T>,
    g: &Tensor<T>,
    saved: &Saved<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::from_usize(n * hw).unwrap();
    let mut dx = vec![T::zero(); g.numel()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let gd = g.data();
    for ch in 0..c {
        let idx = |b: usize| (b * c + ch) * hw..(b * c + ch + 1) * hw;
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for b in 0..n {
            for i in idx(b) {
                sg += gd[i];
                sgx += gd[i] * saved.xhat[i];
            }
        }
        dgamma[ch] = sgx;
        dbeta[ch] = sg;
        let scale = gamma.data()[ch] * saved.inv_std[ch];
        for b in 0..n {
            for i in idx(b) {
                dx[i] = if saved.train {
                    scale * (gd[i] - sg / m - saved.xhat[i] * sgx / m)
                } else {
                    scale * gd[i]
                };
            }
        }
    }
    (
        Tensor::from_vec(shape, dx).unwrap(),
        Tensor::from_vec(&[c], dgamma).unwrap(),
        Tensor::from_vec(&[c], dbeta).unwrap(),
    )
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalization of an `N x C x H x W` tensor.
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// unbiased estimate into `running`; eval mode reads `running` only.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: &mut RunningStats<T>,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        const OP: &str = "batchnorm2d";
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(dim_err(OP, format!("input must be 4-D, got {xs:?}")));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(dim_err(OP, format!("{what} shape {:?}, channels {c}", self.shape(v))));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(dim_err(OP, "running stats channel mismatch"));
        }
        let eps = T::of_f64(cfg.eps);
        let mom = T::of_f64(cfg.momentum);
        let m = n * hw;
        let xd = self.value(x).data().to_vec();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let mut out = vec![T::zero(); xd.len()];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let idx = |b: usize| (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let (mean, var) = match mode {
                BnMode::Train => {
                    let mf = T::from_usize(m).unwrap();
                    let mean = (0..n).flat_map(idx).map(|i| xd[i]).sum::<T>() / mf;
                    let var = (0..n)
                        .flat_map(idx)
                        .map(|i| (xd[i] - mean) * (xd[i] - mean))
                        .sum::<T>()
                        / mf;
                    let unbiased = if m > 1 {
                        var * mf / T::from_usize(m - 1).unwrap()
                    } else {
                        var
                    };
                    running.mean[ch] = (T::one() - mom) * running.mean[ch] + mom * mean;
                    running.var[ch] = (T::one() - mom) * running.var[ch] + mom * unbiased;
                    (mean, var)
                }
                BnMode::Eval => (running.mean[ch], running.var[ch]),
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for i in (0..n).flat_map(idx) {
                xhat[i] = (xd[i] - mean) * is;
                out[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
        let saved = Saved {
            xhat,
            inv_std,
            train: mode == BnMode::Train,
        };
        let value = Tensor::from_vec(&xs, out)?;
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            OP,
        )
    }
}
