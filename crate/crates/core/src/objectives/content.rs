//! Content losses: frequency-domain MSE through a differentiable centered
//! FFT, and a perceptual distance through a frozen seeded feature extractor.

use hpalf_tensor::{CustomBackward, ParamStore, Scalar, Tape, Tensor, TensorError, Var};
use num_complex::Complex64;

use crate::error::{dimension, Result};
use crate::mrisim::{fft2c, ifft2c, ComplexImage};
use crate::nn::{Conv, LEAKY_SLOPE};

struct Fft2c {
    h: usize,
    w: usize,
}

impl<T: Scalar> CustomBackward<T> for Fft2c {
    fn name(&self) -> &'static str {
        "fft2c"
    }

    // y = F x with F unitary, so the adjoint of the real-to-complex map is
    // Re(F^H g) with g = g_re + i g_im
    fn backward(&self, grad_out: &Tensor<T>, _: &[&Tensor<T>], _: &Tensor<T>) -> hpalf_tensor::Result<Vec<Option<Tensor<T>>>> {
        let (h, w) = (self.h, self.w);
        let n = grad_out.shape()[0];
        let g = grad_out.data();
        let mut out = Vec::with_capacity(n * h * w);
        for b in 0..n {
            let base = b * 2 * h * w;
            let data = (0..h * w)
                .map(|i| Complex64::new(g[base + i].as_f64(), g[base + h * w + i].as_f64()))
                .collect();
            let img = ComplexImage::new(h, w, data).map_err(to_tensor_err)?;
            let back = ifft2c(&img).map_err(to_tensor_err)?;
            out.extend(back.data.iter().map(|z| T::of_f64(z.re)));
        }
        Ok(vec![Some(Tensor::from_vec(&[n, 1, h, w], out)?)])
    }
}

fn to_tensor_err(e: crate::Error) -> TensorError {
    TensorError::Config {
        op: "fft2c",
        detail: e.to_string(),
    }
}

/// Centered orthonormal 2D FFT of `N x 1 x H x W` real images, returned as
/// `N x 2 x H x W` (real and imaginary planes).
pub fn fft2c_op<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || s[1] != 1 {
        return Err(dimension(format!("fft2c expects N x 1 x H x W, got {s:?}")));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let xv = tape.value(x).data();
    let mut out = Vec::with_capacity(n * 2 * h * w);
    for b in 0..n {
        let data = xv[b * h * w..(b + 1) * h * w]
            .iter()
            .map(|v| Complex64::new(v.as_f64(), 0.0))
            .collect();
        let y = fft2c(&ComplexImage::new(h, w, data)?)?;
        out.extend(y.data.iter().map(|z| T::of_f64(z.re)));
        out.extend(y.data.iter().map(|z| T::of_f64(z.im)));
    }
    let value = Tensor::from_vec(&[n, 2, h, w], out)?;
    Ok(tape.custom(&[x], value, Box::new(Fft2c { h, w }))?)
}

fn check_pair<T: Scalar>(tape: &Tape<T>, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(dimension(format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

/// `1/2 mean |F x_true - F x_rec|^2` over all bins.
pub fn fmse_loss<T: Scalar>(tape: &mut Tape<T>, x_true: Var, x_rec: Var) -> Result<Var> {
    check_pair(tape, x_true, x_rec)?;
    let a = fft2c_op(tape, x_true)?;
    let b = fft2c_op(tape, x_rec)?;
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    // averaging over both planes already supplies the 1/2
    Ok(tape.mean(sq)?)
}

/// Frozen stand-in for a pretrained perceptual network: three stride-2 3x3
/// convolutions (8, 16, 32 channels) with leaky ReLU, weights drawn from a
/// seed.
pub struct FeatureExtractor<T> {
    pub params: ParamStore<T>,
    convs: [Conv; 3],
}

pub const FEATURE_CHANNELS: [usize; 3] = [8, 16, 32];

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Result<Self> {
        let mut s = ParamStore::new(seed);
        let [c0, c1, c2] = FEATURE_CHANNELS;
        let convs = [
            Conv::new(&mut s, "phi.conv0", 1, c0, 3, 2, true)?,
            Conv::new(&mut s, "phi.conv1", c0, c1, 3, 2, true)?,
            Conv::new(&mut s, "phi.conv2", c1, c2, 3, 2, true)?,
        ];
        s.freeze();
        Ok(Self { params: s, convs })
    }

    pub fn seed(&self) -> u64 {
        self.params.seed()
    }

    /// `N x 32 x H/8 x W/8` feature maps. Binds its own (constant) weights.
    pub fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Ok(*self.stages(tape, x)?.last().expect("three stages"))
    }

    /// Output of every stage. Leaky ReLU keeps signs, so these also give
    /// the activation pattern.
    pub fn stages(&self, tape: &mut Tape<T>, x: Var) -> Result<Vec<Var>> {
        let p = tape.bind(&self.params)?;
        let mut h = x;
        let mut out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            h = c.forward(tape, &p, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Globally average-pooled features, one 32-vector per image.
    pub fn pooled(&self, images: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone())?;
        let f = self.features(&mut tape, x)?;
        let fv = tape.value(f);
        let s = fv.shape();
        let (n, c, cells) = (s[0], s[1], s[2] * s[3]);
        Ok((0..n)
            .map(|b| {
                (0..c)
                    .map(|k| {
                        let o = (b * c + k) * cells;
                        fv.data()[o..o + cells].iter().map(|v| v.as_f64()).sum::<f64>() / cells as f64
                    })
                    .collect()
            })
            .collect())
    }
}

/// `1/2 mean (phi(x_true) - phi(x_rec))^2`.
pub fn perceptual_loss<T: Scalar>(tape: &mut Tape<T>, phi: &FeatureExtractor<T>, x_true: Var, x_rec: Var) -> Result<Var> {
    check_pair(tape, x_true, x_rec)?;
    let a = phi.features(tape, x_true)?;
    let b = phi.features(tape, x_rec)?;
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    let m = tape.mean(sq)?;
    Ok(tape.scale(m, 0.5)?)
}
