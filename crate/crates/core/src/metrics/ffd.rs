use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{config, dimension, Result};
use crate::mrisim::Image;
use crate::objectives::FeatureExtractor;
use hpalf_tensor::Tensor;

/// Added to both covariance diagonals when either is singular.
pub const DIAGONAL_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Ffd {
    pub value: f64,
    /// Diagonal loading was applied.
    pub loaded: bool,
}

fn moments(x: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let d = x[0].len();
    let m = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mu = DVector::from_fn(d, |j, _| m.column(j).mean());
    let mut c = m.clone();
    for j in 0..d {
        let mj = mu[j];
        c.column_mut(j).iter_mut().for_each(|v| *v -= mj);
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    (mu, cov)
}

fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m);
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn singular(c: &DMatrix<f64>) -> bool {
    let e = c.clone().symmetric_eigenvalues();
    let top = e.iter().copied().fold(0.0, f64::max);
    e.iter().any(|&v| v <= 1e-12 * top.max(f64::MIN_POSITIVE))
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))` over feature rows.
pub fn ffd_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Ffd> {
    if a.len() < 2 || b.len() < 2 {
        return Err(config("each feature set needs at least two rows"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return Err(dimension("feature rows differ in length"));
    }
    let (mu_a, mut ca) = moments(a);
    let (mu_b, mut cb) = moments(b);
    let loaded = singular(&ca) || singular(&cb);
    if loaded {
        for i in 0..d {
            ca[(i, i)] += DIAGONAL_LOADING;
            cb[(i, i)] += DIAGONAL_LOADING;
        }
    }
    // Tr (S_a S_b)^(1/2) = Tr (S_a^(1/2) S_b S_a^(1/2))^(1/2), which keeps
    // everything symmetric; averaging both orders makes the value symmetric
    // in its arguments to rounding
    let cross = |p: &DMatrix<f64>, q: &DMatrix<f64>| {
        let r = sqrt_psd(p.clone());
        let m = &r * q * &r;
        let m = (&m + m.transpose()) * 0.5;
        sqrt_psd(m).trace()
    };
    let tr_cross = 0.5 * (cross(&ca, &cb) + cross(&cb, &ca));
    let value = (&mu_a - &mu_b).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_cross;
    Ok(Ffd {
        value: value.max(0.0),
        loaded,
    })
}

fn stack(images: &[Image]) -> Result<Tensor<f64>> {
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        images[0].same_shape(img)?;
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(&[images.len(), 1, h, w], data)?)
}

/// Fréchet distance between globally pooled frozen-extractor features.
pub fn ffd(a: &[Image], b: &[Image], phi: &FeatureExtractor<f64>) -> Result<Ffd> {
    if a.is_empty() || b.is_empty() {
        return Err(config("empty image set"));
    }
    ffd_features(&phi.pooled(&stack(a)?)?, &phi.pooled(&stack(b)?)?)
}
