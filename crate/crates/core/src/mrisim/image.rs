use num_complex::Complex64;

use crate::error::{dimension, Result};

/// Real single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dimension(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `[-1, 1] -> [0, 1]`, the range every metric is computed in.
    pub fn to_unit_range(&self) -> Self {
        self.map(|v| (v + 1.0) / 2.0)
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(dimension(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Complex single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dimension(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    /// The `Re*` embedding `x -> x + 0i`.
    pub fn from_real(img: &Image) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn re(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}
