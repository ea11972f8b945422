//! Reverse-mode differentiation over dense n-dimensional arrays.
//!
//! The vocabulary is deliberately small: 2D convolution and its transpose,
//! dense layers, batch normalization, the usual activations, global sum
//! pooling, and the shape plumbing needed to wire U-nets and recurrent cells
//! together. Everything is generic over [`Scalar`] so verification can run in
//! `f64` while training runs in `f32`.
//!
//! ```
//! use hpalf_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.input(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap(), true).unwrap();
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod check;
mod error;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::activation::{Activation, DEFAULT_LEAKY_SLOPE};
pub use ops::norm::{BatchNormConfig, BnMode, RunningStats};
pub use scalar::{DType, Scalar};
pub use tape::{Bound, CustomBackward, Gradients, Tape, Var};
pub use tensor::{ParamId, ParamStore, ParamTensor, Tensor};
