use hpalf_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A KL or log argument left the positive reals.
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("undefined at sample point {0}: p_data + p_g = 0")]
    UndefinedPoint(usize),
    #[error("did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    /// Training produced a non-finite loss; carries the batch seed for replay.
    #[error("non-finite loss at step {step} (batch seed {batch_seed}): {detail}")]
    NonFiniteLoss {
        step: usize,
        batch_seed: u64,
        detail: String,
    },
    #[error("TV reconstruction diverged: objective rose after {0} step halvings")]
    TvDiverged(usize),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
