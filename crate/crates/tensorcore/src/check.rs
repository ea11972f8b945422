//! Central-difference gradient checking in 64-bit.
//!
//! The numeric side never touches the reverse sweep: it only replays the
//! forward closure on perturbed copies of the inputs.
//!
//! A coordinate whose analytic and numeric derivatives differ by less than
//! the rounding error of the difference quotient (`64 eps |f| / h`) counts
//! as exact: at that scale the quotient cannot tell them apart.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub h: f64,
    /// Checks at most this many coordinates per input; `None` checks all.
    pub coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-4,
            coords_per_input: None,
            seed: 0,
        }
    }
}

/// Worst coordinate found by a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Rounding error of one forward evaluation, in units of `eps * |f|`.
pub const ROUNDOFF_ULPS: f64 = 64.0;

/// `|a - n| / (|n| + 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Error of `analytic` against the central difference `(up - down) / 2h`:
/// zero within the quotient's own rounding error, [`rel_err`] otherwise.
pub fn difference_err(analytic: f64, up: f64, down: f64, h: f64) -> f64 {
    let numeric = (up - down) / (2.0 * h);
    let noise = ROUNDOFF_ULPS * f64::EPSILON * up.abs().max(down.abs()) / h;
    if (analytic - numeric).abs() <= noise {
        0.0
    } else {
        rel_err(analytic, numeric)
    }
}

impl GradCheck {
    /// Compares the tape gradient of the scalar `f(inputs)` with central differences.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars = vals
                .iter()
                .map(|v| tape.input(v.clone(), false))
                .collect::<Result<Vec<_>>>()?;
            let root = f(&mut tape, &vars)?;
            if tape.value(root).numel() != 1 {
                return Err(TensorError::NonScalarRoot(tape.shape(root).to_vec()));
            }
            Ok(tape.value(root).item())
        };

        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|v| tape.input(v.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let root = f(&mut tape, &vars)?;
        let grads = tape.backward(root)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradReport {
            max_rel_err: 0.0,
            input: 0,
            coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            coords_checked: 0,
        };
        let mut work = inputs.to_vec();
        for (i, x) in inputs.iter().enumerate() {
            let n = x.numel();
            let coords: Vec<usize> = match self.coords_per_input {
                Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
                _ => (0..n).collect(),
            };
            for c in coords {
                let orig = x.data()[c];
                work[i].data_mut()[c] = orig + self.h;
                let up = eval(&work)?;
                work[i].data_mut()[c] = orig - self.h;
                let down = eval(&work)?;
                work[i].data_mut()[c] = orig;
                let numeric = (up - down) / (2.0 * self.h);
                let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[c]);
                let e = difference_err(analytic, up, down, self.h);
                report.coords_checked += 1;
                if e > report.max_rel_err || e.is_nan() {
                    report = GradReport {
                        max_rel_err: e,
                        input: i,
                        coord: c,
                        analytic,
                        numeric,
                        coords_checked: report.coords_checked,
                    };
                }
            }
        }
        Ok(report)
    }
}
