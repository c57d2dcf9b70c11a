//! Minimal reverse-mode differentiable kernel set.
//!
//! A [`Tape`] records matrix operations as they execute (define-by-run) and
//! [`Tape::backward`] accumulates gradients into a [`ParamSet`]. Everything is
//! 64-bit floats; shapes are two-dimensional, with vectors as single-row
//! matrices. The op set is exactly what dense layers, embedding lookups and
//! LSTM cells need — no general broadcasting.

mod gradcheck;
mod lstm;
mod params;
mod tape;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use lstm::{lstm_step, LstmCell};
pub use params::{uniform_matrix, ParamId, ParamSet};
pub use tape::{NodeId, Tape};

use ndarray::ArrayView2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("backward requires a scalar (1x1) output")]
    NotScalar,
    #[error("all positions are masked")]
    AllMasked,
}

/// Numerically stable softmax over a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood over the unmasked rows of a logits matrix.
/// Row `t` contributes `-log softmax(logits[t])[targets[t]]` when `mask[t]`
/// is true; masked rows contribute nothing.
pub fn cross_entropy(
    logits: ArrayView2<'_, f64>,
    targets: &[usize],
    mask: &[bool],
) -> Result<f64, NnError> {
    let (rows, classes) = logits.dim();
    if targets.len() != rows || mask.len() != rows {
        return Err(NnError::DimensionMismatch {
            expected: format!("{rows} targets and mask entries"),
            found: format!("{} targets, {} mask entries", targets.len(), mask.len()),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..rows {
        if !mask[t] {
            continue;
        }
        if targets[t] >= classes {
            return Err(NnError::DimensionMismatch {
                expected: format!("target < {classes}"),
                found: format!("{}", targets[t]),
            });
        }
        let row = logits.row(t);
        let row_slice = row.as_slice().expect("contiguous row");
        total += log_sum_exp(row_slice) - row_slice[targets[t]];
        count += 1;
    }
    if count == 0 {
        return Err(NnError::AllMasked);
    }
    Ok(total / count as f64)
}
