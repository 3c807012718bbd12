use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Value of the composite objective `MSE + λ (1 - ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    /// `1 - ρ`, absent when skipped.
    pub pcc: Option<f64>,
    /// The correlation term was dropped because a side had zero variance
    /// (or the batch held a single sample).
    pub pcc_skipped: bool,
}

/// Records the composite loss on `tape`.
///
/// With `lambda == 0` the correlation term is never built, so the result is
/// exactly the MSE. Zero-variance batches fall back to MSE with a warning.
pub fn loss_nodes(tape: &mut Tape, scores: Var, targets: &[f64], lambda: f64) -> Result<(Var, LossValue)> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let mse = tape.mse(scores, targets)?;
    let mse_value = tape.value(mse).values()[0];
    let plain = |skipped| LossValue {
        total: mse_value,
        mse: mse_value,
        pcc: None,
        pcc_skipped: skipped,
    };
    if lambda == 0.0 {
        return Ok((mse, plain(false)));
    }
    if targets.len() < 2 {
        warn!("single-sample batch: correlation term skipped");
        return Ok((mse, plain(true)));
    }
    let pcc = match tape.pcc_loss(scores, targets) {
        Ok(v) => v,
        Err(Error::ZeroVariance(side)) => {
            warn!("zero variance in {side}: correlation term skipped for this batch");
            return Ok((mse, plain(true)));
        }
        Err(e) => return Err(e),
    };
    let pcc_value = tape.value(pcc).values()[0];
    let weighted = tape.scale(pcc, lambda);
    let total = tape.add(mse, weighted)?;
    Ok((
        total,
        LossValue {
            total: tape.value(total).values()[0],
            mse: mse_value,
            pcc: Some(pcc_value),
            pcc_skipped: false,
        },
    ))
}

fn prediction_tensor(pred: &[f64]) -> Result<Tensor> {
    if pred.is_empty() {
        return Err(Error::Degenerate("empty prediction list".into()));
    }
    Tensor::new(vec![pred.len()], pred.to_vec())
}

/// `1 - pearson(pred, target)`, in `[0, 2]`.
pub fn pcc_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(prediction_tensor(pred)?);
    let l = tape.pcc_loss(p, target)?;
    Ok(tape.value(l).values()[0])
}

/// `MSE + λ · pcc_loss`, falling back to MSE when the correlation is
/// undefined.
pub fn total_loss(pred: &[f64], target: &[f64], lambda: f64) -> Result<LossValue> {
    let mut tape = Tape::new();
    let p = tape.constant(prediction_tensor(pred)?);
    Ok(loss_nodes(&mut tape, p, target, lambda)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcc_loss_examples() {
        assert!(pcc_loss(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]).unwrap().abs() < 1e-15);
        assert!((pcc_loss(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() - 2.0).abs() < 1e-15);
        // ρ([1,2,3],[1,2,4]) = 3 / sqrt(2 · 14/3)
        let rho = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        let l = pcc_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((l - (1.0 - rho)).abs() < 1e-14);
        assert!((l - 0.018_019_5).abs() < 1e-6);
    }

    #[test]
    fn total_loss_examples() {
        let t = [0.2, 0.4, 0.9];
        assert_eq!(total_loss(&t, &t, 0.15).unwrap().total, 0.0);

        let p = [0.3, 0.1, 0.7];
        let l = total_loss(&p, &t, 0.0).unwrap();
        let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
        assert_eq!(l.total, mse);
        assert_eq!(l.pcc, None);

        let l = total_loss(&[0.2, 0.8], &[0.8, 0.2], 0.15).unwrap();
        assert!((l.mse - 0.36).abs() < 1e-15);
        assert!((l.total - 0.66).abs() < 1e-15);
    }

    #[test]
    fn constant_predictions_fall_back_to_mse() {
        let l = total_loss(&[0.5, 0.5, 0.5], &[0.1, 0.5, 0.9], 0.15).unwrap();
        assert!(l.pcc_skipped);
        assert_eq!(l.total, l.mse);
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(total_loss(&[0.5, 0.4], &[0.1, 0.5, 0.9], 0.15).is_err());
        assert!(total_loss(&[0.5, 0.4], &[0.1, 0.5], -1.0).is_err());
    }
}
