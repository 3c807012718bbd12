//! Four-parameter logistic mapping from objective scores to MOS.
//!
//! `q(s) = β2 + (β1 - β2) / (1 + exp(-(s - β3) / |β4|))`, fitted by
//! Levenberg-Marquardt on the squared error.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::numerics::sigmoid_scalar;

pub const MAX_ITERATIONS: usize = 500;
pub const RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic4 {
    pub beta: [f64; 4],
}

impl Logistic4 {
    pub fn eval(&self, s: f64) -> f64 {
        let [b1, b2, b3, b4] = self.beta;
        b2 + (b1 - b2) * sigmoid_scalar((s - b3) / b4.abs())
    }

    pub fn map(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|&v| self.eval(v)).collect()
    }

    /// `(q(s), ∂q/∂β)`.
    fn eval_with_jacobian(&self, s: f64) -> (f64, [f64; 4]) {
        let [b1, b2, b3, b4] = self.beta;
        let scale = b4.abs();
        let z = (s - b3) / scale;
        let g = sigmoid_scalar(z);
        let one_minus_g = sigmoid_scalar(-z);
        let dg = g * one_minus_g;
        let amp = b1 - b2;
        (
            b2 + amp * g,
            [
                g,
                one_minus_g,
                -amp * dg / scale,
                -amp * dg * z * b4.signum() / scale,
            ],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    pub curve: Logistic4,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sse(curve: &Logistic4, s: &[f64], y: &[f64]) -> f64 {
    s.iter()
        .zip(y)
        .map(|(&si, &yi)| {
            let r = curve.eval(si) - yi;
            r * r
        })
        .sum()
}

fn median(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Data-driven starting point: `β1 = max mos`, `β2 = min mos`,
/// `β3 = median pred`, `β4 = std pred`.
pub fn initial_guess(pred: &[f64], mos: &[f64]) -> Logistic4 {
    let max = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = mos.iter().copied().fold(f64::INFINITY, f64::min);
    Logistic4 {
        beta: [max, min, median(pred), std_dev(pred)],
    }
}

/// Least-squares fit of [`Logistic4`] mapping `pred` onto `mos`.
///
/// Stops when an accepted step changes the loss by less than
/// [`RELATIVE_TOLERANCE`] relative, when the loss reaches zero, or after
/// [`MAX_ITERATIONS`]. Accepted steps never increase the loss. When the
/// iteration budget runs out the best iterate is returned with
/// `converged = false`.
pub fn fit_logistic4(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    if pred.len() != mos.len() {
        return Err(Error::Alignment(format!(
            "{} predictions vs {} MOS values",
            pred.len(),
            mos.len()
        )));
    }
    if pred.len() < 5 {
        return Err(Error::Degenerate(format!(
            "logistic fit needs at least 5 points, got {}",
            pred.len()
        )));
    }
    if mos.iter().all(|&m| m == mos[0]) {
        return Err(Error::ZeroVariance("MOS"));
    }
    let mut curve = initial_guess(pred, mos);
    if !(curve.beta[3] > 0.0) {
        return Err(Error::ZeroVariance("predictions"));
    }
    let mut loss = sse(&curve, pred, mos);
    if !loss.is_finite() {
        return Err(Error::Fit("non-finite residuals at the initial guess".into()));
    }

    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if loss == 0.0 {
            converged = true;
            break;
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&s, &y) in pred.iter().zip(mos) {
            let (q, jac) = curve.eval_with_jacobian(s);
            let j = Vector4::from(jac);
            jtj += j * j.transpose();
            jtr += j * (q - y);
        }
        if !jtr.iter().all(|v| v.is_finite()) {
            return Err(Error::Fit(format!("non-finite Jacobian at iteration {iterations}")));
        }

        let mut accepted = false;
        while damping < 1e16 {
            let mut lhs = jtj;
            for i in 0..4 {
                lhs[(i, i)] += damping * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                damping *= 10.0;
                continue;
            };
            let mut trial = curve;
            for i in 0..4 {
                trial.beta[i] += step[i];
            }
            if trial.beta[3] == 0.0 {
                damping *= 10.0;
                continue;
            }
            let trial_loss = sse(&trial, pred, mos);
            if trial_loss.is_finite() && trial_loss < loss {
                let rel = (loss - trial_loss) / loss;
                curve = trial;
                loss = trial_loss;
                damping = (damping / 10.0).max(1e-12);
                accepted = true;
                if rel < RELATIVE_TOLERANCE {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        // no descent direction left at any damping: a stationary point
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
    }

    Ok(LogisticFit {
        curve,
        sse: loss,
        iterations,
        converged,
    })
}
