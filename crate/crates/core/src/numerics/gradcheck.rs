use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Relative error used by the checker:
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn evaluate<F>(f: &mut F, params: &[Tensor]) -> Result<(Tape, Var)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let root = f(&mut tape, &vars)?;
    let value = tape.value(root);
    if value.len() != 1 {
        return Err(Error::Evaluation(format!(
            "objective must be scalar, got shape {:?}",
            value.shape()
        )));
    }
    if !value.values()[0].is_finite() {
        return Err(Error::Evaluation(format!(
            "objective is not finite: {}",
            value.values()[0]
        )));
    }
    Ok((tape, root))
}

/// Maximum relative error between tape gradients and central differences,
/// reported per parameter tensor.
///
/// `f` builds a scalar objective on a fresh tape from the parameter handles.
pub fn finite_difference_report<F>(mut f: F, params: &[Tensor], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let (tape, root) = evaluate(&mut f, params)?;
    let analytic: Vec<Vec<f64>> = tape.backward(root)?.params().collect();

    let mut work = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[pi].values()[i];
            work[pi].values_mut()[i] = orig + epsilon;
            let (t, r) = evaluate(&mut f, &work)?;
            let plus = t.value(r).values()[0];
            work[pi].values_mut()[i] = orig - epsilon;
            let (t, r) = evaluate(&mut f, &work)?;
            let minus = t.value(r).values()[0];
            work[pi].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(a, numeric));
        }
        report.push(worst);
    }
    Ok(report)
}

/// Maximum relative error over every entry of every parameter.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(finite_difference_report(f, params, epsilon)?
        .into_iter()
        .fold(0.0, f64::max))
}
