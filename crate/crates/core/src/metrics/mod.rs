//! Correlation metrics, logistic mapping and paired significance tests.

mod correlation;
mod logistic;
mod significance;
pub mod special;

pub use correlation::{midranks, plcc, srocc};
pub use logistic::{fit_logistic4, initial_guess, Logistic4, LogisticFit};
pub use significance::{
    paired_t_test, paired_tests, wilcoxon_exact, wilcoxon_normal, wilcoxon_signed_rank,
    SignificanceReport, TTest, Wilcoxon, WilcoxonMethod, DEFAULT_ALPHA, WILCOXON_EXACT_MAX_N,
};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub plcc_raw: f64,
    pub plcc_fitted: f64,
    pub srocc: f64,
    pub logistic_params: [f64; 4],
    pub fit_converged: bool,
    pub n: usize,
}

/// Fits the logistic mapping, then reports PLCC before and after mapping and
/// SROCC on the raw predictions.
pub fn evaluate(pred: &[f64], mos: &[f64]) -> Result<EvalReport> {
    let fit = fit_logistic4(pred, mos)?;
    let mapped = fit.curve.map(pred);
    Ok(EvalReport {
        plcc_raw: plcc(pred, mos)?,
        plcc_fitted: plcc(&mapped, mos)?,
        srocc: srocc(pred, mos)?,
        logistic_params: fit.curve.beta,
        fit_converged: fit.converged,
        n: pred.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let mos: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let r = evaluate(&mos, &mos).unwrap();
        assert!((r.plcc_fitted - 1.0).abs() < 1e-9, "{r:?}");
        assert_eq!(r.srocc, 1.0);
    }

    #[test]
    fn reversed_predictor() {
        let mos: Vec<f64> = (0..30).map(|i| (i as f64 / 29.0).powi(2)).collect();
        let pred: Vec<f64> = mos.iter().map(|m| 1.0 - m).collect();
        let r = evaluate(&pred, &mos).unwrap();
        assert_eq!(r.srocc, -1.0);
    }
}
