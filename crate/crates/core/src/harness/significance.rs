use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{paired_tests, SignificanceReport, WilcoxonMethod};

use super::report::{fmt_g, Table};

/// Paired comparison of two predictors against the same MOS.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceOutcome {
    pub n: usize,
    pub mae_a: f64,
    pub mae_b: f64,
    pub alpha: f64,
    /// `None` when every absolute error difference is zero.
    pub report: Option<SignificanceReport>,
}

impl SignificanceOutcome {
    pub fn degenerate(&self) -> bool {
        self.report.is_none()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "n",
            "mae_a",
            "mae_b",
            "mae_diff",
            "t_statistic",
            "t_p_two_sided",
            "wilcoxon_p_two_sided",
            "wilcoxon_p_one_sided",
            "wilcoxon_method",
            "alpha",
            "significant",
            "degenerate",
        ]);
        let nan = f64::NAN;
        let r = self.report;
        let method = match r.map(|r| r.wilcoxon_method) {
            Some(WilcoxonMethod::Exact) => "exact",
            Some(WilcoxonMethod::NormalApprox) => "normal",
            None => "none",
        };
        t.push(vec![
            self.n.to_string(),
            fmt_g(self.mae_a),
            fmt_g(self.mae_b),
            fmt_g(self.mae_b - self.mae_a),
            fmt_g(r.map_or(nan, |r| r.t_statistic)),
            fmt_g(r.map_or(nan, |r| r.t_p_two_sided)),
            fmt_g(r.map_or(nan, |r| r.wilcoxon_p_two_sided)),
            fmt_g(r.map_or(nan, |r| r.wilcoxon_p_one_sided)),
            method.into(),
            fmt_g(self.alpha),
            r.is_some_and(|r| r.all_significant()).to_string(),
            self.degenerate().to_string(),
        ]);
        t
    }
}

/// Absolute errors of both predictors, then paired t and Wilcoxon tests.
pub fn compare_predictions(pred_a: &[f64], pred_b: &[f64], mos: &[f64], alpha: f64) -> Result<SignificanceOutcome> {
    if pred_a.len() != mos.len() || pred_b.len() != mos.len() {
        return Err(Error::Alignment(format!(
            "{} and {} predictions for {} MOS values",
            pred_a.len(),
            pred_b.len(),
            mos.len()
        )));
    }
    let abs_err = |p: &[f64]| p.iter().zip(mos).map(|(p, m)| (p - m).abs()).collect::<Vec<_>>();
    let (ea, eb) = (abs_err(pred_a), abs_err(pred_b));
    let n = mos.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let report = match paired_tests(&ea, &eb, alpha) {
        Ok(r) => Some(r),
        Err(Error::Degenerate(_)) if ea == eb => None,
        Err(e) => return Err(e),
    };
    Ok(SignificanceOutcome {
        n,
        mae_a: mean(&ea),
        mae_b: mean(&eb),
        alpha,
        report,
    })
}

/// Prediction file contents as written by `predictions_table`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub index: Vec<u64>,
    pub prediction: Vec<f64>,
    pub mos: Vec<f64>,
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionFile> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format {
                offset: 0,
                message: format!("{}: missing column `{name}`", path.display()),
            })
    };
    let (ci, cp, cm) = (col("index")?, col("prediction")?, col("mos")?);
    let mut out = PredictionFile {
        index: Vec::new(),
        prediction: Vec::new(),
        mos: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let bad = |what: &str, e: &dyn std::fmt::Display| Error::Format {
            offset,
            message: format!("{}: bad {what}: {e}", path.display()),
        };
        out.index.push(rec[ci].parse().map_err(|e| bad("index", &e))?);
        out.prediction.push(rec[cp].parse().map_err(|e| bad("prediction", &e))?);
        out.mos.push(rec[cm].parse().map_err(|e| bad("mos", &e))?);
    }
    Ok(out)
}

/// Checks that two prediction files describe the same clips in the same
/// order and returns the shared MOS.
pub fn aligned_mos(a: &PredictionFile, b: &PredictionFile) -> Result<Vec<f64>> {
    if a.index != b.index {
        return Err(Error::Alignment(format!(
            "prediction files list different clips ({} vs {} rows)",
            a.index.len(),
            b.index.len()
        )));
    }
    if a.mos != b.mos {
        return Err(Error::Alignment("prediction files disagree on MOS".into()));
    }
    Ok(a.mos.clone())
}
