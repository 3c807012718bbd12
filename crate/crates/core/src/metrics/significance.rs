//! Paired significance tests on per-sample absolute errors.

use crate::error::{Error, Result};

use super::correlation::midranks;
use super::special::{normal_cdf, student_t_two_sided};

/// Sample sizes up to this use exact enumeration for Wilcoxon.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn differences(a: &[f64], b: &[f64], min_len: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "paired samples have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::Degenerate(format!(
            "paired test needs at least {min_len} pairs, got {}",
            a.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite paired difference".into()));
    }
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p_two_sided: f64,
}

/// Two-sided paired t-test on `a - b`.
///
/// With zero spread and a nonzero mean the statistic is infinite; the
/// p-value is then reported as the smallest positive `f64`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    let d = differences(a, b, 2)?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let t = if se > 0.0 {
        mean / se
    } else {
        mean.signum() * f64::INFINITY
    };
    let dof = n - 1.0;
    Ok(TTest {
        t,
        dof,
        p_two_sided: student_t_two_sided(t, dof).max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wilcoxon {
    /// Sum of ranks of the positive differences `a - b`.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub p_two_sided: f64,
    /// Alternative: `a` tends to be smaller than `b`.
    pub p_less: f64,
    pub method: WilcoxonMethod,
}

struct SignedRanks {
    ranks: Vec<f64>,
    w_plus: f64,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    let d: Vec<f64> = differences(a, b, 1)?
        .into_iter()
        .filter(|&v| v != 0.0)
        .collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    Ok(SignedRanks { ranks, w_plus })
}

/// Wilcoxon signed-rank test, exact for `n <= 25` after dropping zeros,
/// normal approximation with continuity and tie corrections above that.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    let sr = signed_ranks(a, b)?;
    if sr.ranks.len() <= WILCOXON_EXACT_MAX_N {
        Ok(exact(&sr))
    } else {
        Ok(normal(&sr))
    }
}

/// Exact null distribution of `W+` regardless of `n`. Cost is
/// `O(n · n(n+1))`.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    signed_ranks(a, b).map(|sr| exact(&sr))
}

pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    signed_ranks(a, b).map(|sr| normal(&sr))
}

fn exact(sr: &SignedRanks) -> Wilcoxon {
    // mid-ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = sr.ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let total = 2f64.powi(doubled.len() as i32);
    let w2 = (2.0 * sr.w_plus).round() as usize;
    let lower: f64 = counts[..=w2].iter().sum::<f64>() / total;
    let upper: f64 = counts[w2..].iter().sum::<f64>() / total;
    Wilcoxon {
        w_plus: sr.w_plus,
        n: doubled.len(),
        p_two_sided: (2.0 * lower.min(upper)).min(1.0),
        p_less: lower,
        method: WilcoxonMethod::Exact,
    }
}

fn normal(sr: &SignedRanks) -> Wilcoxon {
    let n = sr.ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // tie correction: sum over tie groups of (t^3 - t) / 48
    let mut sorted = sr.ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j;
    }
    let sd = var.sqrt();
    let dev = sr.w_plus - mean;
    let z_two = ((dev.abs() - 0.5).max(0.0)) / sd;
    let z_less = (dev + 0.5) / sd;
    Wilcoxon {
        w_plus: sr.w_plus,
        n: sr.ranks.len(),
        p_two_sided: (2.0 * (1.0 - normal_cdf(z_two))).min(1.0),
        p_less: normal_cdf(z_less).min(1.0),
        method: WilcoxonMethod::NormalApprox,
    }
}

/// Table-style summary of the paired comparison of two error vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceReport {
    /// `mean(err_b) - mean(err_a)`; positive when `a` has the smaller error.
    pub mean_abs_err_diff: f64,
    pub t_statistic: f64,
    pub t_p_two_sided: f64,
    pub wilcoxon_p_two_sided: f64,
    /// Alternative: `err_a` tends to be smaller than `err_b`.
    pub wilcoxon_p_one_sided: f64,
    pub wilcoxon_method: WilcoxonMethod,
    pub n: usize,
    pub alpha: f64,
}

impl SignificanceReport {
    pub fn all_significant(&self) -> bool {
        self.t_p_two_sided < self.alpha
            && self.wilcoxon_p_two_sided < self.alpha
            && self.wilcoxon_p_one_sided < self.alpha
    }
}

/// Paired t-test and Wilcoxon tests on absolute errors `err_a`, `err_b`.
pub fn paired_tests(err_a: &[f64], err_b: &[f64], alpha: f64) -> Result<SignificanceReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    differences(err_a, err_b, 6)?;
    let t = paired_t_test(err_a, err_b)?;
    let w = wilcoxon_signed_rank(err_a, err_b)?;
    let n = err_a.len() as f64;
    let mean_a = err_a.iter().sum::<f64>() / n;
    let mean_b = err_b.iter().sum::<f64>() / n;
    Ok(SignificanceReport {
        mean_abs_err_diff: mean_b - mean_a,
        t_statistic: t.t,
        t_p_two_sided: t.p_two_sided,
        wilcoxon_p_two_sided: w.p_two_sided.max(f64::MIN_POSITIVE),
        wilcoxon_p_one_sided: w.p_less.max(f64::MIN_POSITIVE),
        wilcoxon_method: w.method,
        n: err_a.len(),
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_shift_exact_wilcoxon() {
        let b: Vec<f64> = (0..10).map(|i| 1.5 + i as f64 * 0.1).collect();
        let a: Vec<f64> = b.iter().map(|v| v - 1.0).collect();
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.method, WilcoxonMethod::Exact);
        assert_eq!(w.w_plus, 0.0);
        assert!((w.p_two_sided - 2.0 / 1024.0).abs() < 1e-15);
        assert!((w.p_less - 1.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn identical_errors_are_degenerate() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert!(matches!(paired_tests(&a, &a, 0.05), Err(Error::Degenerate(_))));
    }

    #[test]
    fn length_mismatch_is_alignment_error() {
        assert!(matches!(
            paired_tests(&[0.0; 6], &[1.0; 7], 0.05),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn too_few_pairs() {
        assert!(paired_tests(&[0.0; 5], &[1.0; 5], 0.05).is_err());
    }

    #[test]
    fn t_test_symmetric_data_is_not_significant() {
        let a = [1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
        let b = [0.0; 6];
        let t = paired_t_test(&a, &b).unwrap();
        assert_eq!(t.t, 0.0);
        assert!((t.p_two_sided - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_differences_are_dropped() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b = [1.0, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5];
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.n, 6);
        assert!((w.p_less - 1.0 / 64.0).abs() < 1e-15);
    }
}
