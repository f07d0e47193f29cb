//! Paired two-sided t-test over per-image metric differences.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TTestResult {
    pub t_score: f64,
    pub p_value: f64,
    /// Number of pairs.
    pub n: usize,
}

/// Tests whether the paired differences `a[i] − b[i]` have zero mean.
///
/// Uses the sample (n−1) standard deviation and a Student-t reference with
/// n−1 degrees of freedom. A difference vector with exactly zero variance
/// short-circuits: zero mean gives (t = 0, p = 1), nonzero mean gives
/// (t = ±∞, p = 0).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("paired test needs at least two pairs".into()));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        let t_score = if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        };
        let p_value = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTestResult { t_score, p_value, n });
    }
    let t_score = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
        .map_err(|e| Error::InvalidInput(format!("t reference: {e}")))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t_score.abs()));
    Ok(TTestResult { t_score, p_value, n })
}
