//! Means and Student-t confidence intervals over repeated trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least {needed} values, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

/// Label printed next to every interval.
pub const INTERVAL_KIND: &str = "student-t";

/// Per-trial error counts at one sample size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub values: Vec<usize>,
    pub n_label: usize,
}

/// Mean and half-width of the two-sided `level` t-interval.
pub fn mean_ci(series: &ErrorSeries, level: f64) -> Result<(f64, f64), MetricsError> {
    let vals: Vec<f64> = series.values.iter().map(|&v| v as f64).collect();
    mean_ci_values(&vals, level)
}

/// [`mean_ci`] for arbitrary reals.
pub fn mean_ci_values(values: &[f64], level: f64) -> Result<(f64, f64), MetricsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    let m = values.len();
    if m < 2 {
        return Err(MetricsError::InsufficientData { needed: 2, found: m });
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    let half = t_quantile(0.5 + level / 2.0, (m - 1) as f64) * (var / m as f64).sqrt();
    Ok((mean, half))
}

/// Quantile of the Student-t distribution with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(p)
}
