//! Performance ratio and code valid ratio.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("offline scheduled length is zero")]
    DivisionByZeroOffline,
    #[error("validation ledger is empty")]
    EmptyLedger,
    #[error("online and offline series differ in length")]
    LengthMismatch,
}

/// `100 * online / offline`.
pub fn performance_ratio(online: f64, offline: f64) -> Result<f64, MetricError> {
    if offline <= 0.0 {
        return Err(MetricError::DivisionByZeroOffline);
    }
    Ok(100.0 * online / offline)
}

/// Ratio of sums over scenarios, as used for a report's Mean column.
pub fn mean_ratio(online: &[f64], offline: &[f64]) -> Result<f64, MetricError> {
    if online.len() != offline.len() {
        return Err(MetricError::LengthMismatch);
    }
    performance_ratio(online.iter().sum(), offline.iter().sum())
}

/// `100 * valid / total`.
pub fn code_valid_ratio(valid: usize, total: usize) -> Result<f64, MetricError> {
    if total == 0 {
        return Err(MetricError::EmptyLedger);
    }
    Ok(100.0 * valid as f64 / total as f64)
}

/// One decimal place with a trailing percent sign.
pub fn format_percent(x: f64) -> String {
    format!("{x:.1}%")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(format_percent(performance_ratio(2.0, 2.0).unwrap()), "100.0%");
        assert_eq!(format_percent(performance_ratio(96.9, 100.0).unwrap()), "96.9%");
        assert_eq!(performance_ratio(1.0, 0.0), Err(MetricError::DivisionByZeroOffline));
        assert_eq!(format_percent(code_valid_ratio(3, 5).unwrap()), "60.0%");
        assert_eq!(code_valid_ratio(7, 7).unwrap(), 100.0);
        assert_eq!(code_valid_ratio(0, 0), Err(MetricError::EmptyLedger));
    }

    #[test]
    fn mean_is_ratio_of_sums() {
        // 50/100 and 90/100 average to 70% per scenario; the ratio of sums
        // weights by offline length instead.
        let m = mean_ratio(&[50.0, 90.0], &[100.0, 300.0]).unwrap();
        assert_eq!(m, 100.0 * 140.0 / 400.0);
    }
}
