//! Sign accuracy and mean absolute error over pooled prediction entries.

use crate::error::{Error, Result};

/// Sign with a zero band: `|v| <= band` maps to 0.
pub fn sign(v: f64, band: f64) -> i8 {
    if v.abs() <= band {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one entry".into()));
    }
    Ok(())
}

/// Fraction of entries whose prediction has the same sign (+, 0, -) as the target.
pub fn sign_accuracy(y: &[f64], y_hat: &[f64], zero_band: f64) -> Result<f64> {
    check(y, y_hat)?;
    let hits = y
        .iter()
        .zip(y_hat)
        .filter(|(a, b)| sign(**a, zero_band) == sign(**b, zero_band))
        .count();
    Ok(hits as f64 / y.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}
