//! Error metrics over paired predictions and targets (pascals).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean absolute error with the population standard deviation of the
/// absolute errors, reported as `mean ± std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    pub mean: f64,
    pub std: f64,
}

fn check_pairs(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("empty prediction list".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} predictions, {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<Mae> {
    check_pairs(predictions, targets)?;
    let n = predictions.len() as f64;
    let abs: Vec<f64> = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .collect();
    let mean = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    Ok(Mae {
        mean,
        std: var.sqrt(),
    })
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pairs(predictions, targets)?;
    let n = predictions.len() as f64;
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    Ok(mse.sqrt())
}
