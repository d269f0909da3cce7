//! Regression error metrics: MSE, RMSE, MAE, MAPE, SMAPE and per-cycle
//! absolute ("relative") errors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    /// Percent, in `[0, 200]`.
    pub smape: f64,
    pub relative_errors: Vec<f64>,
}

pub const METRICS_HEADER: [&str; 5] = ["mae", "mse", "rmse", "mape", "smape"];

/// `|y_i - y^_i|` per sample. Despite the name there is no
/// denominator.
pub fn relative_errors(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    if y.len() != y_hat.len() {
        return Err(Error::shape(format!(
            "{} truths for {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).collect())
}

pub fn eval_metrics(y: &[f64], y_hat: &[f64]) -> Result<EvalReport> {
    let abs = relative_errors(y, y_hat)?;
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    let nf = n as f64;
    let mut sq = 0.0;
    let mut ape = 0.0;
    let mut sape = 0.0;
    for (i, ((&t, &p), &e)) in y.iter().zip(y_hat).zip(&abs).enumerate() {
        if t == 0.0 {
            return Err(Error::invalid(format!("MAPE undefined: truth is zero at index {i}")));
        }
        let denom = t.abs() + p.abs();
        if denom == 0.0 {
            return Err(Error::invalid(format!("SMAPE undefined: |y| + |y^| is zero at index {i}")));
        }
        sq += e * e;
        ape += e / t.abs();
        sape += 2.0 * e / denom;
    }
    let mse = sq / nf;
    Ok(EvalReport {
        n,
        mse,
        rmse: mse.sqrt(),
        mae: abs.iter().sum::<f64>() / nf,
        mape: 100.0 * ape / nf,
        smape: 100.0 * sape / nf,
        relative_errors: abs,
    })
}

impl EvalReport {
    /// One header row plus one value row: `mae,mse,rmse,mape,smape`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(METRICS_HEADER)?;
        wtr.write_record([self.mae, self.mse, self.rmse, self.mape, self.smape].map(|v| v.to_string()))?;
        wtr.flush().map_err(|e| Error::io("<metrics csv>", e))?;
        Ok(())
    }

    /// `key = value` lines for terminal output.
    pub fn to_text(&self) -> String {
        format!(
            "n = {}\nmae = {}\nmse = {}\nrmse = {}\nmape = {}\nsmape = {}\n",
            self.n, self.mae, self.mse, self.rmse, self.mape, self.smape
        )
    }
}
