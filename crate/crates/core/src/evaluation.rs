//! Validation metrics: standard error, SSE/SSTO and R².

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logs::TrainingRow;
use crate::regression::{predict, Method, RegressionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub y: f64,
    pub y_pred: f64,
    /// Residual y − y_pred.
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub pairs: Vec<Pair>,
    pub sse: f64,
    pub ym: f64,
    pub ssto: f64,
    pub se: f64,
    /// Absent when the observed values are constant (SSTO = 0).
    pub r_squared: Option<f64>,
}

fn check_series(y: &[f64], y_pred: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Contract("empty series".into()));
    }
    if y.len() != y_pred.len() {
        return Err(Error::Contract(format!(
            "series lengths differ: {} vs {}",
            y.len(),
            y_pred.len()
        )));
    }
    Ok(())
}

fn sse(y: &[f64], y_pred: &[f64]) -> f64 {
    y.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ssto(y: &[f64]) -> f64 {
    let ym = mean(y);
    y.iter().map(|v| (v - ym).powi(2)).sum()
}

/// sqrt(Σ(y − y′)² / N).
pub fn standard_error(y: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_series(y, y_pred)?;
    Ok((sse(y, y_pred) / y.len() as f64).sqrt())
}

/// 1 − SSE/SSTO, with SSTO taken about the mean of the observed values.
pub fn r_squared(y: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_series(y, y_pred)?;
    let total = ssto(y);
    if total == 0.0 {
        return Err(Error::Domain("observed values are constant, R² undefined".into()));
    }
    Ok(1.0 - sse(y, y_pred) / total)
}

/// Builds the full report from observed and predicted series.
pub fn report_from_pairs(y: &[f64], y_pred: &[f64]) -> Result<EvaluationReport> {
    check_series(y, y_pred)?;
    let pairs: Vec<Pair> = y
        .iter()
        .zip(y_pred)
        .map(|(&y, &y_pred)| Pair {
            y,
            y_pred,
            f: y - y_pred,
        })
        .collect();
    let n = pairs.len();
    let sse: f64 = pairs.iter().map(|p| p.f * p.f).sum();
    let se = standard_error(y, y_pred)?;
    let rel = (se * se * n as f64 - sse).abs() / sse.max(f64::MIN_POSITIVE);
    if sse > 0.0 && rel > 1e-12 {
        return Err(Error::Contract(format!("SE and SSE disagree (relative {rel:e})")));
    }
    let r_squared = match r_squared(y, y_pred) {
        Ok(r) => Some(r),
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvaluationReport {
        n,
        pairs,
        sse,
        ym: mean(y),
        ssto: ssto(y),
        se,
        r_squared,
    })
}

pub fn evaluate(model: &RegressionModel, validation: &[TrainingRow]) -> Result<EvaluationReport> {
    if validation.is_empty() {
        return Err(Error::Domain("empty validation set".into()));
    }
    let y: Vec<f64> = validation.iter().map(|r| r.ctr).collect();
    let y_pred = validation
        .iter()
        .map(|r| predict(model, &r.features()))
        .collect::<Result<Vec<_>>>()?;
    report_from_pairs(&y, &y_pred)
}

/// `(iteration, cost)` points, 1-based, one per gradient-descent update.
pub fn export_cost_trace(model: &RegressionModel) -> Result<Vec<(usize, f64)>> {
    if model.method() != Method::GradientDescent {
        return Err(Error::NoTrace);
    }
    Ok(model
        .cost_trace
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, *c))
        .collect())
}

pub fn write_trace_csv<W: Write>(series: &[(usize, f64)], mut writer: W) -> Result<()> {
    writeln!(writer, "iteration,cost")?;
    for (i, c) in series {
        writeln!(writer, "{i},{c}")?;
    }
    Ok(())
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
