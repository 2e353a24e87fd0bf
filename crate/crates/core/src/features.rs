//! Categorical encodings, design-matrix assembly and z-score scaling.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::catalog::Placement;
use crate::error::{Error, Result};
use crate::logs::TrainingRow;

/// Regression features in design-matrix column order.
pub const FEATURE_NAMES: [&str; 4] = ["placement", "size", "bid", "keyword_value"];

/// Ordered list of ad size labels; a label's code is its 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizeRegistry(Vec<String>);

impl Default for SizeRegistry {
    fn default() -> Self {
        SizeRegistry(vec!["300x250".into(), "728x90".into(), "160x600".into()])
    }
}

impl SizeRegistry {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("size registry is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Validation(format!("size `{l}` registered twice")));
            }
        }
        Ok(SizeRegistry(labels))
    }

    /// Reads a JSON array of size labels in code order.
    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let labels: Vec<String> = serde_json::from_reader(reader)?;
        Self::new(labels.into_iter().map(|l| l.trim().to_string()).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    pub fn code(&self, label: &str) -> Option<u32> {
        self.0.iter().position(|l| l == label).map(|i| i as u32 + 1)
    }

    pub fn label(&self, code: u32) -> Option<&str> {
        (code as usize)
            .checked_sub(1)
            .and_then(|i| self.0.get(i))
            .map(String::as_str)
    }
}

pub fn encode_size(label: &str, registry: &SizeRegistry) -> Result<u32> {
    registry.code(label).ok_or_else(|| Error::Encoding {
        what: "size",
        label: label.to_string(),
    })
}

pub fn encode_placement(placement: Placement) -> u8 {
    placement.code()
}

pub fn decode_placement(code: u8) -> Result<Placement> {
    Placement::from_code(code).ok_or_else(|| Error::Encoding {
        what: "placement code",
        label: code.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<String>,
    pub include_intercept: bool,
    pub size_registry: SizeRegistry,
}

impl FeatureSchema {
    pub fn new(include_intercept: bool, size_registry: SizeRegistry) -> Self {
        FeatureSchema {
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            include_intercept,
            size_registry,
        }
    }

    pub fn arity(&self) -> usize {
        self.features.len()
    }

    pub fn column_count(&self) -> usize {
        self.arity() + usize::from(self.include_intercept)
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema::new(true, SizeRegistry::default())
    }
}

/// Row-major `rows x cols` matrix with its target vector.
///
/// When `intercept` is set, column 0 is the all-ones column and is never scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    target: Vec<f64>,
    intercept: bool,
}

impl DesignMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        target: Vec<f64>,
        intercept: bool,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain("design matrix must be non-empty".into()));
        }
        if data.len() != rows * cols || target.len() != rows {
            return Err(Error::Contract(format!(
                "design matrix {rows}x{cols} given {} entries and {} targets",
                data.len(),
                target.len()
            )));
        }
        if data.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::Validation("design matrix has non-finite entries".into()));
        }
        if intercept && (0..rows).any(|i| data[i * cols] != 1.0) {
            return Err(Error::Contract("intercept column must be all ones".into()));
        }
        Ok(DesignMatrix {
            rows,
            cols,
            data,
            target,
            intercept,
        })
    }

    /// Builds from feature rows, prepending the ones column when `intercept` is set.
    pub fn from_rows(features: &[Vec<f64>], target: &[f64], intercept: bool) -> Result<Self> {
        let n = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("ragged feature rows".into()));
        }
        let cols = n + usize::from(intercept);
        let mut data = Vec::with_capacity(features.len() * cols);
        for r in features {
            if intercept {
                data.push(1.0);
            }
            data.extend_from_slice(r);
        }
        Self::new(features.len(), cols, data, target.to_vec(), intercept)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    /// Index of the first scalable (non-intercept) column.
    pub fn feature_offset(&self) -> usize {
        usize::from(self.intercept)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn build_design_matrix(rows: &[TrainingRow], schema: &FeatureSchema) -> Result<DesignMatrix> {
    if rows.is_empty() {
        return Err(Error::Domain("no training rows".into()));
    }
    let features: Vec<Vec<f64>> = rows.iter().map(|r| r.features().to_vec()).collect();
    let target: Vec<f64> = rows.iter().map(|r| r.ctr).collect();
    if target.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::Validation("ctr outside [0, 1]".into()));
    }
    DesignMatrix::from_rows(&features, &target, schema.include_intercept)
}

/// Per-feature-column mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[inline]
fn scale_value(x: f64, mean: f64, std: f64) -> f64 {
    (x - mean) / std
}

pub fn fit_scaler(matrix: &DesignMatrix) -> Result<ScalerStats> {
    let m = matrix.rows();
    if m < 2 {
        return Err(Error::Domain("scaler needs at least two rows".into()));
    }
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for j in matrix.feature_offset()..matrix.cols() {
        let col = matrix.column(j);
        let mean = col.iter().sum::<f64>() / m as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let std = var.sqrt();
        if std == 0.0 || col.iter().all(|&x| x == col[0]) {
            let idx = j - matrix.feature_offset();
            let column = FEATURE_NAMES
                .get(idx)
                .map_or_else(|| format!("column {idx}"), |s| s.to_string());
            return Err(Error::DegenerateFeature { column });
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(ScalerStats { means, stds })
}

impl ScalerStats {
    pub fn arity(&self) -> usize {
        self.means.len()
    }

    fn check(&self, arity: usize) -> Result<()> {
        if arity != self.arity() || self.stds.len() != self.arity() {
            return Err(Error::Contract(format!(
                "scaler fitted on {} features, given {arity}",
                self.arity()
            )));
        }
        Ok(())
    }
}

pub fn transform(scaler: &ScalerStats, matrix: &DesignMatrix) -> Result<DesignMatrix> {
    let off = matrix.feature_offset();
    scaler.check(matrix.cols() - off)?;
    let mut data = matrix.data().to_vec();
    for i in 0..matrix.rows() {
        for (k, (mean, std)) in scaler.means.iter().zip(&scaler.stds).enumerate() {
            let idx = i * matrix.cols() + off + k;
            data[idx] = scale_value(data[idx], *mean, *std);
        }
    }
    DesignMatrix::new(
        matrix.rows(),
        matrix.cols(),
        data,
        matrix.target().to_vec(),
        matrix.has_intercept(),
    )
}

/// Applies the fitted scaling to one raw feature vector (no intercept slot).
pub fn transform_row(scaler: &ScalerStats, raw: &[f64]) -> Result<Vec<f64>> {
    scaler.check(raw.len())?;
    Ok(raw
        .iter()
        .zip(scaler.means.iter().zip(&scaler.stds))
        .map(|(x, (m, s))| scale_value(*x, *m, *s))
        .collect())
}

pub fn untransform(scaler: &ScalerStats, matrix: &DesignMatrix) -> Result<DesignMatrix> {
    let off = matrix.feature_offset();
    scaler.check(matrix.cols() - off)?;
    let mut data = matrix.data().to_vec();
    for i in 0..matrix.rows() {
        for (k, (mean, std)) in scaler.means.iter().zip(&scaler.stds).enumerate() {
            let idx = i * matrix.cols() + off + k;
            data[idx] = data[idx] * std + mean;
        }
    }
    DesignMatrix::new(
        matrix.rows(),
        matrix.cols(),
        data,
        matrix.target().to_vec(),
        matrix.has_intercept(),
    )
}
