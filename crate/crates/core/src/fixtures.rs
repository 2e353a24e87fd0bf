//! Small reference datasets bundled with the crate.
//!
//! The same files live under `fixtures/` for use from the command line.

use crate::catalog::{parse_ad_catalog, AdCreative};
use crate::features::SizeRegistry;
use crate::keywords::KeywordMap;
use crate::logs::{parse_training_table, TrainingRow};
use crate::regression::{load_model, RegressionModel};

pub const TRAINING_SAMPLE_CSV: &str = include_str!("../fixtures/training_sample.csv");
pub const VALIDATION_SET_CSV: &str = include_str!("../fixtures/validation_set.csv");
pub const VALIDATION_PAIRS_CSV: &str = include_str!("../fixtures/validation_pairs.csv");
pub const REFERENCE_MODEL_JSON: &str = include_str!("../fixtures/reference_model.json");
pub const SPORTS_KEYWORD_MAP_JSON: &str = include_str!("../fixtures/sports_keyword_map.json");
pub const SAMPLE_ADS_JSON: &str = include_str!("../fixtures/sample_ads.json");

/// Twelve aggregated training rows.
pub fn training_sample() -> Vec<TrainingRow> {
    parse_training_table(TRAINING_SAMPLE_CSV.as_bytes()).expect("bundled fixture parses")
}

/// Six held-out rows.
pub fn validation_set() -> Vec<TrainingRow> {
    parse_training_table(VALIDATION_SET_CSV.as_bytes()).expect("bundled fixture parses")
}

/// Observed and predicted CTRs recorded for the validation set, as `(y, y_pred)`.
pub fn validation_pairs() -> (Vec<f64>, Vec<f64>) {
    parse_pairs(VALIDATION_PAIRS_CSV).expect("bundled fixture parses")
}

/// Normal-equation coefficients on raw features; no scaler.
pub fn reference_model() -> RegressionModel {
    load_model(REFERENCE_MODEL_JSON.as_bytes()).expect("bundled fixture parses")
}

/// Hand-assigned single-cluster sports map.
pub fn sports_keyword_map() -> KeywordMap {
    KeywordMap::load(SPORTS_KEYWORD_MAP_JSON.as_bytes()).expect("bundled fixture parses")
}

pub fn sample_ads() -> Vec<AdCreative> {
    parse_ad_catalog(SAMPLE_ADS_JSON.as_bytes(), &SizeRegistry::default())
        .expect("bundled fixture parses")
}

/// Parses a `y,y_pred` CSV.
pub fn parse_pairs(text: &str) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut y = Vec::new();
    let mut yp = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (a, b) = rec.map_err(|e| crate::Error::parse(i + 2, "row", e.to_string()))?;
        y.push(a);
        yp.push(b);
    }
    Ok((y, yp))
}
