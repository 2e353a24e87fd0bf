//! Linear CTR model: hypothesis, squared-error cost, batch gradient descent and
//! the closed-form least-squares solution.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    build_design_matrix, fit_scaler, transform, transform_row, DesignMatrix, FeatureSchema,
    ScalerStats, SizeRegistry,
};
use crate::keywords::KeywordMap;
use crate::linalg::{normal_system, Qr};
use crate::logs::TrainingRow;

pub const MODEL_VERSION: u32 = 1;

/// Largest accepted relative residual of the normal equations.
pub const NORMAL_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradientDescent,
    NormalEquation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub method: Method,
    pub include_intercept: bool,
    pub scale_features: bool,
    /// Stop early once an update lowers the cost by less than this. Off by default.
    pub tolerance: Option<f64>,
}

impl TrainingConfig {
    pub fn gradient_descent() -> Self {
        TrainingConfig {
            alpha: 0.01,
            iterations: 400,
            method: Method::GradientDescent,
            include_intercept: true,
            scale_features: true,
            tolerance: None,
        }
    }

    pub fn normal_equation() -> Self {
        TrainingConfig {
            method: Method::NormalEquation,
            scale_features: false,
            ..Self::gradient_descent()
        }
    }

    pub fn for_method(method: Method) -> Self {
        match method {
            Method::GradientDescent => Self::gradient_descent(),
            Method::NormalEquation => Self::normal_equation(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.method == Method::GradientDescent {
            if !(self.alpha.is_finite() && self.alpha > 0.0) {
                return Err(Error::Validation(format!("learning rate {} must be positive", self.alpha)));
            }
            if self.iterations == 0 {
                return Err(Error::Validation("iterations must be positive".into()));
            }
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::gradient_descent()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub theta: Vec<f64>,
    pub schema: FeatureSchema,
    pub scaler: Option<ScalerStats>,
    pub config: TrainingConfig,
    /// Cost after each gradient-descent update; empty for the normal equation.
    pub cost_trace: Vec<f64>,
    pub keyword_map_ref: Option<String>,
}

impl RegressionModel {
    /// A model from known coefficients on raw (unscaled) features.
    pub fn from_theta(theta: Vec<f64>, schema: FeatureSchema) -> Result<Self> {
        if theta.len() != schema.column_count() {
            return Err(Error::Contract(format!(
                "theta has {} entries, schema needs {}",
                theta.len(),
                schema.column_count()
            )));
        }
        let config = TrainingConfig {
            include_intercept: schema.include_intercept,
            ..TrainingConfig::normal_equation()
        };
        Ok(RegressionModel {
            theta,
            schema,
            scaler: None,
            config,
            cost_trace: Vec::new(),
            keyword_map_ref: None,
        })
    }

    pub fn method(&self) -> Method {
        self.config.method
    }
}

/// θᵀx for one design-matrix row (intercept slot included when present).
#[inline]
pub fn hypothesis(theta: &[f64], row: &[f64]) -> f64 {
    theta.iter().zip(row).map(|(t, x)| t * x).sum()
}

/// Predicted CTR for a raw feature vector `[placement, size, bid, keyword_value]`.
///
/// Not clamped to [0, 1].
pub fn predict(model: &RegressionModel, raw: &[f64]) -> Result<f64> {
    if raw.len() != model.schema.arity() {
        return Err(Error::Contract(format!(
            "expected {} features, got {}",
            model.schema.arity(),
            raw.len()
        )));
    }
    let scaled;
    let features = match &model.scaler {
        Some(s) => {
            scaled = transform_row(s, raw)?;
            scaled.as_slice()
        }
        None => raw,
    };
    let (icpt, rest) = if model.schema.include_intercept {
        (model.theta[0], &model.theta[1..])
    } else {
        (0.0, &model.theta[..])
    };
    Ok(icpt + hypothesis(rest, features))
}

fn check_dims(theta: &[f64], matrix: &DesignMatrix) -> Result<()> {
    if theta.len() != matrix.cols() {
        return Err(Error::Contract(format!(
            "theta has {} entries, matrix has {} columns",
            theta.len(),
            matrix.cols()
        )));
    }
    Ok(())
}

/// J(θ) = (1/2m) Σ (θᵀxᵢ − yᵢ)².
pub fn cost(theta: &[f64], matrix: &DesignMatrix) -> Result<f64> {
    check_dims(theta, matrix)?;
    Ok(cost_unchecked(theta, matrix))
}

fn cost_unchecked(theta: &[f64], matrix: &DesignMatrix) -> f64 {
    let m = matrix.rows();
    let sse: f64 = (0..m)
        .map(|i| (hypothesis(theta, matrix.row(i)) - matrix.target()[i]).powi(2))
        .sum();
    sse / (2.0 * m as f64)
}

/// ∂J/∂θⱼ = (1/m) Σ (θᵀxᵢ − yᵢ) xᵢⱼ.
pub fn gradient(theta: &[f64], matrix: &DesignMatrix) -> Result<Vec<f64>> {
    check_dims(theta, matrix)?;
    let mut grad = vec![0.0; theta.len()];
    gradient_into(theta, matrix, &mut grad);
    Ok(grad)
}

fn gradient_into(theta: &[f64], matrix: &DesignMatrix, grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for i in 0..matrix.rows() {
        let row = matrix.row(i);
        let r = hypothesis(theta, row) - matrix.target()[i];
        for (g, x) in grad.iter_mut().zip(row) {
            *g += r * x;
        }
    }
    let m = matrix.rows() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
}

/// Batch gradient descent with simultaneous updates.
///
/// Returns the final θ and the cost after every update.
pub fn gradient_descent(
    matrix: &DesignMatrix,
    config: &TrainingConfig,
    theta_init: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(theta_init, matrix)?;
    config.validate()?;
    let mut theta = theta_init.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut trace = Vec::with_capacity(config.iterations);
    let mut prev = cost_unchecked(&theta, matrix);
    for t in 0..config.iterations {
        gradient_into(&theta, matrix, &mut grad);
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= config.alpha * g;
        }
        let c = cost_unchecked(&theta, matrix);
        if !c.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: t + 1 });
        }
        trace.push(c);
        if let Some(tol) = config.tolerance {
            if prev - c < tol {
                break;
            }
        }
        prev = c;
    }
    Ok((theta, trace))
}

/// Least-squares θ solving (XᵀX)θ = Xᵀy.
///
/// Solved through a Householder QR of X rather than by forming the inverse; the
/// normal-equation residual is verified before returning.
pub fn normal_equation(matrix: &DesignMatrix) -> Result<Vec<f64>> {
    let (m, n) = (matrix.rows(), matrix.cols());
    let qr = Qr::factor(m, n, matrix.data())?;
    if qr.is_rank_deficient() {
        let c = qr.condition_estimate();
        return Err(Error::Singular { condition: c * c });
    }
    let theta = qr.solve_least_squares(matrix.target());
    let residual = normal_equation_residual(matrix, &theta);
    if residual.is_nan() || residual >= NORMAL_RESIDUAL_TOL {
        let c = qr.condition_estimate();
        return Err(Error::Singular { condition: c * c });
    }
    Ok(theta)
}

/// ‖(XᵀX)θ − Xᵀy‖∞ relative to ‖XᵀX‖∞‖θ‖∞ + ‖Xᵀy‖∞.
pub fn normal_equation_residual(matrix: &DesignMatrix, theta: &[f64]) -> f64 {
    let (m, n) = (matrix.rows(), matrix.cols());
    let (xtx, xty) = normal_system(m, n, matrix.data(), matrix.target());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut res = 0.0f64;
    let mut xtx_norm = 0.0f64;
    for i in 0..n {
        let row = &xtx[i * n..(i + 1) * n];
        res = res.max((hypothesis(row, theta) - xty[i]).abs());
        xtx_norm = xtx_norm.max(row.iter().map(|v| v.abs()).sum());
    }
    let scale = xtx_norm * inf(theta) + inf(&xty);
    if scale == 0.0 {
        res
    } else {
        res / scale
    }
}

/// Classical OLS standard errors: sqrt(σ̂² · diag((XᵀX)⁻¹)) with σ̂² = SSE/(m − p).
pub fn coefficient_standard_errors(matrix: &DesignMatrix, theta: &[f64]) -> Result<Vec<f64>> {
    check_dims(theta, matrix)?;
    let (m, n) = (matrix.rows(), matrix.cols());
    if m <= n {
        return Err(Error::Domain("need more rows than coefficients".into()));
    }
    let qr = Qr::factor(m, n, matrix.data())?;
    if qr.is_rank_deficient() {
        let c = qr.condition_estimate();
        return Err(Error::Singular { condition: c * c });
    }
    let sse = 2.0 * m as f64 * cost_unchecked(theta, matrix);
    let sigma2 = sse / (m - n) as f64;
    let inv = qr.gram_inverse();
    Ok((0..n).map(|j| (sigma2 * inv[j * n + j]).sqrt()).collect())
}

/// Trains on `rows`, freezing a reference to the keyword map that produced them.
pub fn train(
    rows: &[TrainingRow],
    map: Option<&KeywordMap>,
    registry: &SizeRegistry,
    config: &TrainingConfig,
) -> Result<RegressionModel> {
    config.validate()?;
    let schema = FeatureSchema::new(config.include_intercept, registry.clone());
    let raw = build_design_matrix(rows, &schema)?;
    let (matrix, scaler) = if config.scale_features {
        let s = fit_scaler(&raw)?;
        (transform(&s, &raw)?, Some(s))
    } else {
        (raw, None)
    };
    let (theta, cost_trace) = match config.method {
        Method::GradientDescent => {
            gradient_descent(&matrix, config, &vec![0.0; matrix.cols()])?
        }
        Method::NormalEquation => (normal_equation(&matrix)?, Vec::new()),
    };
    Ok(RegressionModel {
        theta,
        schema,
        scaler,
        config: *config,
        cost_trace,
        keyword_map_ref: map.map(KeywordMap::reference),
    })
}

/// One-feature fit with intercept. Returns (θ₀, θ₁) in the space trained on:
/// standardized `x` when `config.scale_features`, raw `x` otherwise.
pub fn simple_regression(x: &[f64], y: &[f64], config: &TrainingConfig) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Contract("x and y lengths differ".into()));
    }
    if x.len() < 2 {
        return Err(Error::Domain("need at least two points".into()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateFeature { column: "x".into() });
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let mut matrix = DesignMatrix::from_rows(&rows, y, true)?;
    if config.scale_features {
        let s = fit_scaler(&matrix).map_err(|e| match e {
            Error::DegenerateFeature { .. } => Error::DegenerateFeature { column: "x".into() },
            other => other,
        })?;
        matrix = transform(&s, &matrix)?;
    }
    let theta = match config.method {
        Method::GradientDescent => gradient_descent(&matrix, config, &[0.0, 0.0])?.0,
        Method::NormalEquation => normal_equation(&matrix)?,
    };
    Ok((theta[0], theta[1]))
}

#[derive(Serialize, Deserialize)]
struct ModelConfigFile {
    alpha: f64,
    iterations: usize,
    scale_features: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    method: Method,
    theta: Vec<f64>,
    schema: FeatureSchema,
    scaler: Option<ScalerStats>,
    config: ModelConfigFile,
    cost_trace: Vec<f64>,
    keyword_map_ref: Option<String>,
}

pub fn save_model<W: Write>(model: &RegressionModel, mut writer: W) -> Result<()> {
    let file = ModelFile {
        version: MODEL_VERSION,
        method: model.config.method,
        theta: model.theta.clone(),
        schema: model.schema.clone(),
        scaler: model.scaler.clone(),
        config: ModelConfigFile {
            alpha: model.config.alpha,
            iterations: model.config.iterations,
            scale_features: model.config.scale_features,
            tolerance: model.config.tolerance,
        },
        cost_trace: model.cost_trace.clone(),
        keyword_map_ref: model.keyword_map_ref.clone(),
    };
    serde_json::to_writer_pretty(&mut writer, &file)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn load_model<R: Read>(reader: R) -> Result<RegressionModel> {
    let value: serde_json::Value =
        serde_json::from_reader(reader).map_err(|e| Error::Load(e.to_string()))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(MODEL_VERSION) => {}
        Some(v) => return Err(Error::Load(format!("unsupported model version {v}"))),
        None => return Err(Error::Load("missing version tag".into())),
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Load(e.to_string()))?;
    let config = TrainingConfig {
        alpha: file.config.alpha,
        iterations: file.config.iterations,
        method: file.method,
        include_intercept: file.schema.include_intercept,
        scale_features: file.config.scale_features,
        tolerance: file.config.tolerance,
    };
    if file.theta.len() != file.schema.column_count() {
        return Err(Error::Load("theta length does not match schema".into()));
    }
    if file.scaler.is_some() != config.scale_features {
        return Err(Error::Load("scaler presence disagrees with scale_features".into()));
    }
    if let Some(s) = &file.scaler {
        if s.means.len() != file.schema.arity() || s.stds.len() != file.schema.arity() {
            return Err(Error::Load("scaler arity does not match schema".into()));
        }
    }
    if file.theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Load("theta has non-finite entries".into()));
    }
    Ok(RegressionModel {
        theta: file.theta,
        schema: file.schema,
        scaler: file.scaler,
        config,
        cost_trace: file.cost_trace,
        keyword_map_ref: file.keyword_map_ref,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn sample_matrix(intercept: bool) -> DesignMatrix {
        build_design_matrix(
            &fixtures::training_sample(),
            &FeatureSchema::new(intercept, SizeRegistry::default()),
        )
        .unwrap()
    }

    #[test]
    fn reference_theta_prediction() {
        let model = fixtures::reference_model();
        let p = predict(&model, &[1.0, 1.0, 22.0, 51.0]).unwrap();
        // dot product of the published coefficients
        let dot = -0.157028 + 0.020795 + 0.002185 + 22.0 * 0.002040 + 51.0 * 0.002696;
        assert!((p - dot).abs() < 1e-15);
        assert!((p - 0.048338).abs() < 2e-4);
        assert!(matches!(predict(&model, &[1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn trivial_thetas() {
        let schema = FeatureSchema::default();
        let zero = RegressionModel::from_theta(vec![0.0; 5], schema.clone()).unwrap();
        let c = RegressionModel::from_theta(vec![0.37, 0.0, 0.0, 0.0, 0.0], schema).unwrap();
        for raw in [[1.0, 1.0, 22.0, 51.0], [0.0, 3.0, 5.0, 47.0]] {
            assert_eq!(predict(&zero, &raw).unwrap(), 0.0);
            assert_eq!(predict(&c, &raw).unwrap(), 0.37);
        }
    }

    #[test]
    fn cost_at_zero_theta() {
        let m = sample_matrix(true);
        let y = m.target();
        let oracle: f64 = y.iter().map(|v| v * v).sum::<f64>() / 24.0;
        let c = cost(&[0.0; 5], &m).unwrap();
        assert!((c - oracle).abs() < 1e-18);
        assert!((c - 9.494_587_5e-4).abs() < 1e-12);
        assert!(cost(&[0.0; 4], &m).is_err());
    }

    #[test]
    fn cost_zero_for_exact_fit() {
        let m = DesignMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[3.0, 5.0, 7.0], true)
            .unwrap();
        assert_eq!(cost(&[1.0, 2.0], &m).unwrap(), 0.0);
    }

    #[test]
    fn cost_grows_away_from_optimum() {
        let m = sample_matrix(true);
        let opt = normal_equation(&m).unwrap();
        let dir = [0.01, -0.002, 0.003, 0.0001, -0.0002];
        let at = |s: f64| {
            let th: Vec<f64> = opt.iter().zip(dir).map(|(o, d)| o + s * d).collect();
            cost(&th, &m).unwrap()
        };
        let mut prev = at(0.0);
        for s in [0.5, 1.0, 2.0, 4.0] {
            let c = at(s);
            assert!(c > prev);
            prev = c;
        }
        assert!(at(-1.0) > at(0.0));
    }

    #[test]
    fn zero_target_stays_put() {
        let m = DesignMatrix::from_rows(&[vec![1.0], vec![2.0]], &[0.0, 0.0], true).unwrap();
        let (th, trace) = gradient_descent(&m, &TrainingConfig::gradient_descent(), &[0.0, 0.0]).unwrap();
        assert_eq!(th, vec![0.0, 0.0]);
        assert_eq!(trace.len(), 400);
        assert!(trace.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn intercept_only_closed_form() {
        let c = 0.07;
        let m = DesignMatrix::new(4, 1, vec![1.0; 4], vec![c; 4], true).unwrap();
        for iters in [1usize, 10, 400] {
            let cfg = TrainingConfig {
                iterations: iters,
                ..TrainingConfig::gradient_descent()
            };
            let (th, _) = gradient_descent(&m, &cfg, &[0.0]).unwrap();
            let oracle = c * (1.0 - (1.0f64 - 0.01).powi(iters as i32));
            assert!((th[0] - oracle).abs() < 1e-15, "{iters}: {} vs {oracle}", th[0]);
        }
    }

    #[test]
    fn divergence_reported() {
        let m = DesignMatrix::from_rows(&[vec![1e3], vec![-2e3]], &[0.5, 0.1], true).unwrap();
        let cfg = TrainingConfig {
            alpha: 10.0,
            iterations: 10_000,
            ..TrainingConfig::gradient_descent()
        };
        assert!(matches!(
            gradient_descent(&m, &cfg, &[0.0, 0.0]),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn early_stop_tolerance() {
        let m = sample_matrix(true);
        let s = fit_scaler(&m).unwrap();
        let z = transform(&s, &m).unwrap();
        let cfg = TrainingConfig {
            iterations: 100_000,
            tolerance: Some(1e-12),
            ..TrainingConfig::gradient_descent()
        };
        let (_, trace) = gradient_descent(&z, &cfg, &[0.0; 5]).unwrap();
        assert!(trace.len() < 100_000);
    }

    #[test]
    fn exact_line() {
        let m = DesignMatrix::from_rows(&[vec![1.0], vec![2.0]], &[2.0, 4.0], true).unwrap();
        let th = normal_equation(&m).unwrap();
        assert!(th[0].abs() < 1e-14 && (th[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn duplicated_column_singular() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let m = DesignMatrix::from_rows(&rows, &y, true).unwrap();
        match normal_equation(&m) {
            Err(Error::Singular { condition }) => assert!(condition > 1e20),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sample_table_normal_equation_residual() {
        let m = sample_matrix(true);
        let th = normal_equation(&m).unwrap();
        assert!(normal_equation_residual(&m, &th) < 1e-12);
    }

    #[test]
    fn simple_regressions() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 6.0, 9.0, 12.0];
        let (a, b) = simple_regression(&x, &y, &TrainingConfig::normal_equation()).unwrap();
        assert!(a.abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!(matches!(
            simple_regression(&[2.0, 2.0], &[0.0, 1.0], &TrainingConfig::normal_equation()),
            Err(Error::DegenerateFeature { .. })
        ));
    }

    #[test]
    fn train_dispatches() {
        let rows = fixtures::training_sample();
        let reg = SizeRegistry::default();
        let gd = train(&rows, None, &reg, &TrainingConfig::gradient_descent()).unwrap();
        assert_eq!(gd.cost_trace.len(), 400);
        assert!(gd.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(gd.scaler.is_some());
        let ne = train(&rows, None, &reg, &TrainingConfig::normal_equation()).unwrap();
        assert!(ne.cost_trace.is_empty() && ne.scaler.is_none());
        assert!(matches!(
            train(&[], None, &reg, &TrainingConfig::normal_equation()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn model_round_trip() {
        let rows = fixtures::training_sample();
        let map = fixtures::sports_keyword_map();
        let m = train(&rows, Some(&map), &SizeRegistry::default(), &TrainingConfig::gradient_descent()).unwrap();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.keyword_map_ref, Some(map.reference()));

        let text = String::from_utf8(buf).unwrap();
        assert!(matches!(load_model(&text.as_bytes()[..text.len() / 2]), Err(Error::Load(_))));
        let bumped = text.replacen("\"version\": 1", "\"version\": 99", 1);
        assert!(matches!(load_model(bumped.as_bytes()), Err(Error::Load(msg)) if msg.contains("99")));
    }
}
