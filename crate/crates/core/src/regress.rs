//! Linear regression trainers (OLS, Ridge, LASSO, Elastic-net), the
//! regularized squared loss and the mean squared error.
//!
//! The training loss is `½ Σ (wᵀxᵢ + b − yᵢ)² + λ Ω(w)` with
//! `Ω(w) = l1·‖w‖₁ + l2·½‖w‖₂²` where `(l1, l2)` depends on the family:
//! OLS `(0, 0)`, Ridge `(0, 1)`, LASSO `(1, 0)`, Elastic-net `(ρ, 1 − ρ)`.
//! The bias is never penalized.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.5;

/// Validation grid used when λ is chosen automatically.
pub const LAMBDA_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Ols,
    Ridge,
    Lasso,
    #[serde(rename = "elasticnet")]
    ElasticNet { rho: f64 },
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Ols,
        Family::Ridge,
        Family::Lasso,
        Family::ElasticNet { rho: DEFAULT_RHO },
    ];

    /// `(l1, l2)` mixing weights of the penalty.
    pub fn penalty_weights(self) -> (f64, f64) {
        match self {
            Family::Ols => (0.0, 0.0),
            Family::Ridge => (0.0, 1.0),
            Family::Lasso => (1.0, 0.0),
            Family::ElasticNet { rho } => (rho, 1.0 - rho),
        }
    }

    /// Curvature of `Ω` used by the KKT system (zero for the ℓ₁ part).
    pub fn curvature(self) -> f64 {
        self.penalty_weights().1
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::ElasticNet { .. } => "elasticnet",
        }
    }

    pub fn rho(self) -> Option<f64> {
        match self {
            Family::ElasticNet { rho } => Some(rho),
            _ => None,
        }
    }

    fn uses_coordinate_descent(self) -> bool {
        self.penalty_weights().0 > 0.0
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Family::Ols),
            "ridge" => Ok(Family::Ridge),
            "lasso" => Ok(Family::Lasso),
            "elasticnet" | "elastic-net" | "enet" => Ok(Family::ElasticNet { rho: DEFAULT_RHO }),
            other => Err(Error::InvalidParameter(format!("unknown model family `{other}`"))),
        }
    }
}

/// `f(x) = wᵀx + b` together with the regularizer it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelJson", try_from = "ModelJson")]
pub struct RegressionModel {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub family: Family,
    pub lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    family: String,
    lambda: f64,
    rho: Option<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl From<RegressionModel> for ModelJson {
    fn from(m: RegressionModel) -> Self {
        ModelJson {
            family: m.family.name().to_string(),
            lambda: m.lambda,
            rho: m.family.rho(),
            weights: m.weights.iter().copied().collect(),
            bias: m.bias,
        }
    }
}

impl TryFrom<ModelJson> for RegressionModel {
    type Error = Error;

    fn try_from(j: ModelJson) -> Result<Self> {
        let mut family: Family = j.family.parse()?;
        if let (Family::ElasticNet { .. }, Some(rho)) = (family, j.rho) {
            family = Family::ElasticNet { rho };
        }
        Ok(RegressionModel {
            weights: DVector::from_vec(j.weights),
            bias: j.bias,
            family,
            lambda: j.lambda,
        })
    }
}

impl RegressionModel {
    pub fn new(weights: DVector<f64>, bias: f64, family: Family, lambda: f64) -> Self {
        let lambda = if family == Family::Ols { 0.0 } else { lambda };
        RegressionModel {
            weights,
            bias,
            family,
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_row(&self, x: &DVector<f64>) -> f64 {
        self.weights.dot(x) + self.bias
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> DVector<f64> {
        (features * &self.weights).add_scalar(self.bias)
    }

    /// `f(xᵢ) − yᵢ` for every row.
    pub fn residuals(&self, ds: &Dataset) -> Result<DVector<f64>> {
        self.check_dim(ds)?;
        Ok(self.predict(&ds.features) - &ds.responses)
    }

    /// `λ Ω(w)`.
    pub fn penalty(&self) -> f64 {
        let (l1, l2) = self.family.penalty_weights();
        self.lambda * (l1 * self.weights.lp_norm(1) + 0.5 * l2 * self.weights.norm_squared())
    }

    /// `θ = (w, b)` stacked into one vector.
    pub fn theta(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(d + 1, |i, _| if i < d { self.weights[i] } else { self.bias })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_dim(&self, ds: &Dataset) -> Result<()> {
        if ds.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: ds.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOpts {
    pub tol: f64,
    pub max_iters: usize,
    /// Starting point `(w, b)` for coordinate descent.
    pub warm_start: Option<(DVector<f64>, f64)>,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            tol: 1e-8,
            max_iters: 10_000,
            warm_start: None,
        }
    }
}

impl SolverOpts {
    pub fn warm(model: &RegressionModel) -> Self {
        SolverOpts {
            warm_start: Some((model.weights.clone(), model.bias)),
            ..SolverOpts::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: RegressionModel,
    pub train_loss: f64,
    pub train_mse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The normal equations were singular and the minimum-norm solution was used.
    pub min_norm_fallback: bool,
}

/// Minimizes the regularized loss on `ds`.
///
/// OLS and Ridge use the normal equations (falling back to the minimum-norm
/// least-squares solution when they are singular); LASSO and Elastic-net use
/// cyclic coordinate descent with soft-thresholding.
pub fn fit(ds: &Dataset, family: Family, lambda: f64, opts: &SolverOpts) -> Result<FitReport> {
    let d = ds.dim();
    if ds.len() < d + 1 {
        return Err(Error::TooFewRows {
            needed: d + 1,
            have: ds.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let lambda = if family == Family::Ols { 0.0 } else { lambda };

    let (model, iterations, converged, min_norm_fallback) =
        if family.uses_coordinate_descent() && lambda > 0.0 {
            let (w, b, iters, ok) = coordinate_descent(ds, family, lambda, opts);
            (RegressionModel::new(w, b, family, lambda), iters, ok, false)
        } else {
            let (theta, fallback) = solve_normal_equations(ds, lambda * family.curvature());
            let model = RegressionModel::new(theta.rows(0, d).into_owned(), theta[d], family, lambda);
            (model, 1, true, fallback)
        };

    let train_loss = loss(ds, &model, true)?;
    let train_mse = mse(ds, &model)?;
    Ok(FitReport {
        model,
        train_loss,
        train_mse,
        iterations,
        converged,
        min_norm_fallback,
    })
}

/// Shorthand for [`fit`] with default solver options, returning only the model.
pub fn fit_model(ds: &Dataset, family: Family, lambda: f64) -> Result<RegressionModel> {
    Ok(fit(ds, family, lambda, &SolverOpts::default())?.model)
}

/// Normal equations augmented with the bias column:
/// `[[XᵀX + ridge·I, Xᵀ1], [1ᵀX, n]] θ = [Xᵀy, 1ᵀy]`.
fn solve_normal_equations(ds: &Dataset, ridge: f64) -> (DVector<f64>, bool) {
    let (h, rhs) = normal_system(ds, ridge);
    if let Some(chol) = h.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
        if lo * lo > 1e-13 * hi * hi {
            return (chol.solve(&rhs), false);
        }
    }
    let svd = h.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let theta = svd
        .solve(&rhs, eps)
        .expect("svd computed with both factors");
    (theta, true)
}

fn normal_system(ds: &Dataset, ridge: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = (ds.len(), ds.dim());
    let x = &ds.features;
    let mut h = DMatrix::zeros(d + 1, d + 1);
    h.view_mut((0, 0), (d, d)).copy_from(&(x.transpose() * x));
    for j in 0..d {
        let s = x.column(j).sum();
        h[(j, d)] = s;
        h[(d, j)] = s;
        h[(j, j)] += ridge;
    }
    h[(d, d)] = n as f64;
    let mut rhs = DVector::zeros(d + 1);
    rhs.rows_mut(0, d).copy_from(&(x.transpose() * &ds.responses));
    rhs[d] = ds.responses.sum();
    (h, rhs)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn coordinate_descent(
    ds: &Dataset,
    family: Family,
    lambda: f64,
    opts: &SolverOpts,
) -> (DVector<f64>, f64, usize, bool) {
    let (n, d) = (ds.len(), ds.dim());
    let (l1, l2) = family.penalty_weights();
    let x = &ds.features;
    let (mut w, mut b) = match &opts.warm_start {
        Some((w, b)) if w.len() == d => (w.clone(), *b),
        _ => (DVector::zeros(d), ds.responses.mean()),
    };
    let col_sq: Vec<f64> = (0..d).map(|j| x.column(j).norm_squared()).collect();
    // r = y − Xw − b
    let mut r = &ds.responses - x * &w;
    r.add_scalar_mut(-b);

    let mut sweeps = 0;
    while sweeps < opts.max_iters {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d {
            let old = w[j];
            let new = if col_sq[j] == 0.0 {
                0.0
            } else {
                let rho = x.column(j).dot(&r) + col_sq[j] * old;
                soft_threshold(rho, lambda * l1) / (col_sq[j] + lambda * l2)
            };
            let delta = new - old;
            if delta != 0.0 {
                r.axpy(-delta, &x.column(j), 1.0);
                w[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        let shift = r.sum() / n as f64;
        b += shift;
        r.add_scalar_mut(-shift);
        max_change = max_change.max(shift.abs());
        if max_change < opts.tol {
            return (w, b, sweeps, true);
        }
    }
    (w, b, sweeps, false)
}

/// `½ Σ (f(xᵢ) − yᵢ)²`, plus `λ Ω(w)` when `include_regularizer` is set.
pub fn loss(ds: &Dataset, model: &RegressionModel, include_regularizer: bool) -> Result<f64> {
    let r = model.residuals(ds)?;
    let data = 0.5 * r.norm_squared();
    Ok(if include_regularizer {
        data + model.penalty()
    } else {
        data
    })
}

/// `(1/m) Σ (f(xᵢ) − yᵢ)²`.
pub fn mse(ds: &Dataset, model: &RegressionModel) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("mse of an empty dataset"));
    }
    Ok(model.residuals(ds)?.norm_squared() / ds.len() as f64)
}

/// Gradient of the smooth part of the regularized loss with respect to `θ = (w, b)`:
/// `Σ rᵢ (xᵢ, 1) + λ l2 (w, 0)`. The ℓ₁ part is excluded.
pub fn smooth_loss_gradient(ds: &Dataset, model: &RegressionModel) -> Result<DVector<f64>> {
    let r = model.residuals(ds)?;
    let d = model.dim();
    let mut g = DVector::zeros(d + 1);
    g.rows_mut(0, d).copy_from(&(ds.features.transpose() * &r));
    g[d] = r.sum();
    let l2 = model.lambda * model.family.curvature();
    for j in 0..d {
        g[j] += l2 * model.weights[j];
    }
    Ok(g)
}

/// Picks λ from [`LAMBDA_GRID`] by validation MSE (ties go to the smaller λ).
/// OLS always gets λ = 0.
pub fn select_lambda(train: &Dataset, validation: &Dataset, family: Family) -> Result<f64> {
    if family == Family::Ols {
        return Ok(0.0);
    }
    let mut best = (f64::INFINITY, LAMBDA_GRID[0]);
    for &lambda in &LAMBDA_GRID {
        let model = fit_model(train, family, lambda)?;
        let m = mse(validation, &model)?;
        if m < best.0 {
            best = (m, lambda);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use approx::assert_abs_diff_eq;

    fn line_ds() -> Dataset {
        Dataset::from_rows(&[vec![0.0], vec![1.0]], &[0.0, 1.0]).unwrap()
    }

    fn synth(d: usize, n: usize, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticSpec::random(d, n, 0.1, seed)).unwrap().0
    }

    #[test]
    fn ols_interpolates_two_points() {
        let r = fit(&line_ds(), Family::Ols, 0.0, &SolverOpts::default()).unwrap();
        assert_abs_diff_eq!(r.model.weights[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.model.bias, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.train_mse, 0.0, epsilon = 1e-24);
    }

    #[test]
    fn ols_three_points_matches_hand_solution() {
        // Normal equations: [[1.25, 1.5], [1.5, 3]] (w, b) = [1.2, 1.4]
        // => w = 1.0, b = -1/30.
        let ds = Dataset::from_rows(&[vec![0.0], vec![0.5], vec![1.0]], &[0.0, 0.4, 1.0]).unwrap();
        let m = fit_model(&ds, Family::Ols, 0.0).unwrap();
        assert_abs_diff_eq!(m.weights[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.bias, -1.0 / 30.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_forces_zero_lambda() {
        let m = fit_model(&line_ds(), Family::Ols, 3.0).unwrap();
        assert_eq!(m.lambda, 0.0);
    }

    #[test]
    fn ridge_tiny_lambda_matches_ols() {
        let ds = synth(4, 80, 3);
        let ols = fit_model(&ds, Family::Ols, 0.0).unwrap();
        let ridge = fit_model(&ds, Family::Ridge, 1e-12).unwrap();
        assert!((ols.weights - ridge.weights).amax() < 1e-6);
    }

    #[test]
    fn closed_form_gradient_vanishes() {
        for seed in 0..5 {
            let ds = synth(5, 60, seed);
            for (family, lambda) in [(Family::Ols, 0.0), (Family::Ridge, 0.3)] {
                let m = fit_model(&ds, family, lambda).unwrap();
                let g = smooth_loss_gradient(&ds, &m).unwrap();
                assert!(g.amax() <= 1e-8, "{family}: {}", g.amax());
            }
        }
    }

    #[test]
    fn coordinate_descent_satisfies_subgradient_conditions() {
        for seed in 0..5 {
            let ds = synth(5, 60, seed);
            for family in [Family::Lasso, Family::ElasticNet { rho: 0.5 }] {
                let lambda = 0.5;
                let rep = fit(&ds, family, lambda, &SolverOpts::default()).unwrap();
                assert!(rep.converged);
                let m = &rep.model;
                let (l1, _) = family.penalty_weights();
                // smooth gradient (includes the ℓ₂ part); ℓ₁ subgradient must cancel it
                let g = smooth_loss_gradient(&ds, m).unwrap();
                let tol = 1e-6;
                assert!(g[m.dim()].abs() < tol);
                for j in 0..m.dim() {
                    if m.weights[j] != 0.0 {
                        let s = g[j] + lambda * l1 * m.weights[j].signum();
                        assert!(s.abs() < tol, "active coord {j}: {s}");
                    } else {
                        assert!(g[j].abs() <= lambda * l1 + tol, "inactive coord {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn strong_l1_zeroes_weights() {
        let ds = synth(3, 40, 1);
        let m = fit_model(&ds, Family::Lasso, 1e4).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_abs_diff_eq!(m.bias, ds.responses.mean(), epsilon = 1e-12);
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda() {
        for seed in 0..10 {
            let ds = synth(4, 50, seed);
            let norms: Vec<f64> = [0.001, 0.01, 0.1, 1.0, 10.0]
                .iter()
                .map(|&l| fit_model(&ds, Family::Ridge, l).unwrap().weights.norm())
                .collect();
            assert!(norms.windows(2).all(|p| p[0] >= p[1]), "{norms:?}");
        }
    }

    #[test]
    fn collinear_ols_uses_min_norm_fallback() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, i as f64 / 5.0]).collect();
        let ys: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        let r = fit(&ds, Family::Ols, 0.0, &SolverOpts::default()).unwrap();
        assert!(r.min_norm_fallback);
        assert_abs_diff_eq!(r.model.weights[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(r.model.weights[1], 0.5, epsilon = 1e-8);
        assert!(r.train_mse < 1e-16);
    }

    #[test]
    fn loss_and_mse_hand_values() {
        // residuals {0.1, -0.2, 0.1} against the identity line
        let ds = Dataset::from_rows(&[vec![0.0], vec![0.5], vec![1.0]], &[-0.1, 0.7, 0.9]).unwrap();
        let m = RegressionModel::new(DVector::from_element(1, 1.0), 0.0, Family::Ols, 0.0);
        assert_abs_diff_eq!(loss(&ds, &m, false).unwrap(), 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(mse(&ds, &m).unwrap(), 0.02, epsilon = 1e-15);

        let doubled = ds.select(&[0, 1, 2, 0, 1, 2]);
        assert_abs_diff_eq!(loss(&doubled, &m, false).unwrap(), 0.06, epsilon = 1e-15);

        let on_line = Dataset::from_rows(&[vec![0.2], vec![0.4]], &[0.2, 0.4]).unwrap();
        assert_eq!(loss(&on_line, &m, true).unwrap(), 0.0);
        assert!(matches!(mse(&Dataset::empty(1), &m), Err(Error::Empty(_))));
        assert!(loss(&Dataset::empty(2), &m, false).is_err());
    }

    #[test]
    fn mse_is_twice_loss_over_m() {
        let ds = synth(3, 30, 9);
        let m = RegressionModel::new(DVector::from_vec(vec![0.2, -0.1, 0.3]), 0.1, Family::Ols, 0.0);
        let l = loss(&ds, &m, false).unwrap();
        assert_abs_diff_eq!(mse(&ds, &m).unwrap(), 2.0 * l / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn ols_report_loss_identity() {
        let ds = synth(2, 25, 4);
        let r = fit(&ds, Family::Ols, 0.0, &SolverOpts::default()).unwrap();
        assert_abs_diff_eq!(r.train_loss, 25.0 / 2.0 * r.train_mse, epsilon = 1e-14);
    }

    #[test]
    fn ols_beats_dense_grid_in_one_dimension() {
        let ds = synth(1, 30, 11);
        let best = mse(&ds, &fit_model(&ds, Family::Ols, 0.0).unwrap()).unwrap();
        for i in 0..=80 {
            for k in 0..=80 {
                let w = -2.0 + 4.0 * i as f64 / 80.0;
                let b = -1.0 + 2.0 * k as f64 / 80.0;
                let m = RegressionModel::new(DVector::from_element(1, w), b, Family::Ols, 0.0);
                assert!(best <= mse(&ds, &m).unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0.0, 1.0]).unwrap();
        assert!(matches!(fit_model(&ds, Family::Ols, 0.0), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn model_json_round_trip() {
        let m = RegressionModel::new(
            DVector::from_vec(vec![0.25, -1.5]),
            0.125,
            Family::ElasticNet { rho: 0.3 },
            0.01,
        );
        let s = m.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["family"], "elasticnet");
        assert_eq!(v["rho"], 0.3);
        assert_eq!(v["weights"][1], -1.5);
        let back: RegressionModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn lambda_selection_uses_grid() {
        let ds = synth(3, 90, 2);
        let l = select_lambda(&ds.select(&(0..45).collect::<Vec<_>>()), &ds.select(&(45..90).collect::<Vec<_>>()), Family::Ridge).unwrap();
        assert!(LAMBDA_GRID.contains(&l));
        assert_eq!(select_lambda(&ds, &ds, Family::Ols).unwrap(), 0.0);
    }
}
