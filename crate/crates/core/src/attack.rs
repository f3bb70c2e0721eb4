//! Poisoning attacks on linear regression.
//!
//! Both attacks share one machinery: every poison point `z_c = (x_c, y_c)` is
//! moved along the gradient of an outer objective with a projected
//! backtracking line search, refitting the model after each accepted move.
//!
//! * **Nopt** maximizes the dispersion objective
//!   `E = | L(D_o ∪ D_p, θ) / L_o − (n_o + n_p) / n_o |` where both losses are
//!   unregularized and `L_o` is the loss of the clean fit on the clean rows.
//! * **Opt** maximizes the unregularized loss of the clean rows, `L(D_o, θ)`.
//!
//! Gradients with respect to a poison point follow from implicit
//! differentiation of the inner problem's stationarity condition; see
//! [`KktSystem`].

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::regress::{self, Family, RegressionModel, SolverOpts};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Nopt,
    Opt,
}

/// Where the denominator `L_o` of the dispersion objective is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceLoss {
    /// Clean-fit model on the clean rows, frozen before the attack starts.
    #[default]
    CleanFit,
    /// Current (poisoned) model on the clean rows, recomputed after every refit.
    Current,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSearch {
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            initial_step: 0.1,
            shrink: 0.5,
            max_backtracks: 20,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Target poisoning rate `n_p / (n_o + n_p)`.
    pub alpha: f64,
    /// Stop when the outer objective changes by less than this over one sweep.
    pub epsilon_conv: f64,
    pub max_outer_iters: usize,
    pub line_search: LineSearch,
    pub seed: u64,
    /// Overrides the poison count derived from `alpha` (used when the
    /// attacker's view is a surrogate of a different size).
    pub poison_count: Option<usize>,
    pub reference: ReferenceLoss,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha: 0.2,
            epsilon_conv: 1e-6,
            max_outer_iters: 100,
            line_search: LineSearch::default(),
            seed: seed::DEFAULT_SEED,
            poison_count: None,
            reference: ReferenceLoss::CleanFit,
        }
    }
}

/// `⌊α n_o / (1 − α)⌋`, so that `p / (n_o + p) ≈ α`.
pub fn poison_count(alpha: f64, n_clean: usize) -> usize {
    (alpha * n_clean as f64 / (1.0 - alpha) + 1e-9).floor() as usize
}

impl AttackConfig {
    fn validate(&self, n_clean: usize) -> Result<usize> {
        if !(self.alpha > 0.0 && self.alpha <= 0.2) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 0.2], got {}",
                self.alpha
            )));
        }
        if !(self.epsilon_conv > 0.0) {
            return Err(Error::InvalidParameter("epsilon_conv must be > 0".into()));
        }
        let ls = &self.line_search;
        if !(ls.initial_step > 0.0 && ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(Error::InvalidParameter("invalid line-search parameters".into()));
        }
        let p = self
            .poison_count
            .unwrap_or_else(|| poison_count(self.alpha, n_clean));
        if p == 0 {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} yields no poison points for {n_clean} clean rows",
                self.alpha
            )));
        }
        Ok(p)
    }
}

/// One outer iteration of an attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(rename = "E")]
    pub e: f64,
    pub objective: f64,
    pub mse_train: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackState {
    pub objective: Objective,
    pub poison: Dataset,
    /// Model trained on clean ∪ poison.
    pub theta: RegressionModel,
    /// Unregularized loss of the clean-fit model on the clean rows.
    pub clean_ref_loss: f64,
    /// Outer objective after every sweep (index 0 is the initial value).
    pub e_trace: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Line-search probes that required a refit.
    pub refits: usize,
}

impl AttackState {
    /// One JSON object per outer iteration.
    pub fn write_trace_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for rec in &self.records {
            serde_json::to_writer(&mut f, rec)?;
            writeln!(f).map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }
}

/// `E = | L(clean ∪ poison, θ) / L_o − (n_o + n_p) / n_o |` with unregularized losses.
pub fn dispersion_objective(
    clean: &Dataset,
    poison: &Dataset,
    theta: &RegressionModel,
    clean_ref_loss: f64,
) -> Result<f64> {
    if !(clean_ref_loss > 0.0) {
        return Err(Error::ZeroReferenceLoss);
    }
    let total = regress::loss(clean, theta, false)? + poison_loss(poison, theta)?;
    let ratio = (clean.len() + poison.len()) as f64 / clean.len() as f64;
    Ok((total / clean_ref_loss - ratio).abs())
}

fn poison_loss(poison: &Dataset, theta: &RegressionModel) -> Result<f64> {
    if poison.is_empty() {
        return Ok(0.0);
    }
    regress::loss(poison, theta, false)
}

/// The Opt baseline's outer objective: unregularized loss of the clean rows.
pub fn opt_objective(clean: &Dataset, theta: &RegressionModel) -> Result<f64> {
    regress::loss(clean, theta, false)
}

/// Linearized stationarity condition of the inner training problem at one
/// training point `z_c`.
///
/// With the per-sample averages `Σ = (1/n) Σᵢ xᵢxᵢᵀ` and `μ = (1/n) Σᵢ xᵢ`,
/// `M = w x_cᵀ + (f(x_c) − y_c) I` and the regularizer curvature `g`, the
/// Jacobian of `θ = (w, b)` with respect to `z_c = (x_c, y_c)` is
///
/// ```text
/// ∇_{z_c} θᵀ = −(1/n) [[M, w], [−x_cᵀ, −1]] · [[Σ + λ' g, μ], [μᵀ, 1]]⁻¹
/// ```
///
/// Because the training loss sums (rather than averages) squared residuals,
/// the penalty enters the averaged system as `λ' = λ / n`.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub n: usize,
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub m: DMatrix<f64>,
    pub reg_block: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub x_c: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct KktJacobian {
    /// Rows follow `z_c = (x_c, y_c)`, columns follow `θ = (w, b)`.
    pub matrix: DMatrix<f64>,
    /// A `1e-8` diagonal jitter was needed to solve the block system.
    pub jittered: bool,
}

impl KktSystem {
    pub fn new(training: &Dataset, theta: &RegressionModel, x_c: &DVector<f64>, y_c: f64) -> Result<Self> {
        let (n, d) = (training.len(), training.dim());
        if theta.dim() != d || x_c.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: theta.dim().max(x_c.len()),
            });
        }
        if n < d + 1 {
            return Err(Error::TooFewRows { needed: d + 1, have: n });
        }
        let nf = n as f64;
        let x = &training.features;
        let sigma = (x.transpose() * x) / nf;
        let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / nf);
        let residual = theta.predict_row(x_c) - y_c;
        let w = theta.weights.clone();
        let m = &w * x_c.transpose() + DMatrix::identity(d, d) * residual;
        let reg_block = DMatrix::identity(d, d) * (theta.lambda * theta.family.curvature() / nf);
        Ok(KktSystem {
            n,
            sigma,
            mu,
            m,
            reg_block,
            weights: w,
            x_c: x_c.clone(),
        })
    }

    /// `[[Σ + λ'g, μ], [μᵀ, 1]]`.
    pub fn block_matrix(&self) -> DMatrix<f64> {
        let d = self.mu.len();
        let mut b = DMatrix::zeros(d + 1, d + 1);
        b.view_mut((0, 0), (d, d)).copy_from(&(&self.sigma + &self.reg_block));
        for j in 0..d {
            b[(j, d)] = self.mu[j];
            b[(d, j)] = self.mu[j];
        }
        b[(d, d)] = 1.0;
        b
    }

    /// `[[M, w], [−x_cᵀ, −1]]`.
    pub fn rhs_matrix(&self) -> DMatrix<f64> {
        let d = self.mu.len();
        let mut r = DMatrix::zeros(d + 1, d + 1);
        r.view_mut((0, 0), (d, d)).copy_from(&self.m);
        for j in 0..d {
            r[(j, d)] = self.weights[j];
            r[(d, j)] = -self.x_c[j];
        }
        r[(d, d)] = -1.0;
        r
    }

    pub fn jacobian(&self) -> Result<KktJacobian> {
        let block = self.block_matrix();
        let rhs_t = self.rhs_matrix().transpose();
        let scale = -1.0 / self.n as f64;
        // J = −(1/n) R B⁻¹  ⇔  Jᵀ = −(1/n) B⁻¹ Rᵀ  (B symmetric)
        if let Some(sol) = solve_checked(&block, &rhs_t) {
            return Ok(KktJacobian {
                matrix: sol.transpose() * scale,
                jittered: false,
            });
        }
        let d1 = block.nrows();
        let jittered = block + DMatrix::identity(d1, d1) * 1e-8;
        match solve_checked(&jittered, &rhs_t) {
            Some(sol) => Ok(KktJacobian {
                matrix: sol.transpose() * scale,
                jittered: true,
            }),
            None => Err(Error::SingularKkt),
        }
    }
}

fn solve_checked(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    (lo * lo > 1e-14 * hi * hi).then(|| chol.solve(b))
}

/// `∇_{z_c} θᵀ` for the training point `z_c = (x_c, y_c)`; `θ` must minimize
/// the training loss on `training`, which must contain `z_c`.
pub fn theta_jacobian(
    training: &Dataset,
    theta: &RegressionModel,
    x_c: &DVector<f64>,
    y_c: f64,
) -> Result<KktJacobian> {
    KktSystem::new(training, theta, x_c, y_c)?.jacobian()
}

/// `Σᵢ rᵢ (xᵢ, 1)`: gradient of the unregularized loss with respect to `θ`.
fn data_loss_gradient(ds: &Dataset, theta: &RegressionModel) -> Result<DVector<f64>> {
    let d = theta.dim();
    let mut g = DVector::zeros(d + 1);
    if ds.is_empty() {
        return Ok(g);
    }
    let r = theta.residuals(ds)?;
    g.rows_mut(0, d).copy_from(&(ds.features.transpose() * &r));
    g[d] = r.sum();
    Ok(g)
}

/// Value, `∇_θ` and the explicit `∂/∂z_c` factor of an outer objective.
struct OuterTerms {
    value: f64,
    grad_theta: DVector<f64>,
    /// Multiplier of `r_c (w, −1)` in the explicit derivative.
    explicit_scale: f64,
}

fn outer_terms(
    objective: Objective,
    reference: ReferenceLoss,
    clean: &Dataset,
    poison: &Dataset,
    theta: &RegressionModel,
    clean_ref_loss: f64,
) -> Result<OuterTerms> {
    match objective {
        Objective::Opt => Ok(OuterTerms {
            value: opt_objective(clean, theta)?,
            grad_theta: data_loss_gradient(clean, theta)?,
            explicit_scale: 0.0,
        }),
        Objective::Nopt => {
            let grad_clean = data_loss_gradient(clean, theta)?;
            let grad_all = &grad_clean + data_loss_gradient(poison, theta)?;
            let total = regress::loss(clean, theta, false)? + poison_loss(poison, theta)?;
            let ratio = (clean.len() + poison.len()) as f64 / clean.len() as f64;
            let denom = match reference {
                ReferenceLoss::CleanFit => clean_ref_loss,
                ReferenceLoss::Current => regress::loss(clean, theta, false)?,
            };
            if !(denom > 0.0) {
                return Err(Error::ZeroReferenceLoss);
            }
            let inner = total / denom - ratio;
            // subgradient +1 at the kink
            let sign = if inner < 0.0 { -1.0 } else { 1.0 };
            let grad_theta = match reference {
                ReferenceLoss::CleanFit => grad_all * (sign / denom),
                ReferenceLoss::Current => {
                    (grad_all / denom - grad_clean * (total / (denom * denom))) * sign
                }
            };
            Ok(OuterTerms {
                value: inner.abs(),
                grad_theta,
                explicit_scale: sign / denom,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn point_gradient(
    objective: Objective,
    reference: ReferenceLoss,
    clean: &Dataset,
    poison: &Dataset,
    training: &Dataset,
    theta: &RegressionModel,
    clean_ref_loss: f64,
    c: usize,
) -> Result<(DVector<f64>, f64)> {
    let terms = outer_terms(objective, reference, clean, poison, theta, clean_ref_loss)?;
    let x_c = poison.row(c);
    let y_c = poison.responses[c];
    let jac = theta_jacobian(training, theta, &x_c, y_c)?;
    let mut grad = &jac.matrix * &terms.grad_theta;
    if terms.explicit_scale != 0.0 {
        let r_c = theta.predict_row(&x_c) - y_c;
        let d = theta.dim();
        for j in 0..d {
            grad[j] += terms.explicit_scale * r_c * theta.weights[j];
        }
        grad[d] -= terms.explicit_scale * r_c;
    }
    Ok((grad, terms.value))
}

/// `∇_{z_c} E` for poison row `c`, where `θ` is the model trained on `clean ∪ poison`.
pub fn objective_gradient(
    clean: &Dataset,
    poison: &Dataset,
    theta: &RegressionModel,
    clean_ref_loss: f64,
    c: usize,
) -> Result<DVector<f64>> {
    let (training, _) = crate::data::merge(clean, poison)?;
    point_gradient(
        Objective::Nopt,
        ReferenceLoss::CleanFit,
        clean,
        poison,
        &training,
        theta,
        clean_ref_loss,
        c,
    )
    .map(|(g, _)| g)
}

/// Gradient of the Opt objective `L(D_o, θ)` with respect to poison row `c`.
pub fn opt_gradient(
    clean: &Dataset,
    poison: &Dataset,
    theta: &RegressionModel,
    c: usize,
) -> Result<DVector<f64>> {
    let (training, _) = crate::data::merge(clean, poison)?;
    point_gradient(
        Objective::Opt,
        ReferenceLoss::CleanFit,
        clean,
        poison,
        &training,
        theta,
        1.0,
        c,
    )
    .map(|(g, _)| g)
}

/// Picks `p` rows of the attacker's view and flips their responses to the
/// opposite end of the box: `y ← 1 − round(y)`.
pub fn initial_poison(view: &Dataset, p: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed::derive(seed, "poison-init"));
    let idx: Vec<usize> = if p <= view.len() {
        rand::seq::index::sample(&mut rng, view.len(), p).into_vec()
    } else {
        (0..p).map(|_| rng.random_range(0..view.len())).collect()
    };
    let mut poison = view.select(&idx).with_provenance(Provenance::Poisoned);
    for y in poison.responses.iter_mut() {
        *y = 1.0 - y.round();
    }
    poison
}

/// Runs the Nopt attack (maximizing the dispersion objective) on the attacker's view.
pub fn nopt_attack(view: &Dataset, cfg: &AttackConfig, family: Family, lambda: f64) -> Result<AttackState> {
    run_attack(Objective::Nopt, view, cfg, family, lambda)
}

/// Runs the Opt baseline (maximizing the clean-row loss) on the attacker's view.
pub fn opt_attack(view: &Dataset, cfg: &AttackConfig, family: Family, lambda: f64) -> Result<AttackState> {
    run_attack(Objective::Opt, view, cfg, family, lambda)
}

/// Clean rows plus a mutable poison block, kept merged so refits avoid copies.
struct Workspace<'a> {
    clean: &'a Dataset,
    training: Dataset,
}

impl Workspace<'_> {
    fn n_clean(&self) -> usize {
        self.clean.len()
    }

    fn poison(&self) -> Dataset {
        let idx: Vec<usize> = (self.n_clean()..self.training.len()).collect();
        self.training.select(&idx).with_provenance(Provenance::Poisoned)
    }

    fn point(&self, c: usize) -> DVector<f64> {
        let i = self.n_clean() + c;
        let d = self.training.dim();
        DVector::from_fn(d + 1, |j, _| {
            if j < d {
                self.training.features[(i, j)]
            } else {
                self.training.responses[i]
            }
        })
    }

    fn set_point(&mut self, c: usize, z: &DVector<f64>) {
        let i = self.n_clean() + c;
        let d = self.training.dim();
        for j in 0..d {
            self.training.features[(i, j)] = z[j];
        }
        self.training.responses[i] = z[d];
    }
}

fn run_attack(
    objective: Objective,
    view: &Dataset,
    cfg: &AttackConfig,
    family: Family,
    lambda: f64,
) -> Result<AttackState> {
    let p = cfg.validate(view.len())?;
    let clean_model = regress::fit_model(view, family, lambda)?;
    let clean_ref_loss = regress::loss(view, &clean_model, false)?;
    if objective == Objective::Nopt && !(clean_ref_loss > 0.0) {
        return Err(Error::ZeroReferenceLoss);
    }

    let init = initial_poison(view, p, cfg.seed);
    let (training, _) = crate::data::merge(view, &init)?;
    let mut ws = Workspace { clean: view, training };
    let d = view.dim();

    let mut theta = regress::fit_model(&ws.training, family, lambda)?;
    let mut refits = 1usize;
    let mut poison = ws.poison();
    let value_of = |poison: &Dataset, theta: &RegressionModel| -> Result<f64> {
        Ok(outer_terms(objective, cfg.reference, view, poison, theta, clean_ref_loss)?.value)
    };
    let mut current = value_of(&poison, &theta)?;

    let record = |iter: usize, value: f64, poison: &Dataset, theta: &RegressionModel, training: &Dataset| -> Result<IterationRecord> {
        let e = outer_terms(Objective::Nopt, cfg.reference, view, poison, theta, clean_ref_loss)
            .map(|t| t.value)
            .unwrap_or(f64::NAN);
        Ok(IterationRecord {
            iter,
            e,
            objective: value,
            mse_train: regress::mse(training, theta)?,
            theta: theta.theta().iter().copied().collect(),
        })
    };

    let mut e_trace = vec![current];
    let mut records = vec![record(0, current, &poison, &theta, &ws.training)?];
    let mut converged = false;
    let mut iterations = 0;
    let ls = &cfg.line_search;

    while iterations < cfg.max_outer_iters {
        let before = current;
        for c in 0..p {
            let (grad, _) = point_gradient(
                objective,
                cfg.reference,
                view,
                &poison,
                &ws.training,
                &theta,
                clean_ref_loss,
                c,
            )?;
            let norm = grad.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                continue;
            }
            let dir = grad.unscale(norm);
            let z = ws.point(c);
            let mut step = ls.initial_step;
            for _ in 0..=ls.max_backtracks {
                let candidate = (&z + &dir * step).map(|v| v.clamp(0.0, 1.0));
                let moved = &candidate - &z;
                if moved.amax() == 0.0 {
                    break;
                }
                ws.set_point(c, &candidate);
                let trial = regress::fit(&ws.training, family, lambda, &SolverOpts::warm(&theta))?.model;
                refits += 1;
                let trial_poison = ws.poison();
                let value = value_of(&trial_poison, &trial)?;
                if value >= current + ls.armijo * grad.dot(&moved) {
                    theta = trial;
                    poison = trial_poison;
                    current = value;
                    break;
                }
                ws.set_point(c, &z);
                step *= ls.shrink;
            }
        }
        iterations += 1;
        e_trace.push(current);
        records.push(record(iterations, current, &poison, &theta, &ws.training)?);
        if (current - before).abs() < cfg.epsilon_conv {
            converged = true;
            break;
        }
    }
    debug_assert!(poison.in_unit_box());
    debug_assert_eq!(poison.dim(), d);

    Ok(AttackState {
        objective,
        poison,
        theta,
        clean_ref_loss,
        e_trace,
        records,
        iterations,
        converged,
        refits,
    })
}
