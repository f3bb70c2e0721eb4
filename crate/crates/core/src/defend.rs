//! Subset-selection defenses against training-set poisoning.
//!
//! [`proda_defend`] samples `β` random groups of `γ` rows, fits a model to each
//! group, keeps the `n` rows closest to that model, refits on them and returns
//! the subset with the lowest MSE. `β` is the smallest integer with
//! `(1 − (1 − α)^γ)^β ≤ ε`, so with probability at least `1 − ε` one of the
//! groups contains no poison at all.
//!
//! [`trim_defend`] is the alternating-minimization baseline: fit on a subset,
//! re-select the `n` smallest residuals, repeat until the subset is stable.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::regress::{self, Family, RegressionModel, SolverOpts};
use crate::seed;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_ALPHA_ASSUMED: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProdaConfig {
    /// Group size; at least `d + 1`.
    pub gamma: usize,
    /// Failure probability budget.
    pub epsilon: f64,
    /// Defender's estimate of the poisoning rate.
    pub alpha_assumed: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl ProdaConfig {
    /// `γ = d + 1`, `ε = 1e-5`, `α = 0.2`.
    pub fn for_dim(d: usize) -> Self {
        ProdaConfig {
            gamma: d + 1,
            epsilon: DEFAULT_EPSILON,
            alpha_assumed: DEFAULT_ALPHA_ASSUMED,
            seed: seed::DEFAULT_SEED,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseResult {
    /// Selected rows of the defended dataset, ascending.
    pub subset_indices: Vec<usize>,
    pub model: RegressionModel,
    pub subset_mse: f64,
    /// Proda: MSE of each group's refit; TRIM: MSE after each iteration.
    #[serde(rename = "group_mses")]
    pub group_mse_trace: Vec<f64>,
    /// Proda: number of groups; TRIM: iterations performed.
    pub beta_used: usize,
    pub wall_time_s: f64,
}

impl DefenseResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_rate(alpha: f64, epsilon: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

/// Number of Proda groups: `⌈log ε / log(1 − (1 − α)^γ)⌉`, and 1 when `α = 0`.
pub fn compute_beta(alpha: f64, gamma: usize, epsilon: f64) -> Result<usize> {
    check_rate(alpha, epsilon)?;
    if gamma == 0 {
        return Err(Error::InvalidParameter("gamma must be >= 1".into()));
    }
    if alpha == 0.0 {
        return Ok(1);
    }
    let log_q = log_group_failure(alpha, gamma)?;
    let log_eps = epsilon.ln();
    // q^β > ε, evaluated in log space so huge β neither overflows nor loses
    // the tiny clean-group probability to rounding in 1 − (1 − α)^γ
    let fails = |b: f64| b * log_q > log_eps;
    let mut beta = (log_eps / log_q).ceil().max(1.0);
    while fails(beta) {
        beta += 1.0;
    }
    while beta > 1.0 && !fails(beta - 1.0) {
        beta -= 1.0;
    }
    Ok(beta as usize)
}

/// `ln(1 − (1 − α)^γ)`, the log-probability that one group holds a poisoned row.
fn log_group_failure(alpha: f64, gamma: usize) -> Result<f64> {
    let gamma_i = i32::try_from(gamma).map_err(|_| Error::InvalidParameter("gamma too large".into()))?;
    let clean = (1.0 - alpha).powi(gamma_i);
    if clean <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "(1 - alpha)^gamma underflows for alpha = {alpha}, gamma = {gamma}"
        )));
    }
    Ok((-clean).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub beta: usize,
    /// `β · n`.
    pub iterations_bound: u64,
    /// Probability that at least one group is poison-free.
    pub p_u: f64,
    pub wallclock_estimate_s: f64,
}

pub fn estimate_complexity(
    alpha: f64,
    gamma: usize,
    epsilon: f64,
    n: usize,
    rate_iters_per_s: f64,
) -> Result<ComplexityEstimate> {
    if !(rate_iters_per_s > 0.0) {
        return Err(Error::InvalidParameter("iteration rate must be > 0".into()));
    }
    let beta = compute_beta(alpha, gamma, epsilon)?;
    let log_q = log_group_failure(alpha, gamma)?;
    let iterations_bound = beta as u64 * n as u64;
    Ok(ComplexityEstimate {
        beta,
        iterations_bound,
        p_u: -(beta as f64 * log_q).exp_m1(),
        wallclock_estimate_s: iterations_bound as f64 / rate_iters_per_s,
    })
}

/// Worst-case TRIM iteration count: the number of size-`n` subsets of `total` rows.
pub fn trim_worst_case_iterations(total: usize, n: usize) -> f64 {
    if n > total {
        return 0.0;
    }
    let k = n.min(total - n);
    (0..k).fold(1.0, |acc, i| acc * (total - i) as f64 / (i + 1) as f64)
}

/// `⌈(1 − α) N⌉`.
pub fn subset_size(alpha_assumed: f64, total: usize) -> usize {
    ((1.0 - alpha_assumed) * total as f64 - 1e-9).ceil() as usize
}

/// Indices of the `n` rows with the smallest `|f(xᵢ) − yᵢ|`, ties broken by
/// row index, returned ascending.
fn closest_rows(ds: &Dataset, model: &RegressionModel, n: usize) -> Result<Vec<usize>> {
    let r = model.residuals(ds)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| {
        r[a].abs()
            .partial_cmp(&r[b].abs())
            .unwrap_or_else(|| r[a].is_nan().cmp(&r[b].is_nan()))
            .then(a.cmp(&b))
    });
    order.truncate(n);
    order.sort_unstable();
    Ok(order)
}

struct GroupOutcome {
    mse: f64,
    subset: Vec<usize>,
    model: RegressionModel,
}

/// Rows drawn for Proda group `group` on a dataset of `rows` rows, ascending.
/// The winning group of a run is the argmin of its `group_mse_trace`.
pub fn proda_group(rows: usize, cfg: &ProdaConfig, group: usize) -> Vec<usize> {
    let mut rng = seed::rng(seed::stream(cfg.seed, group as u64));
    let mut picked = rand::seq::index::sample(&mut rng, rows, cfg.gamma).into_vec();
    picked.sort_unstable();
    picked
}

fn run_group(ds: &Dataset, cfg: &ProdaConfig, n: usize, family: Family, lambda: f64, group: usize) -> Result<GroupOutcome> {
    let picked = proda_group(ds.len(), cfg, group);
    let group_model = regress::fit_model(&ds.select(&picked), family, lambda)?;
    let subset = closest_rows(ds, &group_model, n)?;
    let sub = ds.select(&subset);
    let model = regress::fit_model(&sub, family, lambda)?;
    let mse = regress::mse(&sub, &model)?;
    Ok(GroupOutcome { mse, subset, model })
}

/// Proda: best-of-β representative subsets grown from random γ-row groups.
pub fn proda_defend(ds: &Dataset, cfg: &ProdaConfig, family: Family, lambda: f64) -> Result<DefenseResult> {
    let start = Instant::now();
    let d = ds.dim();
    if cfg.gamma < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "gamma = {} must be at least d + 1 = {}",
            cfg.gamma,
            d + 1
        )));
    }
    let n = subset_size(cfg.alpha_assumed, ds.len());
    if n < cfg.gamma || cfg.gamma > ds.len() {
        return Err(Error::TooFewRows {
            needed: cfg.gamma,
            have: n,
        });
    }
    let beta = compute_beta(cfg.alpha_assumed, cfg.gamma, cfg.epsilon)?;

    let outcomes = cfg
        .execution
        .map_indexed(beta, |g| run_group(ds, cfg, n, family, lambda, g));
    let outcomes: Vec<GroupOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let group_mse_trace: Vec<f64> = outcomes.iter().map(|o| o.mse).collect();
    // lowest MSE wins; ties (and NaN) resolve to the lowest group index
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.mse
                .partial_cmp(&b.mse)
                .unwrap_or_else(|| a.mse.is_nan().cmp(&b.mse.is_nan()))
                .then(i.cmp(j))
        })
        .map(|(i, _)| i)
        .expect("beta >= 1");
    let winner = outcomes.into_iter().nth(best).expect("index in range");

    Ok(DefenseResult {
        subset_indices: winner.subset,
        model: winner.model,
        subset_mse: winner.mse,
        group_mse_trace,
        beta_used: beta,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrimConfig {
    pub alpha_assumed: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig {
            alpha_assumed: DEFAULT_ALPHA_ASSUMED,
            max_iters: 400,
            seed: seed::DEFAULT_SEED,
        }
    }
}

/// TRIM result together with its per-iteration trimmed loss.
#[derive(Debug, Clone)]
pub struct TrimOutcome {
    pub result: DefenseResult,
    /// Regularized loss on the selected subset after each iteration.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

/// TRIM: alternate between fitting on a size-`n` subset and re-selecting the
/// `n` rows with the smallest residuals.
pub fn trim_defend(ds: &Dataset, cfg: &TrimConfig, family: Family, lambda: f64) -> Result<TrimOutcome> {
    let start = Instant::now();
    check_rate(cfg.alpha_assumed, 0.5)?;
    if cfg.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    let d = ds.dim();
    let n = subset_size(cfg.alpha_assumed, ds.len());
    if n < d + 1 {
        return Err(Error::TooFewRows { needed: d + 1, have: n });
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "trim-init"));
    let mut subset = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
    subset.sort_unstable();

    let mut model: Option<RegressionModel> = None;
    let mut mse_trace = Vec::new();
    let mut loss_trace = Vec::new();
    let mut best: Option<(f64, Vec<usize>, RegressionModel)> = None;
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let sub = ds.select(&subset);
        let opts = model.as_ref().map(SolverOpts::warm).unwrap_or_default();
        let fitted = regress::fit(&sub, family, lambda, &opts)?;
        let m = fitted.model;
        let sub_mse = fitted.train_mse;
        mse_trace.push(sub_mse);
        loss_trace.push(fitted.train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| sub_mse < *b) {
            best = Some((sub_mse, subset.clone(), m.clone()));
        }

        let next = closest_rows(ds, &m, n)?;
        let prev_loss = loss_trace.len().checked_sub(2).map(|i| loss_trace[i]);
        let stalled = prev_loss.is_some_and(|p| (p - fitted.train_loss).abs() <= 1e-12);
        model = Some(m);
        if next == subset || stalled {
            converged = true;
            break;
        }
        subset = next;
    }

    let (subset_mse, subset_indices, model) = best.expect("at least one iteration");
    let iterations = mse_trace.len();
    Ok(TrimOutcome {
        result: DefenseResult {
            subset_indices,
            model,
            subset_mse,
            group_mse_trace: mse_trace,
            beta_used: iterations,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        loss_trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn noiseless_line(n: usize) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.2 + 0.6 * x[0]).collect();
        Dataset::from_rows(&xs, &ys).unwrap()
    }

    #[test]
    fn beta_values() {
        assert_eq!(compute_beta(0.0, 6, 1e-5).unwrap(), 1);
        assert_eq!(compute_beta(0.2, 6, 1e-5).unwrap(), 38);
        assert_eq!(compute_beta(0.2, 2, 1e-5).unwrap(), 12);
    }

    #[test]
    fn beta_rejects_bad_inputs() {
        assert!(compute_beta(1.0, 6, 1e-5).is_err());
        assert!(compute_beta(-0.1, 6, 1e-5).is_err());
        assert!(compute_beta(0.2, 6, 0.0).is_err());
        assert!(compute_beta(0.2, 6, 1.0).is_err());
        assert!(compute_beta(0.2, 0, 1e-5).is_err());
    }

    #[test]
    fn complexity_examples() {
        let c = estimate_complexity(0.0, 6, 1e-5, 300, 1e6).unwrap();
        assert_eq!(c.iterations_bound, 300);
        let c = estimate_complexity(0.2, 6, 1e-5, 300, 1e6).unwrap();
        assert_eq!(c.iterations_bound, 11_400);
        assert!((c.wallclock_estimate_s - 0.0114).abs() < 1e-15);
        assert!(c.p_u >= 1.0 - 1e-5);
        assert!(estimate_complexity(0.2, 6, 1e-5, 300, 0.0).is_err());
    }

    #[test]
    fn trim_worst_case_is_binomial() {
        assert_eq!(trim_worst_case_iterations(12, 9), 220.0);
        assert_eq!(trim_worst_case_iterations(5, 5), 1.0);
    }

    #[test]
    fn subset_size_rounds_up() {
        assert_eq!(subset_size(0.2, 300), 240);
        assert_eq!(subset_size(0.2, 301), 241);
        assert_eq!(subset_size(0.25, 12), 9);
        assert_eq!(subset_size(0.0, 7), 7);
    }

    #[test]
    fn proda_on_clean_line_is_exact() {
        let ds = noiseless_line(30);
        let r = proda_defend(&ds, &ProdaConfig::for_dim(1), Family::Ols, 0.0).unwrap();
        assert!(r.subset_mse < 1e-25);
        assert!((r.model.weights[0] - 0.6).abs() < 1e-10);
        assert!((r.model.bias - 0.2).abs() < 1e-10);
        assert_eq!(r.subset_indices.len(), 24);
        assert_eq!(r.group_mse_trace.len(), r.beta_used);
        assert_eq!(r.beta_used, compute_beta(0.2, 2, 1e-5).unwrap());
    }

    #[test]
    fn proda_is_deterministic_across_execution_modes() {
        let (ds, _) = generate_synthetic(&SyntheticSpec::random(3, 90, 0.1, 4)).unwrap();
        let mut cfg = ProdaConfig::for_dim(3);
        cfg.execution = Execution::Sequential;
        let a = proda_defend(&ds, &cfg, Family::Ridge, 0.01).unwrap();
        cfg.execution = Execution::Parallel;
        let b = proda_defend(&ds, &cfg, Family::Ridge, 0.01).unwrap();
        assert_eq!(a.subset_indices, b.subset_indices);
        assert_eq!(a.group_mse_trace, b.group_mse_trace);
        let min = a.group_mse_trace.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(a.subset_mse, min);
    }

    #[test]
    fn proda_rejects_small_gamma() {
        let ds = noiseless_line(30);
        let cfg = ProdaConfig { gamma: 1, ..ProdaConfig::for_dim(1) };
        assert!(proda_defend(&ds, &cfg, Family::Ols, 0.0).is_err());
        let tiny = noiseless_line(5);
        assert!(proda_defend(&tiny, &ProdaConfig { gamma: 5, ..ProdaConfig::for_dim(1) }, Family::Ols, 0.0).is_err());
    }

    #[test]
    fn trim_on_clean_line_converges_fast() {
        let ds = noiseless_line(25);
        let out = trim_defend(&ds, &TrimConfig::default(), Family::Ols, 0.0).unwrap();
        assert!(out.converged);
        assert!(out.result.beta_used <= 2);
        assert!(out.result.subset_mse < 1e-25);
    }

    #[test]
    fn trim_excludes_single_outlier() {
        let mut ds = noiseless_line(20);
        ds.responses[7] = 1.0;
        ds.responses[3] += 0.01;
        ds.responses[12] -= 0.01;
        let cfg = TrimConfig { alpha_assumed: 0.05, ..TrimConfig::default() };
        let out = trim_defend(&ds, &cfg, Family::Ols, 0.0).unwrap();
        assert_eq!(out.result.subset_indices.len(), 19);
        assert!(!out.result.subset_indices.contains(&7));
    }

    #[test]
    fn trim_rejects_bad_config() {
        let ds = noiseless_line(10);
        assert!(trim_defend(&ds, &TrimConfig { max_iters: 0, ..TrimConfig::default() }, Family::Ols, 0.0).is_err());
        assert!(trim_defend(&ds, &TrimConfig { alpha_assumed: 0.95, ..TrimConfig::default() }, Family::Ols, 0.0).is_err());
    }

    #[test]
    fn defense_result_json_fields() {
        let r = proda_defend(&noiseless_line(20), &ProdaConfig::for_dim(1), Family::Ols, 0.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["subset_indices", "model", "subset_mse", "beta_used", "group_mses", "wall_time_s"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
