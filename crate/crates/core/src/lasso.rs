//! L1-penalized least squares by cyclic coordinate descent.
//!
//! The solver standardizes slope columns to unit variance internally so a
//! single penalty weight acts on a shared scale, and reports coefficients
//! back in the original column units. The intercept is never penalized.
//! Rank-deficient designs are admitted; zero-variance columns keep a zero
//! coefficient and their level is absorbed by the intercept.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::panel::{DesignMatrix, RowKey};

/// Default convergence tolerance on the max coefficient change per sweep.
pub const DEFAULT_TOL: f64 = 1e-7;
/// Default sweep cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// `sign(z) * max(|z| - gamma, 0)`, the coordinate-wise minimizer of the
/// penalized quadratic.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// A penalized fit. `coefficients` are in original column units and contain
/// exact zeros; `objective_value` is the minimized objective
/// `(1/2n)*SSR + lambda * sum |b_j|` over the internally standardized
/// coefficients `b`.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Unpenalized intercept, original scale.
    pub intercept: f64,
    pub lambda: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub objective_value: f64,
    /// Objective after each coordinate-descent sweep.
    pub objective_trace: Vec<f64>,
    pub n: usize,
    pub warnings: Vec<String>,
}

impl LassoFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    /// Count of slope coefficients that are exactly nonzero.
    pub fn n_nonzero(&self) -> usize {
        self.coefficients.iter().filter(|&&b| b != 0.0).count()
    }

    /// Fitted values on slope columns laid out as in the fit.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .enumerate()
                        .map(|(j, b)| b * x[(i, j)])
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Slope columns plus response; the intercept is implicit.
#[derive(Debug, Clone)]
pub(crate) struct PenalizedProblem {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub treatment: Vec<f64>,
    pub row_keys: Vec<RowKey>,
}

impl PenalizedProblem {
    /// Slopes `[D | X]` from a design matrix.
    pub fn from_design(dm: &DesignMatrix) -> Self {
        let n = dm.n_rows();
        let p = dm.n_confounders() + 1;
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            x[(i, 0)] = dm.treatment[i];
            for j in 0..dm.n_confounders() {
                x[(i, j + 1)] = dm.confounders[(i, j)];
            }
        }
        let mut names = vec!["D".to_string()];
        names.extend(dm.confounder_names.iter().cloned());
        PenalizedProblem {
            names,
            x,
            y: dm.response.clone(),
            treatment: dm.treatment.clone(),
            row_keys: dm.rows.clone(),
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut x = DMatrix::zeros(rows.len(), self.x.ncols());
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..self.x.ncols() {
                x[(i, j)] = self.x[(r, j)];
            }
        }
        PenalizedProblem {
            names: self.names.clone(),
            x,
            y: rows.iter().map(|&r| self.y[r]).collect(),
            treatment: rows.iter().map(|&r| self.treatment[r]).collect(),
            row_keys: rows.iter().map(|&r| self.row_keys[r].clone()).collect(),
        }
    }
}

struct Standardized {
    /// Centered and unit-variance columns; zero-variance columns are zeroed.
    x: DMatrix<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
    active: Vec<bool>,
    y_centered: Vec<f64>,
    y_mean: f64,
}

fn standardize(problem: &PenalizedProblem) -> Standardized {
    let n = problem.x.nrows();
    let p = problem.x.ncols();
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    let mut active = vec![false; p];
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        let mean = problem.x.column(j).iter().sum::<f64>() / n as f64;
        let var = problem
            .x
            .column(j)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        means[j] = mean;
        sds[j] = var.sqrt();
        if sds[j] > 0.0 {
            active[j] = true;
            for i in 0..n {
                x[(i, j)] = (problem.x[(i, j)] - mean) / sds[j];
            }
        }
    }
    let y_mean = problem.y.iter().sum::<f64>() / n as f64;
    let y_centered = problem.y.iter().map(|y| y - y_mean).collect();
    Standardized {
        x,
        means,
        sds,
        active,
        y_centered,
        y_mean,
    }
}

/// Smallest penalty at which every slope is exactly zero.
pub fn lambda_max(dm: &DesignMatrix) -> Result<f64> {
    lambda_max_problem(&PenalizedProblem::from_design(dm))
}

pub(crate) fn lambda_max_problem(problem: &PenalizedProblem) -> Result<f64> {
    if problem.x.nrows() == 0 {
        return Err(Error::EmptyInput("lasso needs at least one row".to_string()));
    }
    let std = standardize(problem);
    let n = problem.x.nrows() as f64;
    let mut best = 0.0_f64;
    for j in 0..problem.x.ncols() {
        if !std.active[j] {
            continue;
        }
        let dot: f64 = std
            .x
            .column(j)
            .iter()
            .zip(&std.y_centered)
            .map(|(x, y)| x * y)
            .sum();
        best = best.max((dot / n).abs());
    }
    Ok(best)
}

/// Fit the L1-penalized regression of Y on `[D | X]`.
pub fn lasso_fit(dm: &DesignMatrix, lambda: f64, tol: f64, max_iter: usize) -> Result<LassoFit> {
    lasso_fit_problem(&PenalizedProblem::from_design(dm), lambda, tol, max_iter)
}

pub(crate) fn lasso_fit_problem(
    problem: &PenalizedProblem,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if problem.x.nrows() == 0 {
        return Err(Error::EmptyInput("lasso needs at least one row".to_string()));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be >= 1".to_string()));
    }

    let n = problem.x.nrows();
    let p = problem.x.ncols();
    let std = standardize(problem);
    let nf = n as f64;

    let mut b = vec![0.0_f64; p];
    let mut residual = std.y_centered.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < max_iter {
        sweeps += 1;
        let mut max_delta = 0.0_f64;
        for j in 0..p {
            if !std.active[j] {
                continue;
            }
            // Unit-variance columns make the coordinate curvature 1.
            let grad: f64 = std
                .x
                .column(j)
                .iter()
                .zip(residual.iter())
                .map(|(x, r)| x * r)
                .sum::<f64>()
                / nf;
            let candidate = grad + b[j];
            let updated = soft_threshold(candidate, lambda);
            let delta = updated - b[j];
            if delta != 0.0 {
                for (i, r) in residual.iter_mut().enumerate() {
                    *r -= std.x[(i, j)] * delta;
                }
                b[j] = updated;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let ssr: f64 = residual.iter().map(|r| r * r).sum();
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        trace.push(ssr / (2.0 * nf) + lambda * l1);
        if max_delta < tol {
            converged = true;
            break;
        }
    }

    let coefficients: Vec<f64> = (0..p)
        .map(|j| if std.active[j] { b[j] / std.sds[j] } else { 0.0 })
        .collect();
    let intercept = std.y_mean
        - coefficients
            .iter()
            .zip(&std.means)
            .map(|(c, m)| c * m)
            .sum::<f64>();

    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "coordinate descent did not converge within {max_iter} sweeps (tol {tol})"
        ));
    }
    for (j, name) in problem.names.iter().enumerate() {
        if !std.active[j] {
            warnings.push(format!(
                "column `{name}` has zero variance; coefficient pinned to 0"
            ));
        }
    }

    Ok(LassoFit {
        coefficient_names: problem.names.clone(),
        coefficients,
        intercept,
        lambda,
        n_iterations: sweeps,
        converged,
        objective_value: *trace.last().expect("at least one sweep"),
        objective_trace: trace,
        n,
        warnings,
    })
}

/// Maximum KKT stationarity violation of `fit` on its design, measured on
/// the standardized problem the solver minimizes.
pub fn kkt_max_violation(fit: &LassoFit, dm: &DesignMatrix) -> f64 {
    kkt_max_violation_problem(fit, &PenalizedProblem::from_design(dm))
}

pub(crate) fn kkt_max_violation_problem(fit: &LassoFit, problem: &PenalizedProblem) -> f64 {
    let std = standardize(problem);
    let n = problem.x.nrows();
    let p = problem.x.ncols();
    let b: Vec<f64> = (0..p).map(|j| fit.coefficients[j] * std.sds[j]).collect();
    let mut residual = std.y_centered.clone();
    for j in 0..p {
        if b[j] != 0.0 {
            for (i, r) in residual.iter_mut().enumerate() {
                *r -= std.x[(i, j)] * b[j];
            }
        }
    }
    let mut worst = 0.0_f64;
    for j in 0..p {
        if !std.active[j] {
            continue;
        }
        let grad: f64 = std
            .x
            .column(j)
            .iter()
            .zip(residual.iter())
            .map(|(x, r)| x * r)
            .sum::<f64>()
            / n as f64;
        let violation = if b[j] != 0.0 {
            (grad.abs() - fit.lambda).abs().max(
                // Active coordinates must also match the sign.
                if grad.signum() == b[j].signum() || grad == 0.0 {
                    0.0
                } else {
                    grad.abs() + fit.lambda
                },
            )
        } else {
            (grad.abs() - fit.lambda).max(0.0)
        };
        worst = worst.max(violation);
    }
    worst
}

/// Deterministic stratified fold assignment: treated and control rows are
/// shuffled separately and dealt round-robin, so each fold's treated count
/// differs from an even split by at most one observation.
pub fn stratified_folds(treatment: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::FoldConfig(format!("k must be >= 2, got {k}")));
    }
    if treatment.len() < k {
        return Err(Error::FoldConfig(format!(
            "{} rows cannot fill {k} folds",
            treatment.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut treated: Vec<usize> = (0..treatment.len())
        .filter(|&i| treatment[i] == 1.0)
        .collect();
    let mut control: Vec<usize> = (0..treatment.len())
        .filter(|&i| treatment[i] != 1.0)
        .collect();
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);

    let mut folds = vec![0usize; treatment.len()];
    for (pos, &row) in treated.iter().enumerate() {
        folds[row] = pos % k;
    }
    // Continue the deal where the treated rows left off so no fold can
    // come up empty.
    for (pos, &row) in control.iter().enumerate() {
        folds[row] = (treated.len() + pos) % k;
    }
    for f in 0..k {
        if !folds.iter().any(|&x| x == f) {
            return Err(Error::FoldConfig(format!("fold {f} is empty")));
        }
    }
    Ok(folds)
}

/// One grid point of the cross-validation table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_mse: f64,
    pub sd_mse: f64,
    pub n_nonzero: usize,
}

/// Per-lambda validation summary.
#[derive(Debug, Clone)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub k: usize,
    pub seed: u64,
}

impl CvTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,mean_mse,sd_mse,n_nonzero\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{}\n",
                row.lambda, row.mean_mse, row.sd_mse, row.n_nonzero
            ));
        }
        out
    }
}

/// 50-point log-spaced grid from `lambda_max` down to `lambda_max * 1e-4`.
pub fn default_lambda_grid(lambda_max: f64) -> Vec<f64> {
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    let points = 50;
    (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            lambda_max * 10f64.powf(-4.0 * t)
        })
        .collect()
}

/// Pick the penalty by k-fold cross-validation over `grid`, minimizing mean
/// validation MSE; ties break toward the larger (sparser) lambda.
pub fn select_lambda_cv(
    dm: &DesignMatrix,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<(f64, CvTable)> {
    select_lambda_cv_problem(&PenalizedProblem::from_design(dm), grid, k, seed)
}

pub(crate) fn select_lambda_cv_problem(
    problem: &PenalizedProblem,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<(f64, CvTable)> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".to_string()));
    }
    let folds = stratified_folds(&problem.treatment, k, seed)?;
    let n = problem.x.nrows();

    let mut fold_mse = vec![Vec::with_capacity(k); grid.len()];
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let valid: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        let train_problem = problem.subset(&train);
        let valid_problem = problem.subset(&valid);
        for (g, &lambda) in grid.iter().enumerate() {
            let fit = lasso_fit_problem(&train_problem, lambda, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let fitted = fit.predict(&valid_problem.x);
            let mse = fitted
                .iter()
                .zip(&valid_problem.y)
                .map(|(f, y)| (f - y).powi(2))
                .sum::<f64>()
                / valid.len() as f64;
            fold_mse[g].push(mse);
        }
    }

    let mut rows = Vec::with_capacity(grid.len());
    for (g, &lambda) in grid.iter().enumerate() {
        let mses = &fold_mse[g];
        let mean = mses.iter().sum::<f64>() / k as f64;
        let sd = if k > 1 {
            (mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        let full = lasso_fit_problem(problem, lambda, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        rows.push(CvRow {
            lambda,
            mean_mse: mean,
            sd_mse: sd,
            n_nonzero: full.n_nonzero(),
        });
    }

    let mut best = &rows[0];
    for row in &rows[1..] {
        let better = row.mean_mse < best.mean_mse
            || (row.mean_mse == best.mean_mse && row.lambda > best.lambda);
        if better {
            best = row;
        }
    }
    let lambda_star = best.lambda;
    Ok((lambda_star, CvTable { rows, k, seed }))
}
