//! Staggered two-way fixed-effects difference-in-differences.
//!
//! The estimating equation is `Y = g_i + g_t + tau * D + beta'X + u`,
//! fitted by dummy-variable OLS with the smallest country and year labels
//! as reference categories. The auxiliary regression
//! `D = a + l_i + l_t + e` produces residuals whose rescaled values act as
//! weights on treated cells in the effect estimate; negative weights are
//! the diagnostic of interest and are surfaced, never hidden.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::lasso::{self, LassoFit, PenalizedProblem};
use crate::panel::{DesignMatrix, RowKey};
use crate::regress::{fit_problem, FitResult, LinearProblem, SeMode};
use crate::svg;

/// A design matrix augmented with country and year indicator blocks.
#[derive(Debug, Clone)]
pub struct FixedEffectsDesign {
    pub base: DesignMatrix,
    /// Indicator columns for every country except the reference, in label
    /// order; names follow `I_<country>`.
    pub country_dummies: DMatrix<f64>,
    pub country_labels: Vec<String>,
    /// Indicator columns for every year except the reference, ascending.
    pub year_dummies: DMatrix<f64>,
    pub year_labels: Vec<i32>,
    pub reference_country: String,
    pub reference_year: i32,
}

/// Encode fixed effects with the smallest country and year as references.
pub fn encode_fixed_effects(dm: &DesignMatrix) -> Result<FixedEffectsDesign> {
    let countries = dm.countries();
    let years = dm.years();
    if countries.len() < 2 || years.len() < 2 {
        return Err(Error::FixedEffectsDegenerate(format!(
            "{} countries and {} years; need at least 2 of each",
            countries.len(),
            years.len()
        )));
    }
    encode_fixed_effects_with_reference(dm, &countries[0], years[0])
}

/// Encode fixed effects against explicit reference categories. Estimates of
/// tau, fitted values, and residuals are invariant to this choice; only the
/// dummy coefficients change meaning.
pub fn encode_fixed_effects_with_reference(
    dm: &DesignMatrix,
    reference_country: &str,
    reference_year: i32,
) -> Result<FixedEffectsDesign> {
    let countries = dm.countries();
    let years = dm.years();
    if countries.len() < 2 || years.len() < 2 {
        return Err(Error::FixedEffectsDegenerate(format!(
            "{} countries and {} years; need at least 2 of each",
            countries.len(),
            years.len()
        )));
    }
    if !countries.iter().any(|c| c == reference_country) {
        return Err(Error::UnknownVariable(format!(
            "reference country `{reference_country}` not in design"
        )));
    }
    if !years.contains(&reference_year) {
        return Err(Error::UnknownVariable(format!(
            "reference year {reference_year} not in design"
        )));
    }
    let country_labels: Vec<String> = countries
        .into_iter()
        .filter(|c| c != reference_country)
        .collect();
    let year_labels: Vec<i32> = years.into_iter().filter(|&y| y != reference_year).collect();

    let n = dm.n_rows();
    let mut country_dummies = DMatrix::zeros(n, country_labels.len());
    let mut year_dummies = DMatrix::zeros(n, year_labels.len());
    for (i, key) in dm.rows.iter().enumerate() {
        if let Some(j) = country_labels.iter().position(|c| *c == key.country) {
            country_dummies[(i, j)] = 1.0;
        }
        if let Some(j) = year_labels.iter().position(|&y| y == key.year) {
            year_dummies[(i, j)] = 1.0;
        }
    }
    Ok(FixedEffectsDesign {
        base: dm.clone(),
        country_dummies,
        country_labels,
        year_dummies,
        year_labels,
        reference_country: reference_country.to_string(),
        reference_year,
    })
}

impl FixedEffectsDesign {
    pub fn n_rows(&self) -> usize {
        self.base.n_rows()
    }

    fn dummy_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.country_labels.iter().map(|c| format!("I_{c}")).collect();
        names.extend(self.year_labels.iter().map(|y| format!("I_{y}")));
        names
    }

    /// Slope columns `[D | X | country dummies | year dummies]`.
    fn slope_columns(&self) -> (Vec<String>, DMatrix<f64>) {
        let n = self.n_rows();
        let p = 1 + self.base.n_confounders() + self.country_labels.len() + self.year_labels.len();
        let mut x = DMatrix::zeros(n, p);
        let mut names = Vec::with_capacity(p);
        names.push("D".to_string());
        for i in 0..n {
            x[(i, 0)] = self.base.treatment[i];
        }
        let mut col = 1;
        for j in 0..self.base.n_confounders() {
            names.push(self.base.confounder_names[j].clone());
            for i in 0..n {
                x[(i, col)] = self.base.confounders[(i, j)];
            }
            col += 1;
        }
        for j in 0..self.country_labels.len() {
            for i in 0..n {
                x[(i, col)] = self.country_dummies[(i, j)];
            }
            col += 1;
        }
        for j in 0..self.year_labels.len() {
            for i in 0..n {
                x[(i, col)] = self.year_dummies[(i, j)];
            }
            col += 1;
        }
        names.extend(self.dummy_names());
        (names, x)
    }

    fn linear_problem(&self) -> LinearProblem {
        let (slope_names, slopes) = self.slope_columns();
        let n = self.n_rows();
        let mut names = vec!["intercept".to_string()];
        names.extend(slope_names);
        let mut x = DMatrix::zeros(n, slopes.ncols() + 1);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 0..slopes.ncols() {
                x[(i, j + 1)] = slopes[(i, j)];
            }
        }
        LinearProblem {
            names,
            x,
            y: nalgebra::DVector::from_column_slice(&self.base.response),
            row_keys: self.base.rows.clone(),
            has_intercept: true,
        }
    }

    fn penalized_problem(&self) -> PenalizedProblem {
        let (names, x) = self.slope_columns();
        PenalizedProblem {
            names,
            x,
            y: self.base.response.clone(),
            treatment: self.base.treatment.clone(),
            row_keys: self.base.rows.clone(),
        }
    }
}

/// Unpenalized TWFE fit of `Y` on `[1 | D | X | country | year]`.
pub fn twfe_fit(fe: &FixedEffectsDesign, se_mode: SeMode) -> Result<FitResult> {
    fit_problem(&fe.linear_problem(), se_mode, 0.95)
}

/// Penalized TWFE fit: the intercept stays unpenalized, everything else
/// (including the treatment and the fixed-effect dummies) enters the
/// penalty, so `D` itself may be dropped.
pub fn twfe_lasso_fit(
    fe: &FixedEffectsDesign,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    lasso::lasso_fit_problem(&fe.penalized_problem(), lambda, tol, max_iter)
}

/// Penalty ceiling for the augmented TWFE design.
pub fn twfe_lambda_max(fe: &FixedEffectsDesign) -> Result<f64> {
    lasso::lambda_max_problem(&fe.penalized_problem())
}

/// Cross-validated penalty selection on the augmented TWFE design.
pub fn twfe_select_lambda_cv(
    fe: &FixedEffectsDesign,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<(f64, lasso::CvTable)> {
    lasso::select_lambda_cv_problem(&fe.penalized_problem(), grid, k, seed)
}

/// KKT violation of a penalized TWFE fit.
pub fn twfe_kkt_max_violation(fit: &LassoFit, fe: &FixedEffectsDesign) -> f64 {
    lasso::kkt_max_violation_problem(fit, &fe.penalized_problem())
}

/// Residuals of the auxiliary regression `D = a + l_i + l_t + e` over all
/// rows, in row order. Confounders are deliberately excluded.
pub fn treatment_residuals(fe: &FixedEffectsDesign) -> Result<Vec<f64>> {
    let n = fe.n_rows();
    let p = 1 + fe.country_labels.len() + fe.year_labels.len();
    let mut names = vec!["intercept".to_string()];
    names.extend(fe.dummy_names());
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..fe.country_labels.len() {
            x[(i, 1 + j)] = fe.country_dummies[(i, j)];
        }
        for j in 0..fe.year_labels.len() {
            x[(i, 1 + fe.country_labels.len() + j)] = fe.year_dummies[(i, j)];
        }
    }
    let problem = LinearProblem {
        names,
        x,
        y: nalgebra::DVector::from_column_slice(&fe.base.treatment),
        row_keys: fe.base.rows.clone(),
        has_intercept: true,
    };
    let fit = fit_problem(&problem, SeMode::Classical, 0.95)?;
    Ok(fit.residuals)
}

/// The residual-weight decomposition of the treatment effect.
///
/// For treated cells, `weight = e * sum(D) / sum(e * D)`; normalized
/// weights divide by `sum(D)` and add to 1 over treated cells. The
/// `contributions` vector carries the raw residual for every row, treated
/// or not, for heatmap rendering.
#[derive(Debug, Clone)]
pub struct WeightDecomposition {
    pub epsilon: Vec<f64>,
    /// Indices into the row vector for treated cells, ascending.
    pub treated_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub normalized_weights: Vec<f64>,
    pub contributions: Vec<f64>,
    pub total_treated: usize,
}

impl WeightDecomposition {
    pub fn negative_weight_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w < 0.0).count()
    }

    /// Sum of the negative weights (a non-positive number).
    pub fn negative_weight_mass(&self) -> f64 {
        self.weights.iter().filter(|&&w| w < 0.0).sum()
    }
}

/// Compute the decomposition from auxiliary residuals and the treatment
/// vector. Errors when `sum(e * D)` vanishes (no treated rows, or the
/// dummies explain treatment exactly).
pub fn weight_decomposition(epsilon: &[f64], treatment: &[f64]) -> Result<WeightDecomposition> {
    if epsilon.len() != treatment.len() {
        return Err(Error::Schema(format!(
            "residuals ({}) and treatment ({}) are not aligned",
            epsilon.len(),
            treatment.len()
        )));
    }
    let treated_indices: Vec<usize> = (0..treatment.len())
        .filter(|&i| treatment[i] == 1.0)
        .collect();
    let total_treated = treated_indices.len();
    let denom: f64 = treated_indices.iter().map(|&i| epsilon[i]).sum();
    if total_treated == 0 || denom.abs() < 1e-10 {
        return Err(Error::DegenerateDecomposition);
    }
    let weights: Vec<f64> = treated_indices
        .iter()
        .map(|&i| epsilon[i] * total_treated as f64 / denom)
        .collect();
    let normalized_weights: Vec<f64> = treated_indices
        .iter()
        .map(|&i| epsilon[i] / denom)
        .collect();
    Ok(WeightDecomposition {
        epsilon: epsilon.to_vec(),
        treated_indices,
        weights,
        normalized_weights,
        contributions: epsilon.to_vec(),
        total_treated,
    })
}

/// Country x year matrix of signed contributions with rendering metadata.
#[derive(Debug, Clone)]
pub struct ContributionMatrix {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    /// Row-major country x year; `None` marks an absent (country, year).
    pub cells: Vec<Option<f64>>,
    pub max_abs: f64,
}

/// Arrange a decomposition's contributions on the country x year grid.
pub fn contribution_matrix(wd: &WeightDecomposition, row_keys: &[RowKey]) -> Result<ContributionMatrix> {
    contribution_matrix_from_residuals(&wd.contributions, row_keys)
}

/// Arrange raw residuals on the grid; usable even when the weight
/// decomposition itself is degenerate (e.g. an all-control panel).
pub fn contribution_matrix_from_residuals(
    contributions: &[f64],
    row_keys: &[RowKey],
) -> Result<ContributionMatrix> {
    if contributions.len() != row_keys.len() {
        return Err(Error::Schema(format!(
            "{} contributions for {} row keys",
            contributions.len(),
            row_keys.len()
        )));
    }
    let countries: Vec<String> = {
        let set: std::collections::BTreeSet<&str> =
            row_keys.iter().map(|k| k.country.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    };
    let years: Vec<i32> = {
        let set: std::collections::BTreeSet<i32> = row_keys.iter().map(|k| k.year).collect();
        set.into_iter().collect()
    };
    let mut cells = vec![None; countries.len() * years.len()];
    for (key, &value) in row_keys.iter().zip(contributions) {
        let ci = countries
            .binary_search_by(|c| c.as_str().cmp(key.country.as_str()))
            .expect("country collected");
        let yi = years.binary_search(&key.year).expect("year collected");
        cells[ci * years.len() + yi] = Some(value);
    }
    let max_abs = contributions.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    Ok(ContributionMatrix {
        countries,
        years,
        cells,
        max_abs,
    })
}

impl ContributionMatrix {
    /// CSV with countries down the first column and years across; absent
    /// cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("country");
        for year in &self.years {
            out.push_str(&format!(",{year}"));
        }
        out.push('\n');
        for (i, country) in self.countries.iter().enumerate() {
            out.push_str(country);
            for j in 0..self.years.len() {
                out.push(',');
                if let Some(v) = self.cells[i * self.years.len() + j] {
                    out.push_str(&format!("{v:.12}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Deterministic heatmap: red positive, blue negative, white at zero,
    /// darkness proportional to |contribution| / max.
    pub fn to_svg(&self) -> String {
        let col_labels: Vec<String> = self.years.iter().map(|y| y.to_string()).collect();
        svg::heatmap(&self.countries, &col_labels, &self.cells, self.max_abs)
    }
}

/// Pre-trend placebo diagnostic: lead indicators added to the TWFE
/// regression. Descriptive only; this is not a formal parallel-trends
/// hypothesis test.
#[derive(Debug, Clone)]
pub struct PretrendDiagnostic {
    pub fit: FitResult,
    pub lead_names: Vec<String>,
    /// Joint F statistic over the lead block, absent when no leads entered.
    pub joint_f: Option<f64>,
    pub joint_p: Option<f64>,
    pub warnings: Vec<String>,
    pub note: &'static str,
}

pub const PRETREND_NOTE: &str = "descriptive pre-trend diagnostic, not a formal parallel-trends test";

/// Augment the TWFE regression with indicators for treatment `k` years
/// ahead, for each `k` in `leads`. Empty `leads` returns the base fit.
pub fn placebo_pretrend(
    fe: &FixedEffectsDesign,
    leads: &[u32],
    se_mode: SeMode,
) -> Result<PretrendDiagnostic> {
    if fe.base.treated_rows() == 0 {
        return Err(Error::InsufficientData(
            "placebo diagnostic unavailable: no treated rows".to_string(),
        ));
    }
    if leads.is_empty() {
        return Ok(PretrendDiagnostic {
            fit: twfe_fit(fe, se_mode)?,
            lead_names: Vec::new(),
            joint_f: None,
            joint_p: None,
            warnings: Vec::new(),
            note: PRETREND_NOTE,
        });
    }
    for &k in leads {
        if k == 0 {
            return Err(Error::Config("leads must be positive".to_string()));
        }
    }

    let treated: std::collections::BTreeSet<(String, i32)> = fe
        .base
        .rows
        .iter()
        .zip(&fe.base.treatment)
        .filter(|(_, &d)| d == 1.0)
        .map(|(k, _)| (k.country.clone(), k.year))
        .collect();

    let mut warnings = Vec::new();
    let mut lead_names = Vec::new();
    let mut lead_cols: Vec<Vec<f64>> = Vec::new();
    for &k in leads {
        // On for rows that are untreated now but treated k years ahead, so
        // the indicator marks genuine pre-treatment periods.
        let col: Vec<f64> = fe
            .base
            .rows
            .iter()
            .zip(&fe.base.treatment)
            .map(|(key, &d)| {
                f64::from(
                    d == 0.0 && treated.contains(&(key.country.clone(), key.year + k as i32)),
                )
            })
            .collect();
        if col.iter().all(|&v| v == 0.0) {
            warnings.push(format!(
                "lead {k} indicator is zero everywhere; dropped from the diagnostic"
            ));
            continue;
        }
        lead_names.push(format!("lead_{k}"));
        lead_cols.push(col);
    }
    if lead_names.is_empty() {
        let mut diag = placebo_pretrend(fe, &[], se_mode)?;
        diag.warnings = warnings;
        return Ok(diag);
    }

    let mut problem = fe.linear_problem();
    let n = problem.x.nrows();
    let old_p = problem.x.ncols();
    let mut x = DMatrix::zeros(n, old_p + lead_cols.len());
    for i in 0..n {
        for j in 0..old_p {
            x[(i, j)] = problem.x[(i, j)];
        }
        for (j, col) in lead_cols.iter().enumerate() {
            x[(i, old_p + j)] = col[i];
        }
    }
    problem.x = x;
    problem.names.extend(lead_names.iter().cloned());
    let fit = fit_problem(&problem, se_mode, 0.95)?;

    // Joint F over the lead block against the restricted TWFE fit.
    let restricted = twfe_fit(fe, se_mode)?;
    let q = lead_names.len();
    let dof2 = n - problem.names.len();
    let ssr_full = fit.ssr();
    let ssr_restricted = restricted.ssr();
    let f_stat = ((ssr_restricted - ssr_full) / q as f64) / (ssr_full / dof2 as f64);
    let joint_p = if f_stat.is_finite() && f_stat >= 0.0 {
        let dist = FisherSnedecor::new(q as f64, dof2 as f64)
            .map_err(|e| Error::InsufficientData(format!("F distribution: {e}")))?;
        Some(1.0 - dist.cdf(f_stat))
    } else {
        None
    };

    Ok(PretrendDiagnostic {
        fit,
        lead_names,
        joint_f: Some(f_stat),
        joint_p,
        warnings,
        note: PRETREND_NOTE,
    })
}

/// One treated cell of the decomposition as exported to JSON.
#[derive(Debug, Clone, Serialize)]
pub struct WeightEntry {
    pub country: String,
    pub year: i32,
    pub epsilon: f64,
    pub weight: f64,
    pub normalized_weight: f64,
}

/// Flatten a decomposition into per-treated-cell entries.
pub fn weight_entries(wd: &WeightDecomposition, row_keys: &[RowKey]) -> Vec<WeightEntry> {
    wd.treated_indices
        .iter()
        .enumerate()
        .map(|(pos, &i)| WeightEntry {
            country: row_keys[i].country.clone(),
            year: row_keys[i].year,
            epsilon: wd.epsilon[i],
            weight: wd.weights[pos],
            normalized_weight: wd.normalized_weights[pos],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Balanced or imbalanced synthetic panel design with an additive DGP.
    fn panel_design(
        rng: &mut ChaCha8Rng,
        n_countries: usize,
        n_years: usize,
        keep_prob: f64,
        tau: f64,
        noise: f64,
        n_confounders: usize,
    ) -> DesignMatrix {
        loop {
            let gamma_c: Vec<f64> = (0..n_countries).map(|_| rng.random::<f64>() * 0.1).collect();
            let gamma_t: Vec<f64> = (0..n_years).map(|_| rng.random::<f64>() * 0.1).collect();
            let beta: Vec<f64> = (0..n_confounders)
                .map(|_| rng.random::<f64>() * 0.2 - 0.1)
                .collect();
            let mut rows = Vec::new();
            let mut y = Vec::new();
            let mut d = Vec::new();
            let mut xs = Vec::new();
            for c in 0..n_countries {
                for t in 0..n_years {
                    if rng.random::<f64>() > keep_prob {
                        continue;
                    }
                    let treated = rng.random_bool(0.25);
                    let confs: Vec<f64> =
                        (0..n_confounders).map(|_| rng.random::<f64>()).collect();
                    let mut value = gamma_c[c] + gamma_t[t] + tau * f64::from(treated);
                    for (b, x) in beta.iter().zip(&confs) {
                        value += b * x;
                    }
                    value += noise * (rng.random::<f64>() - 0.5);
                    rows.push(RowKey::new(format!("C{c:02}"), 2000 + t as i32));
                    y.push(value);
                    d.push(f64::from(treated));
                    xs.extend(confs);
                }
            }
            let n = rows.len();
            if n < n_countries * n_years / 2 {
                continue;
            }
            let treated_count = d.iter().filter(|&&v| v == 1.0).count();
            if treated_count == 0 || treated_count == n {
                continue;
            }
            let dm = DesignMatrix::new(
                rows,
                y,
                d,
                DMatrix::from_row_slice(n, n_confounders, &xs),
                (0..n_confounders).map(|j| format!("x{j}")).collect(),
                true,
            )
            .unwrap();
            // All countries and years must survive the row thinning.
            if dm.countries().len() == n_countries && dm.years().len() == n_years {
                return dm;
            }
        }
    }

    fn two_by_two(treated_cell: (usize, usize)) -> DesignMatrix {
        let mut rows = Vec::new();
        let mut d = Vec::new();
        for c in 0..2 {
            for t in 0..2 {
                rows.push(RowKey::new(format!("C{c}"), 2000 + t as i32));
                d.push(f64::from((c, t) == treated_cell));
            }
        }
        DesignMatrix::new(
            rows,
            vec![0.1, 0.2, 0.3, 0.4],
            d,
            DMatrix::zeros(4, 0),
            vec![],
            true,
        )
        .unwrap()
    }

    #[test]
    fn encode_two_by_two() {
        let fe = encode_fixed_effects(&two_by_two((1, 1))).unwrap();
        assert_eq!(fe.country_labels, vec!["C1".to_string()]);
        assert_eq!(fe.year_labels, vec![2001]);
        assert_eq!(fe.reference_country, "C0");
        assert_eq!(fe.reference_year, 2000);
        assert_eq!(fe.country_dummies.ncols(), 1);
        assert_eq!(fe.year_dummies.ncols(), 1);
    }

    #[test]
    fn encode_paper_scale_dummy_counts() {
        // 114 countries observed over 1950-2022 yield 113 + 72 dummies.
        let mut rows = Vec::new();
        let mut d = Vec::new();
        for c in 0..114 {
            for year in 1950..=2022 {
                rows.push(RowKey::new(format!("C{c:03}"), year));
                d.push(f64::from((c + year as usize) % 97 == 0));
            }
        }
        let n = rows.len();
        let dm = DesignMatrix::new(
            rows,
            vec![0.0; n],
            d,
            DMatrix::zeros(n, 0),
            vec![],
            true,
        )
        .unwrap();
        let fe = encode_fixed_effects(&dm).unwrap();
        assert_eq!(fe.country_dummies.ncols(), 113);
        assert_eq!(fe.year_dummies.ncols(), 72);
    }

    #[test]
    fn encode_rejects_degenerate_panels() {
        let rows = vec![RowKey::new("A", 2000), RowKey::new("A", 2001)];
        let dm = DesignMatrix::new(
            rows,
            vec![0.1, 0.2],
            vec![0.0, 1.0],
            DMatrix::zeros(2, 0),
            vec![],
            true,
        )
        .unwrap();
        assert!(matches!(
            encode_fixed_effects(&dm).unwrap_err(),
            Error::FixedEffectsDegenerate(_)
        ));
    }

    #[test]
    fn encode_imbalanced_dummies_well_formed() {
        // Hand-built: A in 2000-2002, B in 2001-2002, C only 2002.
        let rows = vec![
            RowKey::new("A", 2000),
            RowKey::new("A", 2001),
            RowKey::new("A", 2002),
            RowKey::new("B", 2001),
            RowKey::new("B", 2002),
            RowKey::new("C", 2002),
        ];
        let dm = DesignMatrix::new(
            rows,
            vec![0.0; 6],
            vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            DMatrix::zeros(6, 0),
            vec![],
            true,
        )
        .unwrap();
        let fe = encode_fixed_effects(&dm).unwrap();
        assert_eq!(fe.country_labels, vec!["B".to_string(), "C".to_string()]);
        assert_eq!(fe.year_labels, vec![2001, 2002]);
        // Hand enumeration: row 3 is (B, 2001) -> I_B = 1, I_2001 = 1.
        assert_eq!(fe.country_dummies[(3, 0)], 1.0);
        assert_eq!(fe.year_dummies[(3, 0)], 1.0);
        // Row 5 is (C, 2002) -> I_C = 1, I_2002 = 1.
        assert_eq!(fe.country_dummies[(5, 1)], 1.0);
        assert_eq!(fe.year_dummies[(5, 1)], 1.0);
        // Each row has at most one dummy set per block.
        for i in 0..6 {
            let crow: f64 = (0..2).map(|j| fe.country_dummies[(i, j)]).sum();
            let yrow: f64 = (0..2).map(|j| fe.year_dummies[(i, j)]).sum();
            assert!(crow == 0.0 || crow == 1.0);
            assert!(yrow == 0.0 || yrow == 1.0);
        }
    }

    #[test]
    fn twfe_recovers_noiseless_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dm = panel_design(&mut rng, 6, 8, 1.0, -0.05, 0.0, 0);
        let fe = encode_fixed_effects(&dm).unwrap();
        let fit = twfe_fit(&fe, SeMode::Classical).unwrap();
        assert!((fit.coefficient("D").unwrap() + 0.05).abs() < 1e-8);
    }

    #[test]
    fn gauge_invariance_under_reference_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dm = panel_design(&mut rng, 5, 6, 0.85, -0.03, 0.1, 2);
        let fe_a = encode_fixed_effects(&dm).unwrap();
        let countries = dm.countries();
        let years = dm.years();
        let fe_b = encode_fixed_effects_with_reference(
            &dm,
            countries.last().unwrap(),
            *years.last().unwrap(),
        )
        .unwrap();
        let fit_a = twfe_fit(&fe_a, SeMode::Classical).unwrap();
        let fit_b = twfe_fit(&fe_b, SeMode::Classical).unwrap();
        assert!(
            (fit_a.coefficient("D").unwrap() - fit_b.coefficient("D").unwrap()).abs() < 1e-8
        );
        assert!((fit_a.r_squared - fit_b.r_squared).abs() < 1e-8);
        for i in 0..dm.n_rows() {
            assert!((fit_a.residuals[i] - fit_b.residuals[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn auxiliary_residuals_closed_form_2x2() {
        let dm = two_by_two((1, 1));
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let expect = [0.25, -0.25, -0.25, 0.25];
        for (e, x) in eps.iter().zip(expect) {
            assert!((e - x).abs() < 1e-10, "{e} vs {x}");
        }
    }

    #[test]
    fn auxiliary_residuals_vanish_for_constant_treatment() {
        for constant in [0.0, 1.0] {
            let mut dm = two_by_two((1, 1));
            dm.treatment = vec![constant; 4];
            let fe = encode_fixed_effects(&dm).unwrap();
            let eps = treatment_residuals(&fe).unwrap();
            for e in eps {
                assert!(e.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn auxiliary_residuals_orthogonal_to_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let dm = panel_design(&mut rng, 7, 9, 0.8, 0.0, 0.1, 0);
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let total: f64 = eps.iter().sum();
        assert!(total.abs() < 1e-10);
        for country in dm.countries() {
            let group: f64 = dm
                .rows
                .iter()
                .zip(&eps)
                .filter(|(k, _)| k.country == country)
                .map(|(_, &e)| e)
                .sum();
            assert!(group.abs() < 1e-8, "country {country}: {group}");
        }
        for year in dm.years() {
            let group: f64 = dm
                .rows
                .iter()
                .zip(&eps)
                .filter(|(k, _)| k.year == year)
                .map(|(_, &e)| e)
                .sum();
            assert!(group.abs() < 1e-8, "year {year}: {group}");
        }
    }

    #[test]
    fn decomposition_single_treated_cell() {
        let dm = two_by_two((1, 1));
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let wd = weight_decomposition(&eps, &dm.treatment).unwrap();
        assert_eq!(wd.total_treated, 1);
        assert_eq!(wd.treated_indices, vec![3]);
        assert!((wd.weights[0] - 1.0).abs() < 1e-10);
        assert!((wd.normalized_weights[0] - 1.0).abs() < 1e-10);
        assert_eq!(wd.negative_weight_count(), 0);
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let dm = panel_design(&mut rng, 6, 7, 0.85, 0.0, 0.1, 0);
            let fe = encode_fixed_effects(&dm).unwrap();
            let eps = treatment_residuals(&fe).unwrap();
            let wd = weight_decomposition(&eps, &dm.treatment).unwrap();
            let total: f64 = wd.normalized_weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn decomposition_degenerate_cases() {
        let eps = vec![0.0; 4];
        let d = vec![0.0; 4];
        assert!(matches!(
            weight_decomposition(&eps, &d).unwrap_err(),
            Error::DegenerateDecomposition
        ));
        let d = vec![1.0; 4];
        assert!(matches!(
            weight_decomposition(&eps, &d).unwrap_err(),
            Error::DegenerateDecomposition
        ));
    }

    #[test]
    fn frisch_waugh_identity_matches_twfe() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let dm = panel_design(&mut rng, 5, 8, 0.9, -0.04, 0.2, 0);
            let fe = encode_fixed_effects(&dm).unwrap();
            let tau = twfe_fit(&fe, SeMode::Classical)
                .unwrap()
                .coefficient("D")
                .unwrap();
            let eps = treatment_residuals(&fe).unwrap();
            let num: f64 = eps.iter().zip(&dm.response).map(|(e, y)| e * y).sum();
            let den: f64 = eps.iter().zip(&dm.treatment).map(|(e, d)| e * d).sum();
            assert!((tau - num / den).abs() < 1e-8);
        }
    }

    #[test]
    fn weights_ignore_response_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut dm = panel_design(&mut rng, 5, 6, 1.0, -0.02, 0.1, 0);
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let wd1 = weight_decomposition(&eps, &dm.treatment).unwrap();
        for y in &mut dm.response {
            *y += 42.0;
        }
        let fe2 = encode_fixed_effects(&dm).unwrap();
        let eps2 = treatment_residuals(&fe2).unwrap();
        let wd2 = weight_decomposition(&eps2, &dm.treatment).unwrap();
        for (a, b) in wd1.weights.iter().zip(&wd2.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn common_wave_column_shares_negative_sign_among_controls() {
        // Balanced panel, 6 countries x 5 years; countries 0-2 all treated
        // at the middle year only. Closed form: treated cells get
        // (1 - m/C)(1 - 1/T) > 0, control cells at the wave year get
        // -(m/C)(1 - 1/T) < 0.
        let wave_year = 2002;
        let mut rows = Vec::new();
        let mut d = Vec::new();
        for c in 0..6 {
            for year in 2000..2005 {
                rows.push(RowKey::new(format!("C{c}"), year));
                d.push(f64::from(c < 3 && year == wave_year));
            }
        }
        let n = rows.len();
        let dm = DesignMatrix::new(
            rows,
            vec![0.0; n],
            d,
            DMatrix::zeros(n, 0),
            vec![],
            true,
        )
        .unwrap();
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();

        // Demeaning closed form on the balanced panel.
        let dbar = 3.0 / 30.0;
        for (i, key) in dm.rows.iter().enumerate() {
            let treated_country = key.country < "C3".to_string();
            let di = dm.treatment[i];
            let dbar_i = if treated_country { 1.0 / 5.0 } else { 0.0 };
            let dbar_t = if key.year == wave_year { 0.5 } else { 0.0 };
            let closed = di - dbar_i - dbar_t + dbar;
            assert!((eps[i] - closed).abs() < 1e-10, "cell {key}");
        }
        // The wave-year column among untreated countries is uniformly
        // negative: the blue vertical strip.
        for (i, key) in dm.rows.iter().enumerate() {
            if key.year == wave_year && dm.treatment[i] == 0.0 {
                assert!(eps[i] < 0.0);
            }
        }
    }

    #[test]
    fn contribution_matrix_layout_and_exports() {
        let dm = two_by_two((1, 1));
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let wd = weight_decomposition(&eps, &dm.treatment).unwrap();
        let cm = contribution_matrix(&wd, &dm.rows).unwrap();
        assert_eq!(cm.countries, vec!["C0".to_string(), "C1".to_string()]);
        assert_eq!(cm.years, vec![2000, 2001]);
        for (cell, expect) in cm.cells.iter().zip([0.25, -0.25, -0.25, 0.25]) {
            assert!((cell.unwrap() - expect).abs() < 1e-10);
        }
        let csv = cm.to_csv();
        assert!(csv.starts_with("country,2000,2001\n"));
        let svg = cm.to_svg();
        assert!(svg.contains("<svg"));
        assert_eq!(svg, cm.to_svg());

        // Sign of each cell matches the residual sign.
        for (i, cell) in cm.cells.iter().enumerate() {
            let v = cell.unwrap();
            assert_eq!(v > 0.0, [true, false, false, true][i]);
        }
    }

    #[test]
    fn contribution_matrix_all_control_is_zero() {
        let mut dm = two_by_two((1, 1));
        dm.treatment = vec![0.0; 4];
        let fe = encode_fixed_effects(&dm).unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let cm = contribution_matrix_from_residuals(&eps, &dm.rows).unwrap();
        for cell in &cm.cells {
            assert!(cell.unwrap().abs() < 1e-12);
        }
        assert_eq!(cm.max_abs.max(1e-12), 1e-12);
    }

    #[test]
    fn contribution_matrix_marks_absent_cells() {
        let keys = vec![
            RowKey::new("A", 2000),
            RowKey::new("A", 2001),
            RowKey::new("B", 2001),
        ];
        let cm = contribution_matrix_from_residuals(&[0.1, -0.1, 0.2], &keys).unwrap();
        // (B, 2000) was never observed.
        assert!(cm.cells[2].is_none());
        let csv = cm.to_csv();
        assert!(csv.contains("B,,"));
    }

    #[test]
    fn placebo_empty_leads_returns_base_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let dm = panel_design(&mut rng, 5, 7, 1.0, -0.05, 0.1, 1);
        let fe = encode_fixed_effects(&dm).unwrap();
        let base = twfe_fit(&fe, SeMode::Classical).unwrap();
        let diag = placebo_pretrend(&fe, &[], SeMode::Classical).unwrap();
        assert_eq!(diag.fit.coefficients, base.coefficients);
        assert!(diag.lead_names.is_empty());
        assert!(diag.joint_f.is_none());
    }

    #[test]
    fn placebo_requires_treated_rows() {
        let mut dm = two_by_two((1, 1));
        dm.treatment = vec![0.0; 4];
        let fe = encode_fixed_effects(&dm).unwrap();
        assert!(placebo_pretrend(&fe, &[1], SeMode::Classical).is_err());
    }

    #[test]
    fn placebo_adds_lead_indicators() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let dm = panel_design(&mut rng, 6, 10, 1.0, -0.05, 0.05, 0);
        let fe = encode_fixed_effects(&dm).unwrap();
        let diag = placebo_pretrend(&fe, &[1, 2], SeMode::Classical).unwrap();
        assert_eq!(diag.lead_names, vec!["lead_1", "lead_2"]);
        assert!(diag.joint_f.is_some());
        let p = diag.joint_p.unwrap();
        assert!((0.0..=1.0).contains(&p));
        for name in &diag.lead_names {
            assert!(diag.fit.coefficient(name).is_some());
        }
    }
}
