//! Serialization of fit results: a JSON document and an aligned text table.
//!
//! Penalized and unpenalized fits share one schema; fields that do not
//! apply (inference columns for a penalized fit, the penalty block for an
//! unpenalized one) are null. Field order is fixed by the structs, so
//! serialization is byte-stable for identical inputs.

use serde::Serialize;

use crate::lasso::LassoFit;
use crate::regress::FitResult;

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummaryBlock {
    pub n: usize,
    pub p: usize,
    pub dof: Option<usize>,
    pub se_mode: Option<String>,
    pub r_squared: Option<f64>,
    pub adjusted_r_squared: Option<f64>,
    pub ci_level: Option<f64>,
    pub lambda: Option<f64>,
    pub converged: Option<bool>,
    pub n_iterations: Option<usize>,
    pub objective: Option<f64>,
}

/// One serializable view over either fit flavor.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub coefficients: Vec<CoefficientRow>,
    pub summary: FitSummaryBlock,
}

impl FitReport {
    pub fn from_fit(fit: &FitResult) -> FitReport {
        let coefficients = fit
            .coefficient_names
            .iter()
            .enumerate()
            .map(|(i, name)| CoefficientRow {
                name: name.clone(),
                estimate: fit.coefficients[i],
                std_error: Some(fit.standard_errors[i]),
                t: Some(fit.t_statistics[i]),
                p: Some(fit.p_values[i]),
                ci_low: Some(fit.confidence_intervals[i].0),
                ci_high: Some(fit.confidence_intervals[i].1),
            })
            .collect();
        FitReport {
            coefficients,
            summary: FitSummaryBlock {
                n: fit.n,
                p: fit.n_params,
                dof: Some(fit.dof),
                se_mode: Some(fit.se_mode.to_string()),
                r_squared: Some(fit.r_squared),
                adjusted_r_squared: Some(fit.adjusted_r_squared),
                ci_level: Some(fit.ci_level),
                lambda: None,
                converged: None,
                n_iterations: None,
                objective: None,
            },
        }
    }

    pub fn from_lasso(fit: &LassoFit) -> FitReport {
        let mut coefficients = vec![CoefficientRow {
            name: "intercept".to_string(),
            estimate: fit.intercept,
            std_error: None,
            t: None,
            p: None,
            ci_low: None,
            ci_high: None,
        }];
        coefficients.extend(fit.coefficient_names.iter().enumerate().map(|(i, name)| {
            CoefficientRow {
                name: name.clone(),
                estimate: fit.coefficients[i],
                std_error: None,
                t: None,
                p: None,
                ci_low: None,
                ci_high: None,
            }
        }));
        FitReport {
            coefficients,
            summary: FitSummaryBlock {
                n: fit.n,
                p: fit.coefficient_names.len() + 1,
                dof: None,
                se_mode: None,
                r_squared: None,
                adjusted_r_squared: None,
                ci_level: None,
                lambda: Some(fit.lambda),
                converged: Some(fit.converged),
                n_iterations: Some(fit.n_iterations),
                objective: Some(fit.objective_value),
            },
        }
    }

    /// Penalized fits keep exact zeros; this view drops them, mirroring how
    /// sparse results are usually presented.
    pub fn nonzero_only(&self) -> FitReport {
        FitReport {
            coefficients: self
                .coefficients
                .iter()
                .filter(|row| row.estimate != 0.0)
                .cloned()
                .collect(),
            summary: self.summary.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail") + "\n"
    }

    /// Aligned plain-text table with a trailing summary block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let has_inference = self.coefficients.iter().any(|r| r.std_error.is_some());
        if has_inference {
            out.push_str(&format!(
                "{:<24} {:>12} {:>12} {:>10} {:>10} {:>12} {:>12}\n",
                "coefficient", "estimate", "std.err", "t", "p", "ci_low", "ci_high"
            ));
        } else {
            out.push_str(&format!("{:<24} {:>12}\n", "coefficient", "estimate"));
        }
        for row in &self.coefficients {
            if has_inference {
                out.push_str(&format!(
                    "{:<24} {:>12.6} {:>12.6} {:>10.3} {:>10.4} {:>12.6} {:>12.6}\n",
                    row.name,
                    row.estimate,
                    row.std_error.unwrap_or(f64::NAN),
                    row.t.unwrap_or(f64::NAN),
                    row.p.unwrap_or(f64::NAN),
                    row.ci_low.unwrap_or(f64::NAN),
                    row.ci_high.unwrap_or(f64::NAN),
                ));
            } else {
                out.push_str(&format!("{:<24} {:>12.6}\n", row.name, row.estimate));
            }
        }
        out.push('\n');
        let s = &self.summary;
        out.push_str(&format!("n = {}, p = {}\n", s.n, s.p));
        if let (Some(r2), Some(ar2)) = (s.r_squared, s.adjusted_r_squared) {
            out.push_str(&format!("R^2 = {r2:.6}, adjusted R^2 = {ar2:.6}\n"));
        }
        if let (Some(dof), Some(mode)) = (s.dof, &s.se_mode) {
            out.push_str(&format!("dof = {dof}, se = {mode}\n"));
        }
        if let Some(lambda) = s.lambda {
            out.push_str(&format!(
                "lambda = {lambda:.6e}, converged = {}, sweeps = {}\n",
                s.converged.unwrap_or(false),
                s.n_iterations.unwrap_or(0)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::RowKey;
    use crate::regress::{ols_fit, SeMode};
    use nalgebra::DMatrix;

    fn tiny_fit() -> FitResult {
        let n = 12;
        let rows: Vec<RowKey> = (0..n)
            .map(|i| RowKey::new(format!("C{}", i % 3), 2000 + (i / 3) as i32))
            .collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.4 - 0.1 * v).collect();
        let dm = crate::panel::DesignMatrix::new(
            rows,
            y,
            (0..n).map(|i| f64::from(i % 4 == 0)).collect(),
            DMatrix::from_column_slice(n, 1, &x),
            vec!["x".into()],
            true,
        )
        .unwrap();
        ols_fit(&dm, SeMode::Classical).unwrap()
    }

    #[test]
    fn json_roundtrips_and_is_stable() {
        let fit = tiny_fit();
        let report = FitReport::from_fit(&fit);
        let a = report.to_json();
        let b = report.to_json();
        assert_eq!(a, b);
        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(value["summary"]["n"], 12);
        assert!(value["summary"]["lambda"].is_null());
        assert_eq!(value["coefficients"][0]["name"], "intercept");
    }

    #[test]
    fn text_table_aligns_and_reports_summary() {
        let report = FitReport::from_fit(&tiny_fit());
        let text = report.to_text();
        assert!(text.contains("coefficient"));
        assert!(text.contains("R^2"));
        assert!(text.lines().count() >= 6);
    }

    #[test]
    fn lasso_report_has_penalty_block() {
        use crate::lasso::{lasso_fit, DEFAULT_MAX_ITER, DEFAULT_TOL};
        let n = 20;
        let rows: Vec<RowKey> = (0..n).map(|i| RowKey::new("A", 1990 + i as i32)).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 / 7.0).sin().abs()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.2 * v).collect();
        let dm = crate::panel::DesignMatrix::new(
            rows,
            y,
            (0..n).map(|i| f64::from(i % 2 == 0)).collect(),
            DMatrix::from_column_slice(n, 1, &x),
            vec!["x".into()],
            true,
        )
        .unwrap();
        let fit = lasso_fit(&dm, 0.5, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let report = FitReport::from_lasso(&fit);
        let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(value["summary"]["lambda"].is_number());
        assert!(value["summary"]["r_squared"].is_null());
        // Fully-penalized fit keeps only the intercept among nonzero rows.
        let sparse = report.nonzero_only();
        assert!(sparse.coefficients.iter().all(|r| r.estimate != 0.0));
    }
}
