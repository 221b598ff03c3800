//! Panel-data causal inference toolkit.
//!
//! Pipeline: ingest an imbalanced country-year panel and a crisis catalog,
//! forward-fill and min-max scale, align everything into a design matrix,
//! then estimate the effect of crises on forward-looking GDP growth four
//! ways — plain multivariate OLS, its LASSO variant, staggered two-way
//! fixed-effects DID, and penalized DID — and decompose the DID estimate
//! into per-observation residual weights to show which country-years
//! actually drive it (negative weights included).
//!
//! Synthetic data generation with explicit potential outcomes lives in
//! [`synth`]; every estimator is validated against panels with known
//! ground truth.

pub mod did;
pub mod error;
pub mod lasso;
pub mod panel;
pub mod regress;
pub mod report;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use panel::{
    build_design, correlation_matrix, load_crisis_csv, load_panel_csv, CrisisCatalog,
    CrisisEvent, CrisisKind, DesignMatrix, PanelDataset, RowKey,
};
pub use regress::{ols_fit, predict, significant_subset, FitResult, SeMode};
