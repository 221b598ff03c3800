//! Panel datasets, crisis catalogs, and estimation-ready design matrices.
//!
//! A [`PanelDataset`] is an imbalanced country-year panel: a dense
//! country x year x variable cube with a missingness mask, plus a
//! row-presence mask distinguishing "row absent from the source" from
//! "row present with missing cells". Transforms (`forward_fill`,
//! `minmax_scale`, `forward_growth`) are pure: they return new values and
//! never mutate their input. [`build_design`] aligns the response,
//! treatment, and confounders into a [`DesignMatrix`] ready for
//! estimation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Identifies one observation: a country at a year.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RowKey {
    pub country: String,
    pub year: i32,
}

impl RowKey {
    pub fn new(country: impl Into<String>, year: i32) -> Self {
        RowKey {
            country: country.into(),
            year,
        }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.country, self.year)
    }
}

/// Crisis category. All kinds collapse into a single binary treatment at
/// design-build time; the kind is retained for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CrisisKind {
    Banking,
    Currency,
    Sovereign,
    Restructuring,
}

impl CrisisKind {
    pub const ALL: [CrisisKind; 4] = [
        CrisisKind::Banking,
        CrisisKind::Currency,
        CrisisKind::Sovereign,
        CrisisKind::Restructuring,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CrisisKind::Banking => "banking",
            CrisisKind::Currency => "currency",
            CrisisKind::Sovereign => "sovereign",
            CrisisKind::Restructuring => "restructuring",
        }
    }
}

impl fmt::Display for CrisisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrisisKind {
    type Err = Error;

    /// Case-insensitive parse.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        CrisisKind::ALL
            .iter()
            .find(|k| k.as_str() == lower)
            .copied()
            .ok_or_else(|| Error::EnumeratedValue {
                field: "kind",
                value: s.to_string(),
                allowed: "banking, currency, sovereign, restructuring".to_string(),
            })
    }
}

/// One crisis event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CrisisEvent {
    pub country: String,
    pub year: i32,
    pub kind: CrisisKind,
}

/// Set of crisis events; induces the treatment path per country.
#[derive(Debug, Clone, Default)]
pub struct CrisisCatalog {
    pub events: BTreeSet<CrisisEvent>,
}

impl CrisisCatalog {
    pub fn new(events: impl IntoIterator<Item = CrisisEvent>) -> Self {
        CrisisCatalog {
            events: events.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// True if any crisis of any kind hit `country` at `year`.
    pub fn is_treated(&self, country: &str, year: i32) -> bool {
        CrisisKind::ALL.iter().any(|&kind| {
            self.events.contains(&CrisisEvent {
                country: country.to_string(),
                year,
                kind,
            })
        })
    }

    /// Distinct countries referenced by the catalog.
    pub fn countries(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.country.as_str()).collect()
    }

    /// Serialize in the `country,year,kind` interchange format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("country,year,kind\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{}\n", e.country, e.year, e.kind));
        }
        out
    }
}

/// Min/max recorded by `minmax_scale` so a scaling can be reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleParams {
    pub min: f64,
    pub max: f64,
}

impl ScaleParams {
    /// Apply the recorded transform. Constant columns (max == min) map to 0.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Imbalanced country-year panel with a missingness mask.
///
/// `values` and `missing` are dense country x year x variable cubes;
/// `row_observed` marks which (country, year) rows existed in the source,
/// so transforms never invent observations for rows a country was never
/// observed in.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    pub variable_names: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
    row_observed: Vec<bool>,
    /// Scaling parameters recorded by `minmax_scale`, keyed by variable.
    pub scale_params: BTreeMap<String, ScaleParams>,
    /// Data-quality notes accumulated by transforms.
    pub warnings: Vec<String>,
}

/// Forward-looking growth response, keyed by (country, year).
#[derive(Debug, Clone)]
pub struct ResponseColumn {
    pub horizon: u32,
    pub values: BTreeMap<RowKey, f64>,
    pub warnings: Vec<String>,
}

impl PanelDataset {
    /// Build a dataset from per-row cell maps. `rows` maps (country, year)
    /// to per-variable optional values; `None` marks a missing cell.
    pub fn from_rows(
        variable_names: Vec<String>,
        rows: &BTreeMap<RowKey, Vec<Option<f64>>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("panel has no rows".to_string()));
        }
        let mut name_set = BTreeSet::new();
        for name in &variable_names {
            if !name_set.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name `{name}`")));
            }
        }
        let countries: Vec<String> = rows
            .keys()
            .map(|k| k.country.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let years: Vec<i32> = rows
            .keys()
            .map(|k| k.year)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let nv = variable_names.len();
        let mut ds = PanelDataset {
            values: vec![f64::NAN; countries.len() * years.len() * nv],
            missing: vec![true; countries.len() * years.len() * nv],
            row_observed: vec![false; countries.len() * years.len()],
            countries,
            years,
            variable_names,
            scale_params: BTreeMap::new(),
            warnings: Vec::new(),
        };
        for (key, cells) in rows {
            if cells.len() != nv {
                return Err(Error::Schema(format!(
                    "row {key} has {} cells, expected {nv}",
                    cells.len()
                )));
            }
            let c = ds.country_index(&key.country).expect("country collected");
            let y = ds.year_index(key.year).expect("year collected");
            ds.row_observed[c * ds.years.len() + y] = true;
            for (v, cell) in cells.iter().enumerate() {
                if let Some(x) = cell {
                    if x.is_finite() {
                        ds.set_cell(c, y, v, *x);
                    }
                }
            }
        }
        Ok(ds)
    }

    pub fn country_index(&self, country: &str) -> Option<usize> {
        self.countries
            .binary_search_by(|c| c.as_str().cmp(country))
            .ok()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.binary_search(&year).ok()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variable_names.iter().position(|v| v == name)
    }

    fn cell_idx(&self, c: usize, y: usize, v: usize) -> usize {
        (c * self.years.len() + y) * self.variable_names.len() + v
    }

    /// Value at (country, year, variable) indices, `None` when missing.
    pub fn cell(&self, c: usize, y: usize, v: usize) -> Option<f64> {
        let i = self.cell_idx(c, y, v);
        if self.missing[i] {
            None
        } else {
            Some(self.values[i])
        }
    }

    fn set_cell(&mut self, c: usize, y: usize, v: usize, x: f64) {
        let i = self.cell_idx(c, y, v);
        self.values[i] = x;
        self.missing[i] = false;
    }

    /// True when the (country, year) row existed in the source data.
    pub fn row_observed(&self, c: usize, y: usize) -> bool {
        self.row_observed[c * self.years.len() + y]
    }

    /// Number of observed (country, year) row keys.
    pub fn n_rows(&self) -> usize {
        self.row_observed.iter().filter(|&&o| o).count()
    }

    /// Observed row keys in (country, year) order.
    pub fn row_keys(&self) -> Vec<RowKey> {
        let mut keys = Vec::with_capacity(self.n_rows());
        for (c, country) in self.countries.iter().enumerate() {
            for (y, &year) in self.years.iter().enumerate() {
                if self.row_observed(c, y) {
                    keys.push(RowKey::new(country.clone(), year));
                }
            }
        }
        keys
    }

    /// Fill missing cells from the most recent earlier value of the same
    /// country and variable. Cells with no past value stay missing. Fills
    /// apply only to observed rows; rows a country never had are untouched.
    pub fn forward_fill(&self) -> PanelDataset {
        let mut out = self.clone();
        let n_years = self.years.len();
        for c in 0..self.countries.len() {
            for v in 0..self.variable_names.len() {
                let mut last: Option<f64> = None;
                for y in 0..n_years {
                    if !self.row_observed(c, y) {
                        continue;
                    }
                    match self.cell(c, y, v) {
                        Some(x) => last = Some(x),
                        None => {
                            if let Some(x) = last {
                                out.set_cell(c, y, v, x);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Scale each named variable to [0, 1] with min/max pooled over all
    /// non-missing cells of that variable across countries and years.
    /// Constant columns map to 0.0 and record a warning. The parameters are
    /// recorded on the returned dataset.
    pub fn minmax_scale(&self, vars: &[&str]) -> Result<PanelDataset> {
        let mut out = self.clone();
        for &name in vars {
            let v = self
                .variable_index(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for c in 0..self.countries.len() {
                for y in 0..self.years.len() {
                    if let Some(x) = self.cell(c, y, v) {
                        min = min.min(x);
                        max = max.max(x);
                    }
                }
            }
            if min > max {
                // No non-missing cells at all; nothing to scale.
                out.warnings
                    .push(format!("variable `{name}` has no observed cells to scale"));
                continue;
            }
            let params = ScaleParams { min, max };
            if max == min {
                out.warnings.push(format!(
                    "variable `{name}` is constant ({min}); scaled to 0.0 everywhere"
                ));
            }
            for c in 0..self.countries.len() {
                for y in 0..self.years.len() {
                    if let Some(x) = self.cell(c, y, v) {
                        out.set_cell(c, y, v, params.apply(x));
                    }
                }
            }
            out.scale_params.insert(name.to_string(), params);
        }
        Ok(out)
    }

    /// Forward-looking growth rate of GDP over `horizon` calendar years:
    /// `GDP(t + horizon) / GDP(t) - 1`. Defined only where GDP is observed
    /// at both endpoints; gaps in the year grid count toward the horizon
    /// (calendar distance, not row adjacency). A zero GDP at the base year
    /// yields a missing response and a warning.
    pub fn forward_growth(&self, horizon: u32) -> Result<ResponseColumn> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".to_string()));
        }
        let gdp = self
            .variable_index("GDP")
            .ok_or_else(|| Error::UnknownVariable("GDP".to_string()))?;
        let mut values = BTreeMap::new();
        let mut warnings = Vec::new();
        for (c, country) in self.countries.iter().enumerate() {
            for (y, &year) in self.years.iter().enumerate() {
                if !self.row_observed(c, y) {
                    continue;
                }
                let target_year = year + horizon as i32;
                let Some(y2) = self.year_index(target_year) else {
                    continue;
                };
                if !self.row_observed(c, y2) {
                    continue;
                }
                let (Some(base), Some(ahead)) = (self.cell(c, y, gdp), self.cell(c, y2, gdp))
                else {
                    continue;
                };
                if base == 0.0 {
                    warnings.push(format!(
                        "GDP is zero at ({country}, {year}); growth undefined, response dropped"
                    ));
                    continue;
                }
                values.insert(RowKey::new(country.clone(), year), ahead / base - 1.0);
            }
        }
        Ok(ResponseColumn {
            horizon,
            values,
            warnings,
        })
    }

    /// Serialize in the panel interchange format: one line per observed
    /// row, empty fields for missing cells. Values print in shortest
    /// round-trip form, so parsing the output reproduces the dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("country,year");
        for name in &self.variable_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (c, country) in self.countries.iter().enumerate() {
            for (y, &year) in self.years.iter().enumerate() {
                if !self.row_observed(c, y) {
                    continue;
                }
                out.push_str(&format!("{country},{year}"));
                for v in 0..self.variable_names.len() {
                    out.push(',');
                    if let Some(x) = self.cell(c, y, v) {
                        out.push_str(&format!("{x}"));
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Per-variable mean and sample standard deviation over non-missing
    /// cells.
    pub fn summary_stats(&self) -> Vec<VariableSummary> {
        self.variable_names
            .iter()
            .enumerate()
            .map(|(v, name)| {
                let mut xs = Vec::new();
                for c in 0..self.countries.len() {
                    for y in 0..self.years.len() {
                        if let Some(x) = self.cell(c, y, v) {
                            xs.push(x);
                        }
                    }
                }
                let n = xs.len();
                let mean = if n > 0 {
                    xs.iter().sum::<f64>() / n as f64
                } else {
                    f64::NAN
                };
                let sd = if n > 1 {
                    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    f64::NAN
                };
                VariableSummary {
                    name: name.clone(),
                    mean,
                    sd,
                    n_observed: n,
                }
            })
            .collect()
    }
}

/// Mean/sd of one variable over its non-missing cells.
#[derive(Debug, Clone, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub n_observed: usize,
}

/// Aligned response, treatment, and confounders with no missing values.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub rows: Vec<RowKey>,
    pub response: Vec<f64>,
    /// Binary treatment, one entry per row, each exactly 0.0 or 1.0.
    pub treatment: Vec<f64>,
    /// n x p confounder matrix.
    pub confounders: DMatrix<f64>,
    pub confounder_names: Vec<String>,
    pub has_intercept: bool,
    /// Crisis-catalog countries that did not resolve against the panel.
    pub unresolved_countries: Vec<String>,
    pub warnings: Vec<String>,
}

impl DesignMatrix {
    /// Validated constructor. Hard errors: length mismatches, duplicate row
    /// keys, non-finite cells, treatment outside {0, 1}. Confounder cells
    /// outside [0, 1] only warn, so unscaled designs remain usable in
    /// simulation and testing.
    pub fn new(
        rows: Vec<RowKey>,
        response: Vec<f64>,
        treatment: Vec<f64>,
        confounders: DMatrix<f64>,
        confounder_names: Vec<String>,
        has_intercept: bool,
    ) -> Result<Self> {
        let n = rows.len();
        if response.len() != n || treatment.len() != n || confounders.nrows() != n {
            return Err(Error::Schema(format!(
                "design length mismatch: {} rows, {} responses, {} treatments, {} confounder rows",
                n,
                response.len(),
                treatment.len(),
                confounders.nrows()
            )));
        }
        if confounders.ncols() != confounder_names.len() {
            return Err(Error::Schema(format!(
                "{} confounder columns but {} names",
                confounders.ncols(),
                confounder_names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for key in &rows {
            if !seen.insert(key.clone()) {
                return Err(Error::Schema(format!("duplicate design row key {key}")));
            }
        }
        if response.iter().any(|x| !x.is_finite())
            || confounders.iter().any(|x| !x.is_finite())
        {
            return Err(Error::Schema(
                "design contains non-finite values".to_string(),
            ));
        }
        if treatment.iter().any(|&d| d != 0.0 && d != 1.0) {
            return Err(Error::Schema(
                "treatment entries must be exactly 0 or 1".to_string(),
            ));
        }
        let mut warnings = Vec::new();
        for (j, name) in confounder_names.iter().enumerate() {
            let col = confounders.column(j);
            if col.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
                warnings.push(format!("confounder `{name}` has values outside [0, 1]"));
            }
        }
        Ok(DesignMatrix {
            rows,
            response,
            treatment,
            confounders,
            confounder_names,
            has_intercept,
            unresolved_countries: Vec::new(),
            warnings,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_confounders(&self) -> usize {
        self.confounder_names.len()
    }

    pub fn treated_rows(&self) -> usize {
        self.treatment.iter().filter(|&&d| d == 1.0).count()
    }

    pub fn treated_share(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.treated_rows() as f64 / self.rows.len() as f64
        }
    }

    /// Distinct countries in row order of first appearance, sorted.
    pub fn countries(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|k| k.country.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Distinct years, ascending.
    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.rows.iter().map(|k| k.year).collect();
        set.into_iter().collect()
    }
}

/// Parse a panel CSV (`country,year,<var1>,...`) from a reader.
///
/// Empty fields and non-numeric tokens are marked missing. Duplicate
/// (country, year) rows are rejected with the offending line number.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::Schema(format!(
            "expected header `country,year,<variables...>`, found {} columns",
            headers.len()
        )));
    }
    for (pos, expected) in [(0, "country"), (1, "year")] {
        let got = headers.get(pos).unwrap_or("");
        if !got.eq_ignore_ascii_case(expected) {
            return Err(Error::Schema(format!(
                "expected column {} to be `{expected}`, found `{got}`",
                pos + 1
            )));
        }
    }
    let variable_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();

    let mut rows: BTreeMap<RowKey, Vec<Option<f64>>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let country = record.get(0).unwrap_or("").to_string();
        if country.is_empty() {
            return Err(Error::Schema(format!("empty country at line {line}")));
        }
        let year: i32 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Schema(format!("unparseable year at line {line}")))?;
        let cells: Vec<Option<f64>> = (2..headers.len())
            .map(|i| {
                record
                    .get(i)
                    .and_then(|tok| tok.parse::<f64>().ok())
                    .filter(|x| x.is_finite())
            })
            .collect();
        let key = RowKey::new(country, year);
        if rows.contains_key(&key) {
            return Err(Error::Duplicate {
                line,
                key: key.to_string(),
            });
        }
        rows.insert(key, cells);
    }
    PanelDataset::from_rows(variable_names, &rows)
}

/// Load a panel CSV from disk. See [`read_panel_csv`].
pub fn load_panel_csv(path: impl AsRef<Path>) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    read_panel_csv(file)
}

/// Parse a crisis catalog CSV (`country,year,kind`) from a reader.
pub fn read_crisis_csv<R: Read>(reader: R) -> Result<CrisisCatalog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let expected = ["country", "year", "kind"];
    if headers.len() != 3 {
        return Err(Error::Schema(format!(
            "expected header `country,year,kind`, found {} columns",
            headers.len()
        )));
    }
    for (pos, want) in expected.iter().enumerate() {
        let got = headers.get(pos).unwrap_or("");
        if !got.eq_ignore_ascii_case(want) {
            return Err(Error::Schema(format!(
                "expected column {} to be `{want}`, found `{got}`",
                pos + 1
            )));
        }
    }

    let mut events = BTreeSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let country = record.get(0).unwrap_or("").to_string();
        if country.is_empty() {
            return Err(Error::Schema(format!("empty country at line {line}")));
        }
        let year: i32 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Schema(format!("unparseable year at line {line}")))?;
        let kind: CrisisKind = record.get(2).unwrap_or("").parse()?;
        let event = CrisisEvent {
            country,
            year,
            kind,
        };
        if !events.insert(event.clone()) {
            return Err(Error::Duplicate {
                line,
                key: format!("({}, {}, {})", event.country, event.year, event.kind),
            });
        }
    }
    Ok(CrisisCatalog { events })
}

/// Load a crisis catalog CSV from disk. See [`read_crisis_csv`].
pub fn load_crisis_csv(path: impl AsRef<Path>) -> Result<CrisisCatalog> {
    let file = std::fs::File::open(path)?;
    read_crisis_csv(file)
}

/// Align the panel and the crisis catalog into a design matrix.
///
/// One row per observed (country, year) with a non-missing response and
/// all confounders present; `D = 1` iff any crisis of any kind hit that
/// (country, year). The dataset is expected to be forward-filled and
/// scaled already. Catalog countries that do not resolve against the
/// panel are reported on the result, never silently dropped.
pub fn build_design(
    ds: &PanelDataset,
    catalog: &CrisisCatalog,
    confounders: &[&str],
    horizon: u32,
) -> Result<DesignMatrix> {
    let conf_idx: Vec<usize> = confounders
        .iter()
        .map(|&name| {
            ds.variable_index(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        })
        .collect::<Result<_>>()?;

    let growth = ds.forward_growth(horizon)?;

    let unresolved: Vec<String> = catalog
        .countries()
        .into_iter()
        .filter(|c| ds.country_index(c).is_none())
        .map(str::to_string)
        .collect();

    let mut rows = Vec::new();
    let mut response = Vec::new();
    let mut treatment = Vec::new();
    let mut x = Vec::new();
    for (c, country) in ds.countries.iter().enumerate() {
        for (y, &year) in ds.years.iter().enumerate() {
            if !ds.row_observed(c, y) {
                continue;
            }
            let key = RowKey::new(country.clone(), year);
            let Some(&resp) = growth.values.get(&key) else {
                continue;
            };
            let cells: Option<Vec<f64>> = conf_idx.iter().map(|&v| ds.cell(c, y, v)).collect();
            let Some(cells) = cells else {
                continue;
            };
            rows.push(key);
            response.push(resp);
            treatment.push(if catalog.is_treated(country, year) {
                1.0
            } else {
                0.0
            });
            x.extend_from_slice(&cells);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(
            "design has no usable rows (all responses or confounders missing)".to_string(),
        ));
    }
    let n = rows.len();
    let confounder_matrix = DMatrix::from_row_slice(n, conf_idx.len(), &x);
    let mut dm = DesignMatrix::new(
        rows,
        response,
        treatment,
        confounder_matrix,
        confounders.iter().map(|s| s.to_string()).collect(),
        true,
    )?;
    dm.warnings.extend(growth.warnings);
    if dm.treated_rows() == 0 {
        dm.warnings
            .push("design has no treated rows".to_string());
    }
    let matched: usize = catalog
        .events
        .iter()
        .filter(|e| {
            dm.rows
                .binary_search_by(|k| (k.country.as_str(), k.year).cmp(&(e.country.as_str(), e.year)))
                .is_ok()
        })
        .count();
    if matched < catalog.len() {
        dm.warnings.push(format!(
            "{} of {} crisis events match no design row",
            catalog.len() - matched,
            catalog.len()
        ));
    }
    dm.unresolved_countries = unresolved;
    Ok(dm)
}

/// Pearson correlation matrix over the treatment column and every
/// confounder.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
    /// Columns with zero variance; their correlations are reported as 0.
    pub constant_columns: Vec<String>,
}

impl CorrelationMatrix {
    /// Full labeled matrix as CSV (not triangular).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("variable");
        for label in &self.labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(label);
            for j in 0..self.labels.len() {
                out.push(',');
                out.push_str(&format!("{:.12}", self.values[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Correlations of `[D | X]`: diagonal exactly 1, symmetric, constant
/// columns flagged and zeroed against everything.
pub fn correlation_matrix(dm: &DesignMatrix) -> Result<CorrelationMatrix> {
    let n = dm.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 2 rows, got {n}"
        )));
    }
    let mut labels = vec!["D".to_string()];
    labels.extend(dm.confounder_names.iter().cloned());
    let p = labels.len();

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    cols.push(dm.treatment.clone());
    for j in 0..dm.n_confounders() {
        cols.push(dm.confounders.column(j).iter().copied().collect());
    }

    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let sds: Vec<f64> = cols
        .iter()
        .zip(&means)
        .map(|(c, &m)| (c.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt())
        .collect();

    let constant_columns: Vec<String> = labels
        .iter()
        .zip(&sds)
        .filter(|(_, &s)| s == 0.0)
        .map(|(l, _)| l.clone())
        .collect();

    let mut values = DMatrix::zeros(p, p);
    for i in 0..p {
        values[(i, i)] = 1.0;
        for j in (i + 1)..p {
            let r = if sds[i] == 0.0 || sds[j] == 0.0 {
                0.0
            } else {
                let cov: f64 = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .sum();
                cov / (sds[i] * sds[j])
            };
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels,
        values,
        constant_columns,
    })
}
