//! Synthetic panels with known potential outcomes.
//!
//! The generator draws fixed effects, confounders, and noise from
//! independent seeded streams, assigns treatment paths per country, builds
//! both potential outcomes explicitly, and inverts the growth formula so
//! the full levels-to-growth pipeline reproduces the latent response
//! exactly. Violations of the identifying assumptions (a pre-treatment
//! dip, assignment confounded with the untreated outcome) are opt-in.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::Serialize;

use crate::did::{encode_fixed_effects, twfe_fit};
use crate::error::{Error, Result};
use crate::panel::{build_design, CrisisCatalog, CrisisEvent, CrisisKind, PanelDataset, RowKey};
use crate::regress::SeMode;

/// How treatment timing is laid out across countries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Staggering {
    /// One wave year shared by every treated country, plus idiosyncratic
    /// pulses so treatment histories differ (chronic vs. acute countries).
    CommonYear,
    /// Each treated country switches on at its own onset year and stays on.
    Staggered,
    /// Pulses on a five-year cycle; treatment exits and re-enters.
    Recurrent,
}

impl FromStr for Staggering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "common_year" => Ok(Staggering::CommonYear),
            "staggered" => Ok(Staggering::Staggered),
            "recurrent" => Ok(Staggering::Recurrent),
            other => Err(Error::Config(format!(
                "unknown staggering `{other}`; expected common_year, staggered, recurrent"
            ))),
        }
    }
}

/// Optional violation of the identifying assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    None,
    /// The untreated outcome dips by five noise SDs the year before a
    /// country's first treatment.
    PretrendDip,
    /// Treatment probability depends on the untreated outcome's noise.
    ConfoundedAssignment,
}

impl FromStr for Violation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Violation::None),
            "pretrend_dip" => Ok(Violation::PretrendDip),
            "confounded_assignment" => Ok(Violation::ConfoundedAssignment),
            other => Err(Error::Config(format!(
                "unknown violation `{other}`; expected none, pretrend_dip, confounded_assignment"
            ))),
        }
    }
}

/// Generator configuration.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorConfig {
    pub n_countries: usize,
    pub n_years: usize,
    pub n_confounders: usize,
    pub tau: f64,
    /// Per-country effect spread around `tau`; 0 keeps the effect
    /// homogeneous.
    pub tau_spread: f64,
    pub noise_sd: f64,
    /// Share of countries ever treated.
    pub treated_share: f64,
    pub staggering: Staggering,
    pub violation: Violation,
    pub horizon: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_countries: 20,
            n_years: 12,
            n_confounders: 3,
            tau: -0.05,
            tau_spread: 0.0,
            noise_sd: 0.02,
            treated_share: 0.3,
            staggering: Staggering::Staggered,
            violation: Violation::None,
            horizon: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_countries < 2 {
            return Err(Error::Config("need at least 2 countries".to_string()));
        }
        if self.n_years < 3 {
            return Err(Error::Config("need at least 3 years".to_string()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".to_string()));
        }
        if self.n_years < self.horizon as usize + 2 {
            return Err(Error::Config(format!(
                "{} years cannot support horizon {} (need horizon + 2)",
                self.n_years, self.horizon
            )));
        }
        if !(self.treated_share > 0.0 && self.treated_share < 1.0) {
            return Err(Error::Config(format!(
                "treated_share must lie strictly between 0 and 1, got {}",
                self.treated_share
            )));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config("noise_sd must be >= 0".to_string()));
        }
        if self.tau_spread < 0.0 {
            return Err(Error::Config("tau_spread must be >= 0".to_string()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` file (one pair per line, `#` comments).
    pub fn from_kv_str(text: &str) -> Result<GeneratorConfig> {
        let mut config = GeneratorConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_err =
                |what: &str| Error::Config(format!("line {}: bad {what} `{value}`", idx + 1));
            match key {
                "countries" => config.n_countries = value.parse().map_err(|_| parse_err("countries"))?,
                "years" => config.n_years = value.parse().map_err(|_| parse_err("years"))?,
                "confounders" => {
                    config.n_confounders = value.parse().map_err(|_| parse_err("confounders"))?
                }
                "tau" => config.tau = value.parse().map_err(|_| parse_err("tau"))?,
                "tau_spread" => config.tau_spread = value.parse().map_err(|_| parse_err("tau_spread"))?,
                "noise_sd" => config.noise_sd = value.parse().map_err(|_| parse_err("noise_sd"))?,
                "treated_share" => {
                    config.treated_share = value.parse().map_err(|_| parse_err("treated_share"))?
                }
                "staggering" => config.staggering = value.parse()?,
                "violation" => config.violation = value.parse()?,
                "horizon" => config.horizon = value.parse().map_err(|_| parse_err("horizon"))?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{other}`",
                        idx + 1
                    )))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_kv_file(path: impl AsRef<std::path::Path>) -> Result<GeneratorConfig> {
        GeneratorConfig::from_kv_str(&std::fs::read_to_string(path)?)
    }

    pub fn confounder_names(&self) -> Vec<String> {
        (1..=self.n_confounders).map(|j| format!("X{j}")).collect()
    }
}

/// Ground truth behind one generated panel.
#[derive(Debug, Clone, Serialize)]
pub struct SyntheticTruth {
    pub tau_true: f64,
    /// Per-country effects; equal to `tau_true` everywhere unless a spread
    /// was requested.
    pub tau_by_country: Vec<f64>,
    pub gamma_country: Vec<f64>,
    pub gamma_year: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub noise_sd: f64,
    pub countries: Vec<String>,
    /// Years carrying a defined response (the first `n_years - horizon`).
    pub response_years: Vec<i32>,
    /// Untreated potential outcome, row-major country x response-year.
    pub y0: Vec<f64>,
    /// Treated potential outcome, same layout.
    pub y1: Vec<f64>,
    /// Treatment years per country (the full treatment path).
    pub assignment: BTreeMap<String, BTreeSet<i32>>,
}

impl SyntheticTruth {
    pub fn y0_at(&self, country_idx: usize, year_pos: usize) -> f64 {
        self.y0[country_idx * self.response_years.len() + year_pos]
    }

    pub fn y1_at(&self, country_idx: usize, year_pos: usize) -> f64 {
        self.y1[country_idx * self.response_years.len() + year_pos]
    }
}

fn country_name(i: usize) -> String {
    format!("C{:03}", i + 1)
}

fn year_of(t: usize) -> i32 {
    2001 + t as i32
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generate a panel, its crisis catalog, and the ground truth.
///
/// Deterministic for a fixed seed. GDP levels start chains at 100 and fold
/// the observed latent growth in, so `forward_growth` recovers it exactly.
pub fn generate_panel(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(PanelDataset, CrisisCatalog, SyntheticTruth)> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    // Independent streams; assignment never shares a stream with noise
    // except under the explicit confounded-assignment violation.
    let mut rng_gamma = ChaCha8Rng::seed_from_u64(master.random());
    let mut rng_beta = ChaCha8Rng::seed_from_u64(master.random());
    let mut rng_x = ChaCha8Rng::seed_from_u64(master.random());
    let mut rng_noise = ChaCha8Rng::seed_from_u64(master.random());
    let mut rng_assign = ChaCha8Rng::seed_from_u64(master.random());

    let c_total = config.n_countries;
    let t_total = config.n_years;
    let window = t_total - config.horizon as usize;

    let fe_dist = Normal::new(0.0, 0.01).expect("fixed normal");
    let gamma_country: Vec<f64> = (0..c_total).map(|_| fe_dist.sample(&mut rng_gamma)).collect();
    let gamma_year: Vec<f64> = (0..window).map(|_| fe_dist.sample(&mut rng_gamma)).collect();
    let tau_by_country: Vec<f64> = (0..c_total)
        .map(|_| config.tau + config.tau_spread * (rng_gamma.random::<f64>() * 2.0 - 1.0))
        .collect();
    let beta_true: Vec<f64> = (0..config.n_confounders)
        .map(|_| rng_beta.random::<f64>() * 0.1 - 0.05)
        .collect();

    // Confounders over every year; uniforms on [0, 1] so the scaled-data
    // contract holds by construction.
    let x_cell = |rng: &mut ChaCha8Rng| rng.random::<f64>();
    let mut x = vec![0.0; c_total * t_total * config.n_confounders];
    for cell in x.iter_mut() {
        *cell = x_cell(&mut rng_x);
    }
    let x_at = |c: usize, t: usize, j: usize| x[(c * t_total + t) * config.n_confounders + j];

    let noise_dist = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).expect("noise normal");
    let mut noise = vec![0.0; c_total * window];
    if config.noise_sd > 0.0 {
        for cell in noise.iter_mut() {
            *cell = noise_dist.sample(&mut rng_noise);
        }
    }

    // Treatment paths over the full year range, 0-based year indices.
    let n_treated = ((config.treated_share * c_total as f64).round() as usize)
        .clamp(1, c_total - 1);
    let mut order: Vec<usize> = (0..c_total).collect();
    order.shuffle(&mut rng_assign);
    let treated_countries: BTreeSet<usize> = order.into_iter().take(n_treated).collect();

    let mut treated_years: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); c_total];
    match config.violation {
        Violation::ConfoundedAssignment => {
            // Cell-level Bernoulli with probability tilted by the noise of
            // the untreated outcome; overrides the staggering layout.
            for c in 0..c_total {
                for t in 0..window {
                    let z = if config.noise_sd > 0.0 {
                        noise[c * window + t] / config.noise_sd
                    } else {
                        0.0
                    };
                    let p = (2.0 * config.treated_share * sigmoid(-2.0 * z)).clamp(0.0, 1.0);
                    if rng_assign.random::<f64>() < p {
                        treated_years[c].insert(t);
                    }
                }
            }
        }
        _ => match config.staggering {
            Staggering::Staggered => {
                for &c in &treated_countries {
                    let onset = rng_assign.random_range(1..window);
                    for t in onset..t_total {
                        treated_years[c].insert(t);
                    }
                }
            }
            Staggering::CommonYear => {
                let wave = window / 2;
                for (rank, &c) in treated_countries.iter().enumerate() {
                    treated_years[c].insert(wave);
                    // Chronic countries pulse often, acute ones rarely.
                    let pulse_prob = if rank % 2 == 0 { 0.8 } else { 0.15 };
                    for t in 0..t_total {
                        if rng_assign.random::<f64>() < pulse_prob {
                            treated_years[c].insert(t);
                        }
                    }
                }
            }
            Staggering::Recurrent => {
                for &c in &treated_countries {
                    let start = rng_assign.random_range(0..5);
                    let mut t = start;
                    while t < t_total {
                        treated_years[c].insert(t);
                        t += 5;
                    }
                }
            }
        },
    }

    // Potential outcomes on the response window.
    let mut y0 = vec![0.0; c_total * window];
    for c in 0..c_total {
        for t in 0..window {
            let mut v = gamma_country[c] + gamma_year[t] + noise[c * window + t];
            for (j, b) in beta_true.iter().enumerate() {
                v += b * x_at(c, t, j);
            }
            y0[c * window + t] = v;
        }
    }
    if config.violation == Violation::PretrendDip {
        for c in 0..c_total {
            if let Some(&first) = treated_years[c].iter().find(|&&t| t < window) {
                if first >= 1 {
                    y0[c * window + first - 1] -= 5.0 * config.noise_sd;
                }
            }
        }
    }
    let y1: Vec<f64> = (0..c_total * window)
        .map(|i| y0[i] + tau_by_country[i / window])
        .collect();

    // Observed growth = selected potential outcome (consistency).
    let mut observed = vec![0.0; c_total * window];
    for c in 0..c_total {
        for t in 0..window {
            observed[c * window + t] = if treated_years[c].contains(&t) {
                y1[c * window + t]
            } else {
                y0[c * window + t]
            };
        }
    }
    if observed.iter().any(|v| *v <= -0.95 || *v >= 0.95) {
        return Err(Error::Config(
            "generated growth magnitudes exceed 95%; lower noise_sd or effect sizes".to_string(),
        ));
    }

    // Invert the growth formula: interleaved chains modulo the horizon.
    let h = config.horizon as usize;
    let mut gdp = vec![0.0; c_total * t_total];
    for c in 0..c_total {
        for t in 0..t_total {
            gdp[c * t_total + t] = if t < h {
                100.0
            } else {
                gdp[c * t_total + t - h] * (1.0 + observed[c * window + t - h])
            };
        }
    }

    let variable_names: Vec<String> = std::iter::once("GDP".to_string())
        .chain(config.confounder_names())
        .collect();
    let mut rows: BTreeMap<RowKey, Vec<Option<f64>>> = BTreeMap::new();
    for c in 0..c_total {
        for t in 0..t_total {
            let mut cells = Vec::with_capacity(1 + config.n_confounders);
            cells.push(Some(gdp[c * t_total + t]));
            for j in 0..config.n_confounders {
                cells.push(Some(x_at(c, t, j)));
            }
            rows.insert(RowKey::new(country_name(c), year_of(t)), cells);
        }
    }
    let dataset = PanelDataset::from_rows(variable_names, &rows)?;

    let catalog = CrisisCatalog::new(treated_years.iter().enumerate().flat_map(|(c, years)| {
        years.iter().map(move |&t| CrisisEvent {
            country: country_name(c),
            year: year_of(t),
            kind: CrisisKind::Banking,
        })
    }));

    let truth = SyntheticTruth {
        tau_true: config.tau,
        tau_by_country,
        gamma_country,
        gamma_year,
        beta_true,
        noise_sd: config.noise_sd,
        countries: (0..c_total).map(country_name).collect(),
        response_years: (0..window).map(year_of).collect(),
        y0,
        y1,
        assignment: treated_years
            .iter()
            .enumerate()
            .map(|(c, years)| {
                (
                    country_name(c),
                    years.iter().map(|&t| year_of(t)).collect(),
                )
            })
            .collect(),
    };
    Ok((dataset, catalog, truth))
}

/// Monte Carlo recovery summary.
#[derive(Debug, Clone, Serialize)]
pub struct RecoverySummary {
    pub reps: usize,
    pub n_failed: usize,
    pub tau_true: f64,
    pub mean_tau_hat: f64,
    pub sd_tau_hat: f64,
    pub ci_coverage_95: f64,
    pub mean_bias: f64,
}

/// Repeatedly generate, fit the TWFE model, and summarize recovery of the
/// true effect. Per-replication seeds derive deterministically from the
/// master seed; failing replications are excluded and counted, and more
/// than 10% failures is a harness error.
pub fn monte_carlo_recovery(
    config: &GeneratorConfig,
    reps: usize,
    seed: u64,
) -> Result<RecoverySummary> {
    if reps < 2 {
        return Err(Error::Config(format!("reps must be >= 2, got {reps}")));
    }
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let rep_seeds: Vec<u64> = (0..reps).map(|_| master.random()).collect();

    let confounders = config.confounder_names();
    let confounder_refs: Vec<&str> = confounders.iter().map(String::as_str).collect();
    let mut tau_hats = Vec::with_capacity(reps);
    let mut covered = 0usize;
    let mut n_failed = 0usize;
    for &rep_seed in &rep_seeds {
        let outcome = generate_panel(config, rep_seed).and_then(|(ds, cat, _)| {
            let dm = build_design(&ds, &cat, &confounder_refs, config.horizon)?;
            let fe = encode_fixed_effects(&dm)?;
            twfe_fit(&fe, SeMode::Classical)
        });
        match outcome {
            Ok(fit) => {
                let tau_hat = fit.coefficient("D").expect("treatment column present");
                let (lo, hi) = fit.confidence_interval("D").expect("treatment column present");
                if lo <= config.tau && config.tau <= hi {
                    covered += 1;
                }
                tau_hats.push(tau_hat);
            }
            Err(_) => n_failed += 1,
        }
    }
    if n_failed * 10 > reps {
        return Err(Error::Harness(format!(
            "{n_failed} of {reps} replications failed to fit"
        )));
    }
    let n_ok = tau_hats.len();
    let mean = tau_hats.iter().sum::<f64>() / n_ok as f64;
    let sd = if n_ok > 1 {
        (tau_hats.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n_ok - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RecoverySummary {
        reps,
        n_failed,
        tau_true: config.tau,
        mean_tau_hat: mean,
        sd_tau_hat: sd,
        ci_coverage_95: covered as f64 / n_ok as f64,
        mean_bias: mean - config.tau,
    })
}
