//! Experiment configuration files (TOML).

use serde::Deserialize;
use sgmcmc::{
    optimal_alpha, validate_schedule, BatchMode, Dataset, GaussianConjugateModel, GradientPolicy,
    Initialization, IntegratorKind, StepSchedule, Target, TestFunction,
};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    StationaryOrder,
    RateSweepFixed,
    RateSweepDecreasing,
    AlphaSweep,
    GridSearch,
    WeakOrder,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::StationaryOrder => "stationary-order",
            ExperimentKind::RateSweepFixed => "rate-sweep-fixed",
            ExperimentKind::RateSweepDecreasing => "rate-sweep-decreasing",
            ExperimentKind::AlphaSweep => "alpha-sweep",
            ExperimentKind::GridSearch => "grid-search",
            ExperimentKind::WeakOrder => "weak-order",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleFamily {
    Fixed,
    Decreasing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub series: Vec<SeriesConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub grid_search: Option<GridSearchConfig>,
    #[serde(default)]
    pub weak_order: WeakOrderSection,
}

fn default_seed() -> u64 {
    1
}

fn default_runs() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_data_seed")]
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    /// Read the dataset from this file, or write it there if absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { seed: default_data_seed(), n: default_n(), mu: 0.0, sigma: 1.0, path: None }
    }
}

fn default_data_seed() -> u64 {
    42
}

fn default_n() -> usize {
    1000
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_friction")]
    pub friction: f64,
    /// `minibatch` or `full`.
    #[serde(default = "default_gradient")]
    pub gradient: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_batch_mode")]
    pub batch_mode: String,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_test_function")]
    pub test_function: String,
    #[serde(default)]
    pub init_theta: Option<f64>,
    #[serde(default)]
    pub init_p: Option<f64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            friction: default_friction(),
            gradient: default_gradient(),
            batch_size: default_batch_size(),
            batch_mode: default_batch_mode(),
            burn_in: 0,
            test_function: default_test_function(),
            init_theta: None,
            init_p: None,
        }
    }
}

fn default_friction() -> f64 {
    10.0
}

fn default_gradient() -> String {
    "minibatch".into()
}

fn default_batch_size() -> usize {
    10
}

fn default_batch_mode() -> String {
    "epoch".into()
}

fn default_test_function() -> String {
    "theta2".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    pub integrator: String,
    #[serde(default)]
    pub friction: Option<f64>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub prefactor: Option<f64>,
    #[serde(default)]
    pub schedule: Option<ScheduleFamily>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub h: Vec<f64>,
    #[serde(default, rename = "L")]
    pub steps: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchConfig {
    #[serde(default = "default_c_min")]
    pub prefactor_min: f64,
    #[serde(default = "default_c_max")]
    pub prefactor_max: f64,
    #[serde(default = "default_c_step")]
    pub prefactor_step: f64,
    #[serde(default = "default_pilot")]
    pub pilot_steps: u64,
    /// Friction candidates searched jointly with the prefactor.
    #[serde(default)]
    pub frictions: Vec<f64>,
    #[serde(default)]
    pub runs: Option<usize>,
}

fn default_c_min() -> f64 {
    0.001
}

fn default_c_max() -> f64 {
    0.5
}

fn default_c_step() -> f64 {
    0.002
}

fn default_pilot() -> u64 {
    500
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakOrderSection {
    #[serde(default = "one")]
    pub start_theta: f64,
    #[serde(default)]
    pub start_p: f64,
    #[serde(default = "default_substeps")]
    pub reference_substeps: usize,
    /// Monte Carlo draws; exact moment propagation when absent.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Use the configured dataset instead of the standard normal target.
    #[serde(default)]
    pub use_data: bool,
}

impl Default for WeakOrderSection {
    fn default() -> Self {
        Self {
            start_theta: 1.0,
            start_p: 0.0,
            reference_substeps: default_substeps(),
            samples: None,
            use_data: false,
        }
    }
}

fn default_substeps() -> usize {
    1000
}

/// One validated series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub integrator: IntegratorKind,
    pub friction: f64,
    pub target: Target,
    pub alpha: f64,
    pub prefactor: Option<f64>,
    pub schedule: ScheduleFamily,
}

impl GridSearchConfig {
    pub fn candidates(&self) -> Vec<f64> {
        let n = ((self.prefactor_max - self.prefactor_min) / self.prefactor_step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.prefactor_min + i as f64 * self.prefactor_step).collect()
    }
}

/// Decreasing schedules must satisfy the step-size conditions for the
/// weighted average to converge.
fn require_consistent(integrator: IntegratorKind, alpha: f64) -> Result<(), ConfigError> {
    let schedule = StepSchedule::power_decay(1.0, alpha).map_err(|e| bad(e.to_string()))?;
    let report = validate_schedule(&schedule, integrator.order(), 10_000);
    if report.valid {
        return Ok(());
    }
    let reasons: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
    Err(bad(format!("decreasing schedule with alpha={alpha} for {integrator}: {}", reasons.join(", "))))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Structural checks shared by every experiment kind.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.runs < 2 && self.experiment != ExperimentKind::WeakOrder {
            return Err(bad(format!("runs must be >= 2, got {}", self.runs)));
        }
        if self.threads == Some(0) {
            return Err(bad("threads must be >= 1"));
        }
        if self.series.is_empty() {
            return Err(bad("at least one [[series]] is required"));
        }
        if self.data.n == 0 && self.data.path.is_none() {
            return Err(bad("data.n must be >= 1"));
        }
        if !(self.data.sigma > 0.0 && self.data.sigma.is_finite()) {
            return Err(bad("data.sigma must be > 0"));
        }
        self.gradient_policy()?;
        self.test_function()?;
        for s in &self.series {
            self.resolve_series(s)?;
        }
        let positive = |name: &str, xs: &[f64]| -> Result<(), ConfigError> {
            if xs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(bad(format!("grid.{name} values must be positive")));
            }
            Ok(())
        };
        positive("h", &self.grid.h)?;
        positive("L", &self.grid.steps)?;
        match self.experiment {
            ExperimentKind::StationaryOrder => {
                require_decade(&self.grid.h, "h", 1.0)?;
                self.step_grid()?;
            }
            ExperimentKind::RateSweepFixed | ExperimentKind::RateSweepDecreasing => {
                require_decade(&self.grid.steps, "L", 1.5)?;
                self.step_grid()?;
            }
            ExperimentKind::AlphaSweep => {
                if self.grid.alpha.is_empty() {
                    return Err(bad("alpha-sweep needs grid.alpha"));
                }
                if self.step_grid()?.is_empty() {
                    return Err(bad("alpha-sweep needs grid.L"));
                }
                for series in self.series()?.iter().filter(|s| s.schedule == ScheduleFamily::Decreasing) {
                    for &alpha in &self.grid.alpha {
                        require_consistent(series.integrator, alpha)?;
                    }
                }
            }
            ExperimentKind::GridSearch => {
                if self.grid_search.is_none() {
                    return Err(bad("grid-search needs a [grid_search] section"));
                }
            }
            ExperimentKind::WeakOrder => {
                if self.grid.h.len() < 3 {
                    return Err(bad("weak-order needs at least 3 values in grid.h"));
                }
                if self.weak_order.reference_substeps == 0 {
                    return Err(bad("weak_order.reference_substeps must be >= 1"));
                }
            }
        }
        if let Some(gs) = &self.grid_search {
            if !(gs.prefactor_min > 0.0 && gs.prefactor_step > 0.0 && gs.prefactor_max >= gs.prefactor_min) {
                return Err(bad("grid_search needs 0 < prefactor_min <= prefactor_max and prefactor_step > 0"));
            }
            if gs.pilot_steps == 0 {
                return Err(bad("grid_search.pilot_steps must be >= 1"));
            }
            if gs.runs.is_some_and(|r| r < 2) {
                return Err(bad("grid_search.runs must be >= 2"));
            }
            if gs.frictions.iter().any(|d| d.is_nan() || *d < 0.0) {
                return Err(bad("grid_search.frictions must be >= 0"));
            }
        }
        let needs_prefactor = matches!(
            self.experiment,
            ExperimentKind::RateSweepFixed | ExperimentKind::RateSweepDecreasing | ExperimentKind::AlphaSweep
        );
        if needs_prefactor && self.grid_search.is_none() && self.series.iter().any(|s| s.prefactor.is_none()) {
            return Err(bad("every series needs a prefactor unless [grid_search] is given"));
        }
        Ok(())
    }

    pub fn gradient_policy(&self) -> Result<GradientPolicy, ConfigError> {
        match self.sampler.gradient.as_str() {
            "full" => Ok(GradientPolicy::Full),
            "minibatch" => {
                let mode: BatchMode = self.sampler.batch_mode.parse().map_err(|e: sgmcmc::ModelError| bad(e.to_string()))?;
                let n = self.sampler.batch_size;
                if n == 0 || (self.data.path.is_none() && n > self.data.n) {
                    return Err(bad(format!("batch_size {n} not in 1..={}", self.data.n)));
                }
                if mode == BatchMode::EpochPermutation && self.data.path.is_none() && !self.data.n.is_multiple_of(n) {
                    return Err(bad(format!(
                        "batch_size {n} must divide n={} in epoch mode",
                        self.data.n
                    )));
                }
                Ok(GradientPolicy::Minibatch { mode, batch_size: n })
            }
            other => Err(bad(format!("sampler.gradient must be `full` or `minibatch`, got `{other}`"))),
        }
    }

    pub fn test_function(&self) -> Result<TestFunction, ConfigError> {
        self.sampler.test_function.parse().map_err(|e: sgmcmc::ChainError| bad(e.to_string()))
    }

    pub fn initialization(&self) -> Initialization {
        match (self.sampler.init_theta, self.sampler.init_p) {
            (None, None) => Initialization::Prior,
            (theta, p) => Initialization::Fixed {
                theta: vec![theta.unwrap_or(0.0)],
                p: vec![p.unwrap_or(0.0)],
            },
        }
    }

    pub fn default_schedule(&self) -> ScheduleFamily {
        match self.experiment {
            ExperimentKind::RateSweepDecreasing => ScheduleFamily::Decreasing,
            _ => ScheduleFamily::Fixed,
        }
    }

    pub fn resolve_series(&self, s: &SeriesConfig) -> Result<Series, ConfigError> {
        let integrator: IntegratorKind =
            s.integrator.parse().map_err(|e: sgmcmc::StepError| bad(e.to_string()))?;
        let friction = s.friction.unwrap_or(self.sampler.friction);
        if !(friction >= 0.0 && friction.is_finite()) {
            return Err(bad(format!("friction must be >= 0, got {friction}")));
        }
        let target: Target = match &s.target {
            Some(t) => t.parse().map_err(|e: sgmcmc::ScheduleError| bad(e.to_string()))?,
            None => Target::Bias,
        };
        let alpha = s.alpha.unwrap_or_else(|| optimal_alpha(target, integrator.order()));
        if !alpha.is_finite() {
            return Err(bad("alpha must be finite"));
        }
        if let Some(c) = s.prefactor {
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad(format!("prefactor must be > 0, got {c}")));
            }
        }
        let schedule = match self.experiment {
            ExperimentKind::RateSweepFixed => ScheduleFamily::Fixed,
            ExperimentKind::RateSweepDecreasing => ScheduleFamily::Decreasing,
            _ => s.schedule.unwrap_or_else(|| self.default_schedule()),
        };
        if let Some(family) = s.schedule {
            if family != schedule {
                return Err(bad(format!("series schedule conflicts with experiment {}", self.experiment.name())));
            }
        }
        if schedule == ScheduleFamily::Decreasing {
            require_consistent(integrator, alpha)?;
        }
        Ok(Series { integrator, friction, target, alpha, prefactor: s.prefactor, schedule })
    }

    pub fn series(&self) -> Result<Vec<Series>, ConfigError> {
        self.series.iter().map(|s| self.resolve_series(s)).collect()
    }

    /// `grid.L` rounded to whole step counts.
    pub fn step_grid(&self) -> Result<Vec<u64>, ConfigError> {
        self.grid
            .steps
            .iter()
            .map(|&l| {
                let r = l.round();
                if r < 1.0 {
                    Err(bad(format!("grid.L value {l} rounds below 1")))
                } else {
                    Ok(r as u64)
                }
            })
            .collect()
    }

    /// Load or generate the dataset.
    pub fn model(&self) -> Result<GaussianConjugateModel, ConfigError> {
        let d = &self.data;
        let dataset = match &d.path {
            Some(path) if path.exists() => {
                Dataset::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?
            }
            Some(path) => {
                let data = Dataset::generate(d.seed, d.n, d.mu, d.sigma);
                data.write(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
                data
            }
            None => Dataset::generate(d.seed, d.n, d.mu, d.sigma),
        };
        if let GradientPolicy::Minibatch { batch_size, .. } = self.gradient_policy()? {
            if batch_size > dataset.values.len() {
                return Err(bad(format!(
                    "batch_size {batch_size} exceeds the {} observations",
                    dataset.values.len()
                )));
            }
        }
        Ok(dataset.into_model())
    }
}

fn require_decade(xs: &[f64], name: &str, decades: f64) -> Result<(), ConfigError> {
    if xs.is_empty() {
        return Err(bad(format!("grid.{name} must not be empty")));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    if (hi / lo).log10() < decades - 1e-2 {
        return Err(bad(format!("grid.{name} must span at least {decades} decades")));
    }
    Ok(())
}
