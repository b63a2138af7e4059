//! Experiment runners. Every grid point fans its independent runs out over the
//! current rayon pool and reduces them in run-index order.

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, GridSearchConfig, ScheduleFamily, Series};
use crate::results::{CsvError, ResultRow};
use rayon::prelude::*;
use sgmcmc::{
    fit_loglog_slope, run_chain, weak_order_estimate, ChainError, Expectation, GaussianConjugateModel,
    GradientPolicy, IntegratorKind, LogLogFit, Reference, SamplerConfig, State, StepSchedule,
    SweepPoint, Target, TestFunction, WeakOrderConfig, WeakOrderError,
};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("every run diverged: {0}")]
    AllDiverged(String),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    WeakOrder(#[from] WeakOrderError),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// 2 for configuration problems, 3 when nothing stayed finite, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::AllDiverged(_) => 3,
            _ => 1,
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `run` under `base`. Depends only on the pair, so every grid
/// point and integrator sees the same per-run randomness.
pub fn run_seed(base: u64, run: u64) -> u64 {
    splitmix64(splitmix64(base) ^ run)
}

/// Lowest finite value; ties go to the earliest candidate.
pub fn select_best<K: Copy>(candidates: &[(K, Option<f64>)]) -> Option<(K, f64)> {
    candidates
        .iter()
        .filter_map(|&(k, v)| v.filter(|x| x.is_finite()).map(|x| (k, x)))
        .fold(None, |best, (k, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((k, v)),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    pub integrator: IntegratorKind,
    pub friction: f64,
    pub alpha: Option<f64>,
    pub target: Target,
    pub points_used: usize,
    pub fit: Option<LogLogFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridChoice {
    pub integrator: IntegratorKind,
    pub target: Target,
    pub alpha: f64,
    pub friction: f64,
    pub prefactor: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWinner {
    pub integrator: IntegratorKind,
    pub target: Target,
    pub steps: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub fits: Vec<SeriesFit>,
    pub choices: Vec<GridChoice>,
    pub winners: Vec<AlphaWinner>,
}

impl ExperimentOutput {
    pub fn all_diverged(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.n_runs > 0 && r.n_diverged == r.n_runs)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.choices {
            let _ = writeln!(
                s,
                "best integrator={} target={} alpha={} D={} prefactor={} value={:.6e}",
                c.integrator, c.target, c.alpha, c.friction, c.prefactor, c.value
            );
        }
        for f in &self.fits {
            let alpha = f.alpha.map_or("-".to_string(), |a| format!("{a}"));
            match f.fit {
                Some(fit) => {
                    let _ = writeln!(
                        s,
                        "fit integrator={} D={} alpha={} target={} points={} slope={:.4} r2={:.4}",
                        f.integrator, f.friction, alpha, f.target, f.points_used, fit.slope, fit.r_squared
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "fit integrator={} D={} alpha={} target={} points={} slope=none",
                        f.integrator, f.friction, alpha, f.target, f.points_used
                    );
                }
            }
        }
        for w in &self.winners {
            let _ = writeln!(
                s,
                "winner integrator={} target={} L={} alpha={}",
                w.integrator, w.target, w.steps, w.alpha
            );
        }
        s
    }
}

fn metric(point: &SweepPoint, target: Target) -> Option<f64> {
    point.estimate.map(|e| match target {
        Target::Bias => e.bias,
        Target::Mse => e.mse,
    })
}

/// Shared state for running one configured experiment.
pub struct Runner<'a> {
    config: &'a ExperimentConfig,
    model: GaussianConjugateModel,
    phi: TestFunction,
    phi_bar: f64,
    gradient: GradientPolicy,
}

impl<'a> Runner<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Result<Self, HarnessError> {
        config.check()?;
        let model = config.model()?;
        let phi = config.test_function()?;
        Ok(Self {
            config,
            phi_bar: phi.posterior_value(&model),
            model,
            phi,
            gradient: config.gradient_policy()?,
        })
    }

    pub fn model(&self) -> &GaussianConjugateModel {
        &self.model
    }

    fn sampler(&self, kind: IntegratorKind, friction: f64, schedule: StepSchedule) -> SamplerConfig {
        let mut s = SamplerConfig::new(kind, friction, schedule);
        s.gradient = self.gradient;
        s.init = self.config.initialization();
        s.burn_in = self.config.sampler.burn_in;
        s.test_functions = vec![self.phi];
        s
    }

    /// `runs` independent chains; `None` marks a diverged run.
    fn run_point(
        &self,
        sampler: &SamplerConfig,
        steps: u64,
        runs: usize,
        control: f64,
    ) -> Result<SweepPoint, HarnessError> {
        let weighted = !sampler.schedule.is_fixed();
        let averages = (0..runs as u64)
            .into_par_iter()
            .map(|r| {
                let trace = run_chain(&self.model, sampler, steps, run_seed(self.config.seed, r))?;
                let avg = if weighted {
                    trace.weighted_sample_average(self.phi)
                } else {
                    trace.sample_average(self.phi)
                };
                Ok(avg.ok())
            })
            .collect::<Result<Vec<_>, ChainError>>()?;
        Ok(SweepPoint::from_runs(control, &averages, self.phi_bar))
    }

    fn schedule(family: ScheduleFamily, prefactor: f64, alpha: f64, steps: u64) -> Result<StepSchedule, HarnessError> {
        let s = match family {
            ScheduleFamily::Fixed => StepSchedule::fixed(prefactor * (steps as f64).powf(-alpha)),
            ScheduleFamily::Decreasing => StepSchedule::power_decay(prefactor, alpha),
        };
        s.map_err(|e| ConfigError(e.to_string()).into())
    }

    fn row(&self, series: &Series, point: &SweepPoint, steps: u64) -> ResultRow {
        let e = point.estimate;
        ResultRow {
            experiment: self.config.experiment.name().to_string(),
            integrator: series.integrator.name().to_string(),
            alpha: None,
            prefactor: None,
            friction: series.integrator.has_momentum().then_some(series.friction),
            steps,
            h: None,
            n_runs: point.n_runs,
            n_diverged: point.n_diverged,
            bias: e.map(|e| e.bias),
            bias_se: e.map(|e| e.bias_se),
            signed_bias: e.map(|e| e.signed_bias),
            mse: e.map(|e| e.mse),
            mse_se: e.map(|e| e.mse_se),
        }
    }

    fn fit(series: &Series, alpha: Option<f64>, points: &[SweepPoint]) -> SeriesFit {
        let usable: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.usable())
            .filter_map(|p| metric(p, series.target).filter(|v| *v > 0.0).map(|v| (p.control, v)))
            .collect();
        SeriesFit {
            integrator: series.integrator,
            friction: series.friction,
            alpha,
            target: series.target,
            points_used: usable.len(),
            fit: fit_loglog_slope(&usable).ok(),
        }
    }

    pub fn run(&self) -> Result<ExperimentOutput, HarnessError> {
        let out = match self.config.experiment {
            ExperimentKind::StationaryOrder => self.stationary_order()?,
            ExperimentKind::RateSweepFixed | ExperimentKind::RateSweepDecreasing => self.rate_sweep()?,
            ExperimentKind::AlphaSweep => self.alpha_sweep()?,
            ExperimentKind::GridSearch => self.grid_search_experiment()?,
            ExperimentKind::WeakOrder => self.weak_order()?,
        };
        Ok(out)
    }

    /// Stationary bias against `h` at a fixed long horizon.
    pub fn stationary_order(&self) -> Result<ExperimentOutput, HarnessError> {
        let steps = match self.config.step_grid()?.as_slice() {
            [] => 1_000_000,
            [l] => *l,
            _ => return Err(ConfigError("stationary-order takes a single grid.L".into()).into()),
        };
        let mut out = ExperimentOutput::default();
        for series in self.config.series()? {
            let mut points = Vec::new();
            for &h in &self.config.grid.h {
                let sampler = self.sampler(
                    series.integrator,
                    series.friction,
                    StepSchedule::fixed(h).map_err(|e| ConfigError(e.to_string()))?,
                );
                let point = self.run_point(&sampler, steps, self.config.runs, h)?;
                let mut row = self.row(&series, &point, steps);
                row.h = Some(h);
                out.rows.push(row);
                points.push(point);
            }
            out.fits.push(Self::fit(&series, None, &points));
        }
        Ok(out)
    }

    fn prefactor_for(
        &self,
        series: &Series,
        alpha: f64,
        out: &mut ExperimentOutput,
    ) -> Result<Series, HarnessError> {
        let series = Series { alpha, ..series.clone() };
        if series.prefactor.is_some() {
            return Ok(series);
        }
        let gs = self
            .config
            .grid_search
            .as_ref()
            .ok_or_else(|| ConfigError("series without prefactor needs [grid_search]".into()))?;
        let choice = self.grid_search(&series, gs, &mut Vec::new())?;
        let chosen = Series { friction: choice.friction, prefactor: Some(choice.prefactor), ..series };
        out.choices.push(choice);
        Ok(chosen)
    }

    /// Bias/MSE against `L` with `h = C L^-alpha` (fixed) or `h_l = C l^-alpha`
    /// (decreasing, weighted averages).
    fn sweep_series(&self, series: &Series, out: &mut ExperimentOutput) -> Result<Vec<SweepPoint>, HarnessError> {
        let prefactor = series.prefactor.expect("prefactor resolved");
        let mut points = Vec::new();
        for steps in self.config.step_grid()? {
            let schedule = Self::schedule(series.schedule, prefactor, series.alpha, steps)?;
            let sampler = self.sampler(series.integrator, series.friction, schedule);
            let point = self.run_point(&sampler, steps, self.config.runs, steps as f64)?;
            let mut row = self.row(series, &point, steps);
            row.alpha = Some(series.alpha);
            row.prefactor = Some(prefactor);
            if let StepSchedule::Fixed { h } = schedule {
                row.h = Some(h);
            }
            out.rows.push(row);
            points.push(point);
        }
        Ok(points)
    }

    pub fn rate_sweep(&self) -> Result<ExperimentOutput, HarnessError> {
        let mut out = ExperimentOutput::default();
        for series in self.config.series()? {
            let series = self.prefactor_for(&series, series.alpha, &mut out)?;
            let points = self.sweep_series(&series, &mut out)?;
            out.fits.push(Self::fit(&series, Some(series.alpha), &points));
        }
        Ok(out)
    }

    pub fn alpha_sweep(&self) -> Result<ExperimentOutput, HarnessError> {
        let mut out = ExperimentOutput::default();
        let largest = self.config.step_grid()?.into_iter().max().expect("checked non-empty");
        for series in self.config.series()? {
            let mut at_largest = Vec::new();
            for &alpha in &self.config.grid.alpha {
                let s = self.prefactor_for(&series, alpha, &mut out)?;
                let points = self.sweep_series(&s, &mut out)?;
                out.fits.push(Self::fit(&s, Some(alpha), &points));
                let last = points.iter().find(|p| p.control == largest as f64);
                at_largest.push((alpha, last.filter(|p| p.usable()).and_then(|p| metric(p, s.target))));
            }
            if let Some((alpha, _)) = select_best(&at_largest) {
                out.winners.push(AlphaWinner {
                    integrator: series.integrator,
                    target: series.target,
                    steps: largest,
                    alpha,
                });
            }
        }
        Ok(out)
    }

    /// Pilot runs over the prefactor grid (and friction candidates for
    /// momentum samplers); returns the candidate minimizing the target.
    pub fn grid_search(
        &self,
        series: &Series,
        gs: &GridSearchConfig,
        rows: &mut Vec<ResultRow>,
    ) -> Result<GridChoice, HarnessError> {
        let frictions = if series.integrator.has_momentum() && !gs.frictions.is_empty() {
            gs.frictions.clone()
        } else {
            vec![series.friction]
        };
        let runs = gs.runs.unwrap_or(self.config.runs);
        let mut scored = Vec::new();
        for &friction in &frictions {
            let s = Series { friction, ..series.clone() };
            for c in gs.candidates() {
                let schedule = Self::schedule(s.schedule, c, s.alpha, gs.pilot_steps)?;
                let sampler = self.sampler(s.integrator, friction, schedule);
                let point = self.run_point(&sampler, gs.pilot_steps, runs, c)?;
                let mut row = self.row(&s, &point, gs.pilot_steps);
                row.experiment = ExperimentKind::GridSearch.name().to_string();
                row.alpha = Some(s.alpha);
                row.prefactor = Some(c);
                if let StepSchedule::Fixed { h } = schedule {
                    row.h = Some(h);
                }
                rows.push(row);
                let feasible = point.n_diverged == 0;
                scored.push(((friction, c), metric(&point, s.target).filter(|_| feasible)));
            }
        }
        let ((friction, prefactor), value) = select_best(&scored).ok_or_else(|| {
            HarnessError::AllDiverged(format!(
                "no prefactor candidate kept every {} run finite",
                series.integrator
            ))
        })?;
        Ok(GridChoice {
            integrator: series.integrator,
            target: series.target,
            alpha: series.alpha,
            friction,
            prefactor,
            value,
        })
    }

    pub fn grid_search_experiment(&self) -> Result<ExperimentOutput, HarnessError> {
        let gs = self.config.grid_search.as_ref().expect("checked by config");
        let mut out = ExperimentOutput::default();
        for series in self.config.series()? {
            let choice = self.grid_search(&series, gs, &mut out.rows)?;
            out.choices.push(choice);
        }
        Ok(out)
    }

    /// One-step weak error against a substepped reference. Uses the standard
    /// normal target `U = theta^2 / 2` unless configured to use the data.
    pub fn weak_order(&self) -> Result<ExperimentOutput, HarnessError> {
        let wo = &self.config.weak_order;
        let model = if wo.use_data { self.model.clone() } else { GaussianConjugateModel::new(vec![]) };
        let mut out = ExperimentOutput::default();
        for series in self.config.series()? {
            let kind = series.integrator;
            let start = State {
                theta: vec![wo.start_theta],
                p: kind.has_momentum().then(|| vec![wo.start_p]),
                xi: kind.has_thermostat().then_some(series.friction),
            };
            let mut cfg = WeakOrderConfig::new(kind, series.friction, start);
            cfg.test_function = self.phi;
            cfg.reference = Reference { substeps: wo.reference_substeps, ..Reference::default_for(kind) };
            if let Some(samples) = wo.samples {
                cfg.expectation = Expectation::MonteCarlo { samples, seed: self.config.seed };
            }
            let report = weak_order_estimate(&model, &cfg, &self.config.grid.h)?;
            for &(h, err) in &report.errors {
                out.rows.push(ResultRow {
                    experiment: ExperimentKind::WeakOrder.name().to_string(),
                    integrator: kind.name().to_string(),
                    alpha: None,
                    prefactor: None,
                    friction: kind.has_momentum().then_some(series.friction),
                    steps: 1,
                    h: Some(h),
                    n_runs: wo.samples.unwrap_or(0),
                    n_diverged: 0,
                    bias: Some(err),
                    bias_se: None,
                    signed_bias: None,
                    mse: None,
                    mse_se: None,
                });
            }
            out.fits.push(SeriesFit {
                integrator: kind,
                friction: series.friction,
                alpha: None,
                target: Target::Bias,
                points_used: report.errors.len(),
                fit: report.fit,
            });
        }
        Ok(out)
    }
}

/// Run the configured experiment on a pool of `threads` workers (rayon's
/// default when `None`).
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.or(config.threads) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| Runner::new(config)?.run())
}
