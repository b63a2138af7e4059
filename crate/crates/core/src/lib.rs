//! Stochastic-gradient MCMC samplers on analytic posteriors.
//!
//! The crate provides SGLD, SGHMC with an Euler and a symmetric splitting
//! (ABOBA) integrator, and SGNHT, together with step-size schedules, a seeded
//! chain runner and the bias/MSE diagnostics used to measure convergence rates.
//!
//! ```
//! use sgmcmc::{run_chain, Dataset, IntegratorKind, SamplerConfig, StepSchedule, TestFunction};
//!
//! let model = Dataset::generate(7, 100, 0.0, 1.0).into_model();
//! let config = SamplerConfig::new(IntegratorKind::SghmcAboba, 10.0, StepSchedule::fixed(0.01).unwrap());
//! let trace = run_chain(&model, &config, 1_000, 42).unwrap();
//! let estimate = trace.sample_average(TestFunction::ThetaSquared).unwrap();
//! assert!(estimate.is_finite());
//! ```

pub mod chain;
pub mod diagnostics;
pub mod integrators;
pub mod models;
pub mod schedules;
pub mod weak_order;

pub use chain::{run_chain, ChainError, GradientPolicy, Initialization, SamplerConfig, TestFunction};
pub use diagnostics::{
    batch_means_se, estimate_bias_mse, fit_loglog_slope, BiasMse, DiagnosticsError, Divergence,
    LogLogFit, RunTrace, SweepPoint,
};
pub use integrators::{
    sghmc_aboba_step, sghmc_euler_step, sgld_step, sgnht_step, Gradient, Integrator,
    IntegratorKind, NoiseDraw, State, StepError,
};
pub use models::{
    BatchMode, Dataset, DatasetError, GaussianConjugateModel, Minibatch, MinibatchStream, Model,
    ModelError,
};
pub use schedules::{
    optimal_alpha, power_sum_bounds, validate_schedule, ScheduleError, ScheduleSums,
    ScheduleValidation, ScheduleViolation, StepSchedule, Target,
};
pub use weak_order::{
    exact_expectation, weak_order_estimate, AffineStep, Expectation, Reference, WeakOrderConfig,
    WeakOrderError, WeakOrderReport,
};
