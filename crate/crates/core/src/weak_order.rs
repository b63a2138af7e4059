//! Empirical local weak order of the integrators.
//!
//! For each step size the one-step expectation `E phi(X_h)` of an integrator is
//! compared against a finely substepped reference started from the same state.
//! When every step is affine in `(state, noise)` (quadratic potential, full
//! gradients) the expectations are computed exactly by propagating mean and
//! covariance through the step matrices. Otherwise a Monte Carlo estimate is
//! available.

use crate::chain::TestFunction;
use crate::diagnostics::{fit_loglog_slope, LogLogFit};
use crate::integrators::{Gradient, Integrator, IntegratorKind, NoiseDraw, State, StepError};
use crate::models::Model;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeakOrderError {
    #[error("need at least 3 step sizes, got {0}")]
    TooFewSteps(usize),
    #[error("{kind} step is not affine in (state, noise); use the Monte Carlo estimate")]
    NotAffine { kind: IntegratorKind },
    #[error("invalid weak-order setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Step(#[from] StepError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    /// Closed-form mean/covariance propagation; affine steps only.
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub kind: IntegratorKind,
    /// The reference takes this many steps of size `h / substeps`.
    pub substeps: usize,
}

impl Reference {
    /// Substepped ABOBA for momentum dynamics, substepped SGLD for overdamped
    /// dynamics and substepped SGNHT for the thermostat.
    pub fn default_for(kind: IntegratorKind) -> Self {
        let reference = match kind {
            IntegratorKind::SgldEuler => IntegratorKind::SgldEuler,
            IntegratorKind::SghmcEuler | IntegratorKind::SghmcAboba => IntegratorKind::SghmcAboba,
            IntegratorKind::Sgnht => IntegratorKind::Sgnht,
        };
        Self { kind: reference, substeps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakOrderConfig {
    pub kind: IntegratorKind,
    pub friction: f64,
    pub start: State,
    pub test_function: TestFunction,
    pub reference: Reference,
    pub expectation: Expectation,
}

impl WeakOrderConfig {
    pub fn new(kind: IntegratorKind, friction: f64, start: State) -> Self {
        Self {
            kind,
            friction,
            start,
            test_function: TestFunction::ThetaSquared,
            reference: Reference::default_for(kind),
            expectation: Expectation::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakOrderReport {
    /// `(h, |E phi(one step) - E phi(reference)|)`.
    pub errors: Vec<(f64, f64)>,
    /// `None` when some error is zero, as in a self-comparison.
    pub fit: Option<LogLogFit>,
}

impl WeakOrderReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// One step as `x' = A x + b + C zeta`, with `x` the flattened `(theta, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStep {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl AffineStep {
    /// Recover the step matrices by probing with unit vectors, then confirm
    /// the map is affine at a few further points.
    pub fn probe<M: Model>(
        model: &M,
        kind: IntegratorKind,
        friction: f64,
        h: f64,
    ) -> Result<Self, WeakOrderError> {
        if kind.has_thermostat() {
            return Err(WeakOrderError::NotAffine { kind });
        }
        let dim = model.dim();
        let n = if kind.has_momentum() { 2 * dim } else { dim };
        let mut integrator = Integrator::new(kind, friction)?;
        let mut apply = |x: &DVector<f64>, z: &DVector<f64>| -> Result<DVector<f64>, StepError> {
            let state = unflatten(kind, &integrator, x, dim);
            let next = integrator.step(model, &state, h, Gradient::Full, NoiseDraw(z.as_slice()))?;
            Ok(DVector::from_vec(next.to_vector()))
        };

        let zero_x = DVector::zeros(n);
        let zero_z = DVector::zeros(dim);
        let b = apply(&zero_x, &zero_z)?;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut e = zero_x.clone();
            e[i] = 1.0;
            a.set_column(i, &(apply(&e, &zero_z)? - &b));
        }
        let mut c = DMatrix::zeros(n, dim);
        for j in 0..dim {
            let mut e = zero_z.clone();
            e[j] = 1.0;
            c.set_column(j, &(apply(&zero_x, &e)? - &b));
        }

        let step = Self { a, b, c };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..4 {
            let x = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let z = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
            let predicted = &step.a * &x + &step.b + &step.c * &z;
            let actual = apply(&x, &z)?;
            let scale = 1.0 + actual.amax();
            if (predicted - actual).amax() > 1e-9 * scale {
                return Err(WeakOrderError::NotAffine { kind });
            }
        }
        Ok(step)
    }

    /// Mean and covariance after one step with independent standard-normal noise.
    pub fn propagate(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (
            &self.a * mean + &self.b,
            &self.a * cov * self.a.transpose() + &self.c * self.c.transpose(),
        )
    }
}

fn unflatten(kind: IntegratorKind, integrator: &Integrator, x: &DVector<f64>, dim: usize) -> State {
    let theta = x.rows(0, dim).iter().copied().collect();
    let p = if kind.has_momentum() { x.rows(dim, dim).iter().copied().collect() } else { Vec::new() };
    integrator.initial_state(theta, p)
}

fn expect_phi(f: TestFunction, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    match f {
        TestFunction::Theta => mean[0],
        TestFunction::ThetaSquared => cov[(0, 0)] + mean[0] * mean[0],
    }
}

/// Exact `E phi` after `steps` affine steps of size `h` from a deterministic start.
pub fn exact_expectation<M: Model>(
    model: &M,
    kind: IntegratorKind,
    friction: f64,
    start: &State,
    h: f64,
    steps: usize,
    f: TestFunction,
) -> Result<f64, WeakOrderError> {
    let step = AffineStep::probe(model, kind, friction, h)?;
    let n = step.b.len();
    let x0 = start.to_vector();
    if x0.len() != n {
        return Err(WeakOrderError::Invalid(format!(
            "start has {} components, {kind} state has {n}",
            x0.len()
        )));
    }
    let mut mean = DVector::from_vec(x0);
    let mut cov = DMatrix::zeros(n, n);
    for _ in 0..steps {
        (mean, cov) = step.propagate(&mean, &cov);
    }
    Ok(expect_phi(f, &mean, &cov))
}

#[allow(clippy::too_many_arguments)]
fn monte_carlo_expectation<M: Model>(
    model: &M,
    kind: IntegratorKind,
    friction: f64,
    start: &State,
    h: f64,
    steps: usize,
    f: TestFunction,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, WeakOrderError> {
    let mut integrator = Integrator::new(kind, friction)?;
    let mut zeta = vec![0.0; start.dim()];
    let mut total = 0.0;
    for _ in 0..samples {
        let mut state = start.clone();
        for _ in 0..steps {
            for z in zeta.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            integrator.step_in_place(model, &mut state, h, Gradient::Full, NoiseDraw(&zeta))?;
        }
        total += f.eval(&state.theta);
    }
    Ok(total / samples as f64)
}

/// One-step weak error against the reference for every `h`, with the fitted
/// log-log slope (expected `K + 1`).
pub fn weak_order_estimate<M: Model>(
    model: &M,
    config: &WeakOrderConfig,
    h_grid: &[f64],
) -> Result<WeakOrderReport, WeakOrderError> {
    if h_grid.len() < 3 {
        return Err(WeakOrderError::TooFewSteps(h_grid.len()));
    }
    if config.reference.substeps == 0 {
        return Err(WeakOrderError::Invalid("reference needs at least one substep".into()));
    }
    let (kind, reference) = (config.kind, config.reference.kind);
    if kind.has_momentum() != reference.has_momentum()
        || kind.has_thermostat() != reference.has_thermostat()
    {
        return Err(WeakOrderError::Invalid(format!(
            "reference {reference} does not share the state layout of {kind}"
        )));
    }
    let start = Integrator::new(kind, config.friction)?
        .initial_state(config.start.theta.clone(), config.start.p.clone().unwrap_or_default());
    let start = State { xi: config.start.xi.or(start.xi), ..start };

    let mut errors = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let substeps = config.reference.substeps;
        let h_ref = h / substeps as f64;
        let (numeric, exact) = match config.expectation {
            Expectation::Exact => (
                exact_expectation(model, kind, config.friction, &start, h, 1, config.test_function)?,
                exact_expectation(
                    model,
                    reference,
                    config.friction,
                    &start,
                    h_ref,
                    substeps,
                    config.test_function,
                )?,
            ),
            Expectation::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(WeakOrderError::Invalid("Monte Carlo needs samples".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = config.test_function;
                (
                    monte_carlo_expectation(model, kind, config.friction, &start, h, 1, f, samples, &mut rng)?,
                    monte_carlo_expectation(
                        model,
                        reference,
                        config.friction,
                        &start,
                        h_ref,
                        substeps,
                        f,
                        samples,
                        &mut rng,
                    )?,
                )
            }
        };
        errors.push((h, (numeric - exact).abs()));
    }
    let fit = fit_loglog_slope(&errors).ok();
    Ok(WeakOrderReport { errors, fit })
}
