//! Chain runner: drives an integrator over a schedule and a minibatch stream,
//! accumulating test-function averages as it goes.

use crate::diagnostics::{Divergence, RunTrace};
use crate::integrators::{Gradient, Integrator, IntegratorKind, NoiseDraw, State, StepError};
use crate::models::{BatchMode, GaussianConjugateModel, MinibatchStream, Model, ModelError};
use crate::schedules::StepSchedule;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Step(StepError),
}

/// Statistic averaged along the chain, evaluated on the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    Theta,
    ThetaSquared,
}

impl TestFunction {
    pub fn eval(self, theta: &[f64]) -> f64 {
        match self {
            TestFunction::Theta => theta[0],
            TestFunction::ThetaSquared => theta[0] * theta[0],
        }
    }

    /// Posterior expectation under the conjugate Gaussian model.
    pub fn posterior_value(self, model: &GaussianConjugateModel) -> f64 {
        match self {
            TestFunction::Theta => model.posterior_params().0,
            TestFunction::ThetaSquared => model.posterior_average_phi2(),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestFunction::Theta => "theta",
            TestFunction::ThetaSquared => "theta2",
        })
    }
}

impl FromStr for TestFunction {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theta" => Ok(TestFunction::Theta),
            "theta2" | "theta^2" => Ok(TestFunction::ThetaSquared),
            other => Err(ChainError::Config(format!("unknown test function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientPolicy {
    Full,
    Minibatch { mode: BatchMode, batch_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// `theta_0` from the prior, `p_0 ~ N(0, I)`.
    Prior,
    /// Deterministic start; `p` is ignored by SGLD.
    Fixed { theta: Vec<f64>, p: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub integrator: IntegratorKind,
    pub friction: f64,
    pub schedule: StepSchedule,
    pub gradient: GradientPolicy,
    pub init: Initialization,
    /// Steps run at `h_1` before accumulation starts.
    pub burn_in: u64,
    pub test_functions: Vec<TestFunction>,
    /// Keep every test-function value, not only the running sums.
    pub record_trace: bool,
}

impl SamplerConfig {
    pub fn new(integrator: IntegratorKind, friction: f64, schedule: StepSchedule) -> Self {
        Self {
            integrator,
            friction,
            schedule,
            gradient: GradientPolicy::Minibatch { mode: BatchMode::default(), batch_size: 10 },
            init: Initialization::Prior,
            burn_in: 0,
            test_functions: vec![TestFunction::ThetaSquared],
            record_trace: false,
        }
    }
}

const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run `steps` accumulated steps (after burn-in) from the given seed.
///
/// Initialization, injected noise and minibatch selection draw from separate
/// streams of the same seed. A divergence stops the chain and is recorded in
/// the returned trace rather than returned as an error.
pub fn run_chain<M: Model>(
    model: &M,
    config: &SamplerConfig,
    steps: u64,
    seed: u64,
) -> Result<RunTrace, ChainError> {
    if steps == 0 {
        return Err(ChainError::Config("chain length must be >= 1".into()));
    }
    if config.test_functions.is_empty() {
        return Err(ChainError::Config("no test functions to accumulate".into()));
    }
    let dim = model.dim();
    let mut integrator =
        Integrator::new(config.integrator, config.friction).map_err(ChainError::Step)?;

    let mut init_rng = stream_rng(seed, INIT_STREAM);
    let mut state = match &config.init {
        Initialization::Prior => {
            let theta = model.sample_prior(&mut init_rng);
            let p = (0..dim).map(|_| init_rng.sample(StandardNormal)).collect();
            integrator.initial_state(theta, p)
        }
        Initialization::Fixed { theta, p } => {
            if theta.len() != dim || (config.integrator.has_momentum() && p.len() != dim) {
                return Err(ChainError::Config(format!(
                    "initial state does not match model dimension {dim}"
                )));
            }
            integrator.initial_state(theta.clone(), p.clone())
        }
    };

    let mut stream = match config.gradient {
        GradientPolicy::Full => None,
        GradientPolicy::Minibatch { mode, batch_size } => Some(MinibatchStream::with_rng(
            mode,
            batch_size,
            model.n_data(),
            stream_rng(seed, BATCH_STREAM),
        )),
    };
    if let Some(s) = &stream {
        if s.batch_size() == 0 || s.batch_size() > model.n_data() {
            return Err(ModelError::InvalidStream(format!(
                "batch size {} not in 1..={}",
                s.batch_size(),
                model.n_data()
            ))
            .into());
        }
    }

    let mut noise_rng = stream_rng(seed, NOISE_STREAM);
    let mut zeta = vec![0.0; dim];
    let mut trace = RunTrace::new(config.test_functions.clone(), config.record_trace);
    let h_first = config.schedule.step_size_unchecked(1);

    let mut advance = |state: &mut State, h: f64| -> Result<(), StepError> {
        for z in zeta.iter_mut() {
            *z = noise_rng.sample(StandardNormal);
        }
        let gradient = match stream.as_mut() {
            Some(s) => Gradient::Minibatch(s.next_batch()),
            None => Gradient::Full,
        };
        integrator.step_in_place(model, state, h, gradient, NoiseDraw(&zeta))
    };

    let total = config.burn_in + steps;
    for step in 1..=total {
        let h = if step <= config.burn_in {
            h_first
        } else {
            config.schedule.step_size_unchecked(step - config.burn_in)
        };
        match advance(&mut state, h) {
            Ok(()) => {}
            Err(StepError::Overflow { h, theta }) => {
                trace.mark_diverged(Divergence { step, h, theta });
                return Ok(trace);
            }
            Err(e) => return Err(ChainError::Step(e)),
        }
        if step > config.burn_in {
            trace.record(h, &state.theta);
        }
    }
    Ok(trace)
}
