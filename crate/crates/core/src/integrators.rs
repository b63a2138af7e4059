//! One-step update maps for SGLD, SGHMC (Euler and ABOBA splitting) and SGNHT.
//!
//! Every step takes its Gaussian noise as an explicit [`NoiseDraw`]; the
//! caller owns the random number generator. Steps are pure: the `*_step`
//! functions return a new state, while [`Integrator::step_in_place`] is the
//! allocation-free variant used by the chain runner.

use crate::models::{Minibatch, Model, ModelError};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Any state component beyond this magnitude counts as a divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e10;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("state overflow at step size h={h}: theta={theta:?}")]
    Overflow { h: f64, theta: Vec<f64> },
    #[error("invalid step: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub theta: Vec<f64>,
    /// Momentum; absent for SGLD.
    pub p: Option<Vec<f64>>,
    /// Thermostat; SGNHT only.
    pub xi: Option<f64>,
}

impl State {
    pub fn position(theta: Vec<f64>) -> Self {
        Self { theta, p: None, xi: None }
    }

    pub fn with_momentum(theta: Vec<f64>, p: Vec<f64>) -> Self {
        Self { theta, p: Some(p), xi: None }
    }

    pub fn with_thermostat(theta: Vec<f64>, p: Vec<f64>, xi: f64) -> Self {
        Self { theta, p: Some(p), xi: Some(xi) }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Flattened `(theta, p)`; the thermostat is not included.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        if let Some(p) = &self.p {
            v.extend_from_slice(p);
        }
        v
    }

    pub fn is_finite_within(&self, bound: f64) -> bool {
        let ok = |x: &f64| x.is_finite() && x.abs() <= bound;
        self.theta.iter().all(ok)
            && self.p.as_ref().is_none_or(|p| p.iter().all(ok))
            && self.xi.as_ref().is_none_or(ok)
    }
}

/// Standard normal variates for one step, one per position component.
#[derive(Debug, Clone, Copy)]
pub struct NoiseDraw<'a>(pub &'a [f64]);

/// Which gradient the step evaluates.
#[derive(Debug, Clone, Copy)]
pub enum Gradient<'a> {
    Full,
    Minibatch(&'a Minibatch),
}

impl Gradient<'_> {
    fn eval<M: Model>(&self, model: &M, theta: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        match self {
            Gradient::Full => model.grad_u(theta, out),
            Gradient::Minibatch(batch) => model.stoch_grad_u(theta, batch, out)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegratorKind {
    SgldEuler,
    SghmcEuler,
    SghmcAboba,
    Sgnht,
}

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 4] = [
        IntegratorKind::SgldEuler,
        IntegratorKind::SghmcEuler,
        IntegratorKind::SghmcAboba,
        IntegratorKind::Sgnht,
    ];

    /// Local weak order `K`.
    pub fn order(self) -> u32 {
        match self {
            IntegratorKind::SghmcAboba => 2,
            _ => 1,
        }
    }

    pub fn has_momentum(self) -> bool {
        !matches!(self, IntegratorKind::SgldEuler)
    }

    pub fn has_thermostat(self) -> bool {
        matches!(self, IntegratorKind::Sgnht)
    }

    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::SgldEuler => "sgld",
            IntegratorKind::SghmcEuler => "sghmc-euler",
            IntegratorKind::SghmcAboba => "sghmc-aboba",
            IntegratorKind::Sgnht => "sgnht",
        }
    }
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntegratorKind {
    type Err = StepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntegratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StepError::Invalid(format!("unknown integrator `{s}`")))
    }
}

/// An integrator kind with its friction `D` and a reusable gradient buffer.
#[derive(Debug, Clone)]
pub struct Integrator {
    kind: IntegratorKind,
    friction: f64,
    grad: Vec<f64>,
}

impl Integrator {
    pub fn new(kind: IntegratorKind, friction: f64) -> Result<Self, StepError> {
        if !(friction >= 0.0 && friction.is_finite()) {
            return Err(StepError::Invalid(format!("friction must be >= 0, got {friction}")));
        }
        Ok(Self { kind, friction, grad: Vec::new() })
    }

    pub fn kind(&self) -> IntegratorKind {
        self.kind
    }

    pub fn friction(&self) -> f64 {
        self.friction
    }

    /// Starting state for this kind: `p` and `xi = D` are attached when the
    /// dynamics carry them.
    pub fn initial_state(&self, theta: Vec<f64>, p: Vec<f64>) -> State {
        match self.kind {
            IntegratorKind::SgldEuler => State::position(theta),
            IntegratorKind::SghmcEuler | IntegratorKind::SghmcAboba => {
                State::with_momentum(theta, p)
            }
            IntegratorKind::Sgnht => State::with_thermostat(theta, p, self.friction),
        }
    }

    pub fn step<M: Model>(
        &mut self,
        model: &M,
        state: &State,
        h: f64,
        gradient: Gradient<'_>,
        noise: NoiseDraw<'_>,
    ) -> Result<State, StepError> {
        let mut next = state.clone();
        self.step_in_place(model, &mut next, h, gradient, noise)?;
        Ok(next)
    }

    pub fn step_in_place<M: Model>(
        &mut self,
        model: &M,
        state: &mut State,
        h: f64,
        gradient: Gradient<'_>,
        noise: NoiseDraw<'_>,
    ) -> Result<(), StepError> {
        let dim = state.theta.len();
        if h.is_nan() || h < 0.0 {
            return Err(StepError::Invalid(format!("step size must be >= 0, got {h}")));
        }
        if noise.0.len() != dim {
            return Err(StepError::Invalid(format!(
                "noise has {} components for a {dim}-dimensional position",
                noise.0.len()
            )));
        }
        self.grad.resize(dim, 0.0);
        let d = self.friction;
        let zeta = noise.0;

        match self.kind {
            IntegratorKind::SgldEuler => {
                if state.p.is_some() {
                    return Err(StepError::Invalid("SGLD state carries no momentum".into()));
                }
                gradient.eval(model, &state.theta, &mut self.grad)?;
                let diffusion = (2.0 * h).sqrt();
                for ((t, g), z) in state.theta.iter_mut().zip(&self.grad).zip(zeta) {
                    *t += -g * h + diffusion * z;
                }
            }
            IntegratorKind::SghmcEuler => {
                let p = momentum(&mut state.p, dim)?;
                gradient.eval(model, &state.theta, &mut self.grad)?;
                let diffusion = (2.0 * d * h).sqrt();
                for (((t, p), g), z) in state.theta.iter_mut().zip(p).zip(&self.grad).zip(zeta) {
                    *p = *p - d * *p * h - g * h + diffusion * z;
                    *t += *p * h;
                }
            }
            IntegratorKind::SghmcAboba => {
                let p = momentum(&mut state.p, dim)?;
                let decay = (-d * h / 2.0).exp();
                let diffusion = (2.0 * d * h).sqrt();
                // A: half drift in position
                for (t, p) in state.theta.iter_mut().zip(p.iter()) {
                    *t += *p * h / 2.0;
                }
                gradient.eval(model, &state.theta, &mut self.grad)?;
                // B, O, B: half friction, kick plus noise, half friction
                for ((p, g), z) in p.iter_mut().zip(&self.grad).zip(zeta) {
                    let p1 = decay * *p;
                    let p2 = p1 - g * h + diffusion * z;
                    *p = decay * p2;
                }
                // A: second half drift
                for (t, p) in state.theta.iter_mut().zip(p.iter()) {
                    *t += *p * h / 2.0;
                }
            }
            IntegratorKind::Sgnht => {
                let xi = state
                    .xi
                    .ok_or_else(|| StepError::Invalid("SGNHT state needs a thermostat".into()))?;
                let p = momentum(&mut state.p, dim)?;
                gradient.eval(model, &state.theta, &mut self.grad)?;
                let diffusion = (2.0 * d * h).sqrt();
                let mut kinetic = 0.0;
                for (((t, p), g), z) in state.theta.iter_mut().zip(p).zip(&self.grad).zip(zeta) {
                    *p = *p - xi * *p * h - g * h + diffusion * z;
                    *t += *p * h;
                    kinetic += *p * *p;
                }
                state.xi = Some(xi + (kinetic / dim as f64 - 1.0) * h);
            }
        }

        if !state.is_finite_within(DIVERGENCE_THRESHOLD) {
            return Err(StepError::Overflow { h, theta: state.theta.clone() });
        }
        Ok(())
    }
}

fn momentum(p: &mut Option<Vec<f64>>, dim: usize) -> Result<&mut [f64], StepError> {
    let p = p.as_mut().ok_or_else(|| StepError::Invalid("state carries no momentum".into()))?;
    if p.len() != dim {
        return Err(StepError::Invalid(format!(
            "momentum has {} components, position has {dim}",
            p.len()
        )));
    }
    Ok(p)
}

/// `theta' = theta - grad(theta) h + sqrt(2h) zeta`.
pub fn sgld_step<M: Model>(
    model: &M,
    state: &State,
    h: f64,
    gradient: Gradient<'_>,
    noise: NoiseDraw<'_>,
) -> Result<State, StepError> {
    Integrator::new(IntegratorKind::SgldEuler, 0.0)?.step(model, state, h, gradient, noise)
}

/// Momentum first with multiplicative friction `(1 - D h)`, then position with
/// the new momentum.
pub fn sghmc_euler_step<M: Model>(
    model: &M,
    state: &State,
    h: f64,
    friction: f64,
    gradient: Gradient<'_>,
    noise: NoiseDraw<'_>,
) -> Result<State, StepError> {
    Integrator::new(IntegratorKind::SghmcEuler, friction)?.step(model, state, h, gradient, noise)
}

/// Symmetric splitting: half drift, half friction, gradient kick with noise,
/// half friction, half drift.
pub fn sghmc_aboba_step<M: Model>(
    model: &M,
    state: &State,
    h: f64,
    friction: f64,
    gradient: Gradient<'_>,
    noise: NoiseDraw<'_>,
) -> Result<State, StepError> {
    Integrator::new(IntegratorKind::SghmcAboba, friction)?.step(model, state, h, gradient, noise)
}

/// Nosé-Hoover thermostat step; `xi` adapts towards unit kinetic temperature.
pub fn sgnht_step<M: Model>(
    model: &M,
    state: &State,
    h: f64,
    friction: f64,
    gradient: Gradient<'_>,
    noise: NoiseDraw<'_>,
) -> Result<State, StepError> {
    Integrator::new(IntegratorKind::Sgnht, friction)?.step(model, state, h, gradient, noise)
}
