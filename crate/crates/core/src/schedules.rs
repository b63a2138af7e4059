//! Fixed and power-decay step-size schedules, their validity conditions and
//! the running sums used for step-weighted averages.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step index must be >= 1")]
    ZeroIndex,
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `h_l = h`.
    Fixed { h: f64 },
    /// `h_l = prefactor * l^(-alpha)`.
    PowerDecay { prefactor: f64, alpha: f64 },
}

impl StepSchedule {
    pub fn fixed(h: f64) -> Result<Self, ScheduleError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(ScheduleError::Invalid(format!("step size must be > 0, got {h}")));
        }
        Ok(StepSchedule::Fixed { h })
    }

    pub fn power_decay(prefactor: f64, alpha: f64) -> Result<Self, ScheduleError> {
        if !(prefactor > 0.0 && prefactor.is_finite()) {
            return Err(ScheduleError::Invalid(format!("prefactor must be > 0, got {prefactor}")));
        }
        if !alpha.is_finite() {
            return Err(ScheduleError::Invalid(format!("alpha must be finite, got {alpha}")));
        }
        Ok(StepSchedule::PowerDecay { prefactor, alpha })
    }

    /// Step size at the 1-based index `l`.
    pub fn step_size(&self, l: u64) -> Result<f64, ScheduleError> {
        if l == 0 {
            return Err(ScheduleError::ZeroIndex);
        }
        Ok(self.step_size_unchecked(l))
    }

    pub(crate) fn step_size_unchecked(&self, l: u64) -> f64 {
        match *self {
            StepSchedule::Fixed { h } => h,
            StepSchedule::PowerDecay { prefactor, alpha } => {
                if alpha == 0.0 {
                    prefactor
                } else {
                    prefactor * (l as f64).powf(-alpha)
                }
            }
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, StepSchedule::Fixed { .. })
    }

    /// Running sums up to and including step `horizon`.
    pub fn sums(&self, horizon: u64, order: u32) -> ScheduleSums {
        let mut sums = ScheduleSums::new(order);
        for l in 1..=horizon {
            sums.push(self.step_size_unchecked(l));
        }
        sums
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Fixed { h } => write!(f, "fixed(h={h})"),
            StepSchedule::PowerDecay { prefactor, alpha } => {
                write!(f, "power-decay({prefactor}*l^-{alpha})")
            }
        }
    }
}

/// Incrementally maintained `sum h_l`, `sum h_l^(K+1)` and `sum h_l^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSums {
    order: u32,
    steps: u64,
    sum: f64,
    sum_kp1: f64,
    sum_sq: f64,
}

impl ScheduleSums {
    pub fn new(order: u32) -> Self {
        Self { order, steps: 0, sum: 0.0, sum_kp1: 0.0, sum_sq: 0.0 }
    }

    pub fn push(&mut self, h: f64) {
        self.steps += 1;
        self.sum += h;
        self.sum_kp1 += h.powi(self.order as i32 + 1);
        self.sum_sq += h * h;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `S_L`.
    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn sum_pow_order_plus_one(&self) -> f64 {
        self.sum_kp1
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    /// `sum h^(K+1) / sum h`, which must vanish for a consistent schedule.
    pub fn ratio(&self) -> f64 {
        self.sum_kp1 / self.sum
    }
}

/// A step-size condition that a schedule fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleViolation {
    /// `sum h_l` is finite, so the chain cannot cover unbounded time.
    StepSumConverges,
    /// `sum h_l^(K+1) / sum h_l` does not tend to zero.
    RatioDoesNotVanish,
    /// The sequence is not decreasing (`alpha <= 0`).
    NotDecreasing,
    /// A constant step never shrinks; only the fixed-step theory applies.
    FixedStepOnly,
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            ScheduleViolation::StepSumConverges => "sum of step sizes converges",
            ScheduleViolation::RatioDoesNotVanish => {
                "ratio sum h^(K+1) / sum h does not vanish"
            }
            ScheduleViolation::NotDecreasing => "step sizes are not decreasing",
            ScheduleViolation::FixedStepOnly => "fixed step: usable only with fixed-step theory",
        };
        f.write_str(msg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleValidation {
    pub valid: bool,
    /// A fixed step is not asymptotically consistent but is the setting of the
    /// fixed-step bias and MSE bounds.
    pub usable_for_fixed_step: bool,
    pub violations: Vec<ScheduleViolation>,
    /// `sum h^(K+1) / sum h` at the horizon.
    pub ratio_at_horizon: f64,
}

/// Check the decreasing-step conditions `sum h_l = inf` and
/// `sum h_l^(K+1) / sum h_l -> 0` for an integrator of order `order`.
pub fn validate_schedule(schedule: &StepSchedule, order: u32, horizon: u64) -> ScheduleValidation {
    match *schedule {
        StepSchedule::Fixed { h } => ScheduleValidation {
            valid: false,
            usable_for_fixed_step: true,
            violations: vec![ScheduleViolation::FixedStepOnly],
            ratio_at_horizon: h.powi(order as i32),
        },
        StepSchedule::PowerDecay { alpha, .. } => {
            let mut violations = Vec::new();
            if alpha > 1.0 {
                violations.push(ScheduleViolation::StepSumConverges);
                violations.push(ScheduleViolation::RatioDoesNotVanish);
            } else if alpha <= 0.0 {
                violations.push(ScheduleViolation::NotDecreasing);
                violations.push(ScheduleViolation::RatioDoesNotVanish);
            }
            ScheduleValidation {
                valid: violations.is_empty(),
                usable_for_fixed_step: false,
                violations,
                ratio_at_horizon: schedule.sums(horizon.max(1), order).ratio(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Bias,
    Mse,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Bias => "bias",
            Target::Mse => "mse",
        })
    }
}

impl std::str::FromStr for Target {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bias" => Ok(Target::Bias),
            "mse" => Ok(Target::Mse),
            other => Err(ScheduleError::Invalid(format!("unknown target `{other}`"))),
        }
    }
}

/// Step-size decay rate that balances the error terms: `1/(K+1)` for the
/// bias, `1/(2K+1)` for the MSE.
pub fn optimal_alpha(target: Target, order: u32) -> f64 {
    let k = order as f64;
    match target {
        Target::Bias => 1.0 / (k + 1.0),
        Target::Mse => 1.0 / (2.0 * k + 1.0),
    }
}

/// Integral bounds on `sum_{l=1}^L l^(-alpha)` for `0 < alpha < 1`.
pub fn power_sum_bounds(alpha: f64, horizon: u64) -> (f64, f64) {
    let l = horizon as f64;
    let e = 1.0 - alpha;
    ((l.powf(e) - 1.0) / e, 1.0 + (l.powf(e) - 1.0) / e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_examples() {
        assert_eq!(StepSchedule::fixed(0.01).unwrap().step_size(7).unwrap(), 0.01);
        let s = StepSchedule::power_decay(0.045, 1.0 / 3.0).unwrap();
        assert!((s.step_size(8).unwrap() - 0.0225).abs() < 1e-15);
        let s = StepSchedule::power_decay(1.0, 1.0).unwrap();
        assert_eq!(s.step_size(4).unwrap(), 0.25);
        assert_eq!(s.step_size(0), Err(ScheduleError::ZeroIndex));
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(StepSchedule::fixed(0.0).is_err());
        assert!(StepSchedule::fixed(f64::INFINITY).is_err());
        assert!(StepSchedule::power_decay(-1.0, 0.5).is_err());
        assert!(StepSchedule::power_decay(1.0, f64::NAN).is_err());
    }

    #[test]
    fn fixed_ratio_is_h_to_the_order() {
        let v = validate_schedule(&StepSchedule::fixed(0.1).unwrap(), 2, 1000);
        assert!(!v.valid && v.usable_for_fixed_step);
        assert_eq!(v.violations, vec![ScheduleViolation::FixedStepOnly]);
        assert_eq!(v.ratio_at_horizon, 0.1f64.powi(2));
    }

    #[test]
    fn sums_track_pushes() {
        let mut s = ScheduleSums::new(1);
        s.push(2.0);
        s.push(1.0);
        assert_eq!((s.steps(), s.sum(), s.sum_sq()), (2, 3.0, 5.0));
        assert_eq!(s.sum_pow_order_plus_one(), 5.0);
    }

    #[test]
    fn optimal_alpha_values() {
        assert_eq!(optimal_alpha(Target::Bias, 2), 1.0 / 3.0);
        assert_eq!(optimal_alpha(Target::Mse, 2), 1.0 / 5.0);
        assert_eq!(optimal_alpha(Target::Bias, 1), 0.5);
        assert_eq!(optimal_alpha(Target::Mse, 1), 1.0 / 3.0);
    }
}
