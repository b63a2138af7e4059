//! Plain and step-weighted sample averages, bias/MSE estimation across
//! independent runs, and log-log rate fits.

use crate::chain::TestFunction;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("chain diverged at step {} (h={})", .0.step, .0.h)]
    Diverged(Divergence),
    #[error("test function {0} was not accumulated")]
    MissingFunction(TestFunction),
    #[error("empty trace")]
    Empty,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-positive or non-finite value {value} at point {index}; exclude it before fitting")]
    NonPositive { index: usize, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Where and how a chain left the finite region.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// 1-based step index, burn-in included.
    pub step: u64,
    pub h: f64,
    pub theta: Vec<f64>,
}

/// Streaming accumulators for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    functions: Vec<TestFunction>,
    phi_sum: Vec<f64>,
    weighted_phi_sum: Vec<f64>,
    steps: u64,
    step_sum: f64,
    diverged_at: Option<Divergence>,
    values: Option<Vec<Vec<f64>>>,
    step_sizes: Option<Vec<f64>>,
}

impl RunTrace {
    pub fn new(functions: Vec<TestFunction>, keep_values: bool) -> Self {
        let k = functions.len();
        Self {
            functions,
            phi_sum: vec![0.0; k],
            weighted_phi_sum: vec![0.0; k],
            steps: 0,
            step_sum: 0.0,
            diverged_at: None,
            values: keep_values.then(|| vec![Vec::new(); k]),
            step_sizes: keep_values.then(Vec::new),
        }
    }

    /// A trace of already-evaluated test-function values with their step sizes.
    pub fn from_values(function: TestFunction, step_sizes: &[f64], phi: &[f64]) -> Result<Self, DiagnosticsError> {
        if step_sizes.len() != phi.len() {
            return Err(DiagnosticsError::Invalid(format!(
                "{} step sizes for {} values",
                step_sizes.len(),
                phi.len()
            )));
        }
        let mut trace = RunTrace::new(vec![function], true);
        for (&h, &v) in step_sizes.iter().zip(phi) {
            trace.record_values(h, &[v]);
        }
        Ok(trace)
    }

    pub fn record(&mut self, h: f64, theta: &[f64]) {
        self.steps += 1;
        self.step_sum += h;
        for (i, f) in self.functions.iter().enumerate() {
            let v = f.eval(theta);
            self.phi_sum[i] += v;
            self.weighted_phi_sum[i] += h * v;
            if let Some(values) = &mut self.values {
                values[i].push(v);
            }
        }
        if let Some(hs) = &mut self.step_sizes {
            hs.push(h);
        }
    }

    fn record_values(&mut self, h: f64, phi: &[f64]) {
        self.steps += 1;
        self.step_sum += h;
        for (i, &v) in phi.iter().enumerate() {
            self.phi_sum[i] += v;
            self.weighted_phi_sum[i] += h * v;
            if let Some(values) = &mut self.values {
                values[i].push(v);
            }
        }
        if let Some(hs) = &mut self.step_sizes {
            hs.push(h);
        }
    }

    pub fn mark_diverged(&mut self, divergence: Divergence) {
        self.diverged_at = Some(divergence);
    }

    pub fn divergence(&self) -> Option<&Divergence> {
        self.diverged_at.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `S_L`, the sum of accumulated step sizes.
    pub fn step_sum(&self) -> f64 {
        self.step_sum
    }

    fn slot(&self, f: TestFunction) -> Result<usize, DiagnosticsError> {
        if let Some(d) = &self.diverged_at {
            return Err(DiagnosticsError::Diverged(d.clone()));
        }
        if self.steps == 0 {
            return Err(DiagnosticsError::Empty);
        }
        self.functions
            .iter()
            .position(|&g| g == f)
            .ok_or(DiagnosticsError::MissingFunction(f))
    }

    /// `(1/L) sum phi`.
    pub fn sample_average(&self, f: TestFunction) -> Result<f64, DiagnosticsError> {
        let i = self.slot(f)?;
        Ok(self.phi_sum[i] / self.steps as f64)
    }

    /// `sum h_l phi_l / S_L`.
    pub fn weighted_sample_average(&self, f: TestFunction) -> Result<f64, DiagnosticsError> {
        let i = self.slot(f)?;
        Ok(self.weighted_phi_sum[i] / self.step_sum)
    }

    /// Recorded values, if the trace was kept.
    pub fn values(&self, f: TestFunction) -> Option<&[f64]> {
        let i = self.functions.iter().position(|&g| g == f)?;
        self.values.as_ref().map(|v| v[i].as_slice())
    }

    pub fn step_sizes(&self) -> Option<&[f64]> {
        self.step_sizes.as_deref()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Bias and MSE of run averages against a known posterior value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasMse {
    pub bias: f64,
    pub bias_se: f64,
    pub signed_bias: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub n_runs: usize,
}

/// `bias = |mean - phi_bar|`, `mse = mean((x - phi_bar)^2)`; standard errors
/// are sample standard deviations over `sqrt(R)` of the averages and of the
/// squared errors respectively.
pub fn estimate_bias_mse(runs: &[f64], phi_bar: f64) -> Result<BiasMse, DiagnosticsError> {
    if runs.len() < 2 {
        return Err(DiagnosticsError::TooFew { needed: 2, got: runs.len() });
    }
    let r = runs.len() as f64;
    let signed_bias = mean(runs) - phi_bar;
    let sq_err: Vec<f64> = runs.iter().map(|x| (x - phi_bar).powi(2)).collect();
    Ok(BiasMse {
        bias: signed_bias.abs(),
        bias_se: (sample_var(runs) / r).sqrt(),
        signed_bias,
        mse: mean(&sq_err),
        mse_se: (sample_var(&sq_err) / r).sqrt(),
        n_runs: runs.len(),
    })
}

/// Aggregate of one grid point; diverged runs are counted and excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub control: f64,
    pub n_runs: usize,
    pub n_diverged: usize,
    /// `None` when fewer than two runs stayed finite.
    pub estimate: Option<BiasMse>,
}

impl SweepPoint {
    /// `averages[r]` is `None` for a diverged run.
    pub fn from_runs(control: f64, averages: &[Option<f64>], phi_bar: f64) -> Self {
        let finite: Vec<f64> = averages.iter().flatten().copied().collect();
        Self {
            control,
            n_runs: averages.len(),
            n_diverged: averages.len() - finite.len(),
            estimate: estimate_bias_mse(&finite, phi_bar).ok(),
        }
    }

    /// Usable for slope fits: an estimate exists and at most half the runs diverged.
    pub fn usable(&self) -> bool {
        self.estimate.is_some() && 2 * self.n_diverged <= self.n_runs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln(value)` on `ln(control)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit, DiagnosticsError> {
    if points.len() < 3 {
        return Err(DiagnosticsError::TooFew { needed: 3, got: points.len() });
    }
    for (index, &(x, y)) in points.iter().enumerate() {
        for value in [x, y] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DiagnosticsError::NonPositive { index, value });
            }
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DiagnosticsError::Invalid("all controls are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LogLogFit { slope, intercept, r_squared })
}

/// Standard error of the mean of a correlated series from `n_batches`
/// non-overlapping batch means. A trailing remainder is dropped.
pub fn batch_means_se(values: &[f64], n_batches: usize) -> Result<f64, DiagnosticsError> {
    if n_batches < 2 {
        return Err(DiagnosticsError::TooFew { needed: 2, got: n_batches });
    }
    let size = values.len() / n_batches;
    if size == 0 {
        return Err(DiagnosticsError::TooFew { needed: n_batches, got: values.len() });
    }
    let means: Vec<f64> = values.chunks_exact(size).take(n_batches).map(mean).collect();
    Ok((sample_var(&means) / n_batches as f64).sqrt())
}
