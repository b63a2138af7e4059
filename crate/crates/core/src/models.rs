//! Target posteriors, their full and minibatch gradients, and the minibatch
//! streams that feed the samplers.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("corrupt minibatch: index {index} out of range for {n_data} observations")]
    IndexOutOfRange { index: usize, n_data: usize },
    #[error("corrupt minibatch: index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("corrupt minibatch: empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid minibatch stream: {0}")]
    InvalidStream(String),
}

/// A posterior `exp(-U(theta))` that can be sampled with stochastic gradients.
///
/// Implementations are immutable and shared between concurrently running chains.
pub trait Model: Sync {
    fn dim(&self) -> usize;

    fn n_data(&self) -> usize;

    /// Full-data gradient of `U`, written into `out`.
    fn grad_u(&self, theta: &[f64], out: &mut [f64]);

    /// Minibatch estimate of the gradient of `U`, written into `out`.
    fn stoch_grad_u(
        &self,
        theta: &[f64],
        batch: &Minibatch,
        out: &mut [f64],
    ) -> Result<(), ModelError>;

    /// Draw an initial position from the prior.
    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>
    where
        Self: Sized;
}

/// Scalar model `x_i ~ N(theta, obs_var)`, `theta ~ N(prior_mean, prior_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConjugateModel {
    data: Vec<f64>,
    data_sum: f64,
    prior_mean: f64,
    prior_var: f64,
    obs_var: f64,
}

impl GaussianConjugateModel {
    /// Standard normal prior and unit observation variance.
    pub fn new(data: Vec<f64>) -> Self {
        let data_sum = data.iter().sum();
        Self {
            data,
            data_sum,
            prior_mean: 0.0,
            prior_var: 1.0,
            obs_var: 1.0,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    pub fn obs_var(&self) -> f64 {
        self.obs_var
    }

    pub fn posterior_precision(&self) -> f64 {
        1.0 / self.prior_var + self.data.len() as f64 / self.obs_var
    }

    /// Posterior mean and variance.
    pub fn posterior_params(&self) -> (f64, f64) {
        let var = 1.0 / self.posterior_precision();
        let mean = var * (self.prior_mean / self.prior_var + self.data_sum / self.obs_var);
        (mean, var)
    }

    /// Posterior expectation of `theta^2`.
    pub fn posterior_average_phi2(&self) -> f64 {
        let (mean, var) = self.posterior_params();
        var + mean * mean
    }

    /// Negative log posterior up to an additive constant.
    pub fn potential(&self, theta: f64) -> f64 {
        let prior = (theta - self.prior_mean).powi(2) / (2.0 * self.prior_var);
        let lik: f64 = self
            .data
            .iter()
            .map(|x| (theta - x).powi(2) / (2.0 * self.obs_var))
            .sum();
        prior + lik
    }
}

impl Model for GaussianConjugateModel {
    fn dim(&self) -> usize {
        1
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn grad_u(&self, theta: &[f64], out: &mut [f64]) {
        let t = theta[0];
        let n = self.data.len() as f64;
        out[0] = (t - self.prior_mean) / self.prior_var + (n * t - self.data_sum) / self.obs_var;
    }

    fn stoch_grad_u(
        &self,
        theta: &[f64],
        batch: &Minibatch,
        out: &mut [f64],
    ) -> Result<(), ModelError> {
        let t = theta[0];
        let mut batch_sum = 0.0;
        for &i in batch.indices() {
            let x = self
                .data
                .get(i)
                .ok_or(ModelError::IndexOutOfRange { index: i, n_data: self.data.len() })?;
            batch_sum += x;
        }
        let m = batch.len() as f64;
        // the prior term is never subsampled
        out[0] = (t - self.prior_mean) / self.prior_var
            + batch.scale() * (m * t - batch_sum) / self.obs_var;
        Ok(())
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let prior = Normal::new(self.prior_mean, self.prior_var.sqrt())
            .expect("prior variance is positive");
        vec![prior.sample(rng)]
    }
}

/// A set of distinct data indices with the `N / n` rescaling that keeps the
/// gradient estimate unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    indices: Vec<usize>,
    scale: f64,
}

impl Minibatch {
    /// Validates that every index is distinct and below `n_data`.
    pub fn new(indices: Vec<usize>, n_data: usize) -> Result<Self, ModelError> {
        if indices.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut seen = vec![false; n_data];
        for &i in &indices {
            if i >= n_data {
                return Err(ModelError::IndexOutOfRange { index: i, n_data });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(ModelError::DuplicateIndex(i));
            }
        }
        Ok(Self::new_unchecked(indices, n_data))
    }

    /// Skips validation; out-of-range indices are still caught when the
    /// gradient is evaluated.
    pub fn new_unchecked(indices: Vec<usize>, n_data: usize) -> Self {
        let scale = n_data as f64 / indices.len() as f64;
        Self { indices, scale }
    }

    /// Every observation exactly once.
    pub fn full(n_data: usize) -> Self {
        Self { indices: (0..n_data).collect(), scale: 1.0 }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn refill(&mut self, indices: &[usize], n_data: usize) {
        self.indices.clear();
        self.indices.extend_from_slice(indices);
        self.scale = n_data as f64 / indices.len() as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    /// Walk through a fresh random permutation of the data each epoch.
    #[default]
    EpochPermutation,
    /// Each batch is an independent uniform subset of size `n`.
    Iid,
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchMode::EpochPermutation => "epoch",
            BatchMode::Iid => "iid",
        })
    }
}

impl FromStr for BatchMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epoch" | "epoch-permutation" => Ok(BatchMode::EpochPermutation),
            "iid" | "iid-with-replacement" => Ok(BatchMode::Iid),
            other => Err(ModelError::InvalidStream(format!("unknown batch mode `{other}`"))),
        }
    }
}

/// Per-run source of minibatches. Never shared between chains.
#[derive(Debug)]
pub struct MinibatchStream {
    mode: BatchMode,
    batch_size: usize,
    n_data: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    current: Minibatch,
}

impl MinibatchStream {
    pub fn new(
        mode: BatchMode,
        batch_size: usize,
        n_data: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if n_data == 0 {
            return Err(ModelError::InvalidStream("no data to batch".into()));
        }
        if batch_size == 0 || batch_size > n_data {
            return Err(ModelError::InvalidStream(format!(
                "batch size {batch_size} not in 1..={n_data}"
            )));
        }
        Ok(Self::with_rng(mode, batch_size, n_data, ChaCha8Rng::seed_from_u64(seed)))
    }

    pub(crate) fn with_rng(
        mode: BatchMode,
        batch_size: usize,
        n_data: usize,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            mode,
            batch_size,
            n_data,
            rng,
            order: (0..n_data).collect(),
            cursor: n_data,
            current: Minibatch { indices: Vec::with_capacity(batch_size), scale: 1.0 },
        }
    }

    pub fn mode(&self) -> BatchMode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Batches per epoch, `ceil(N / n)`.
    pub fn batches_per_epoch(&self) -> usize {
        self.n_data.div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> &Minibatch {
        match self.mode {
            BatchMode::EpochPermutation => {
                if self.cursor >= self.n_data {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let end = (self.cursor + self.batch_size).min(self.n_data);
                self.current.refill(&self.order[self.cursor..end], self.n_data);
                self.cursor = end;
            }
            BatchMode::Iid => {
                let picked = index::sample(&mut self.rng, self.n_data, self.batch_size);
                self.current.indices.clear();
                self.current.indices.extend(picked.iter());
                self.current.scale = self.n_data as f64 / self.batch_size as f64;
            }
        }
        &self.current
    }
}

/// Synthetic observations `x_i ~ N(mu, sigma^2)` together with the seed that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub mu: f64,
    pub sigma: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Dataset {
    pub fn generate(seed: u64, n: usize, mu: f64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(mu, sigma).expect("sigma must be finite and non-negative");
        let values = (0..n).map(|_| normal.sample(&mut rng)).collect();
        Self { seed, mu, sigma, values }
    }

    pub fn into_model(self) -> GaussianConjugateModel {
        GaussianConjugateModel::new(self.values)
    }

    /// Header line, then one observation per line with round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# seed={} n={} mu={} sigma={}\n",
            self.seed,
            self.values.len(),
            self.mu,
            self.sigma
        );
        for v in &self.values {
            out.push_str(&format!("{v:.16e}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(DatasetError::Parse { line: 1, msg: "missing header".into() })?;
        let header = header
            .strip_prefix('#')
            .ok_or(DatasetError::Parse { line: 1, msg: "header must start with `#`".into() })?;
        let mut seed = None;
        let mut n = None;
        let mut mu = None;
        let mut sigma = None;
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or(DatasetError::Parse {
                line: 1,
                msg: format!("malformed header field `{field}`"),
            })?;
            let bad = || DatasetError::Parse { line: 1, msg: format!("bad value for `{key}`") };
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
                "n" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
                "mu" => mu = Some(value.parse::<f64>().map_err(|_| bad())?),
                "sigma" => sigma = Some(value.parse::<f64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let missing = |k: &str| DatasetError::Parse { line: 1, msg: format!("header lacks `{k}`") };
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        let mu = mu.ok_or_else(|| missing("mu"))?;
        let sigma = sigma.ok_or_else(|| missing("sigma"))?;

        let mut values = Vec::with_capacity(n);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v = line.parse::<f64>().map_err(|e| DatasetError::Parse {
                line: i + 1,
                msg: format!("`{line}`: {e}"),
            })?;
            values.push(v);
        }
        if values.len() != n {
            return Err(DatasetError::Parse {
                line: 1,
                msg: format!("header declares n={n} but file has {} values", values.len()),
            });
        }
        Ok(Self { seed, mu, sigma, values })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
