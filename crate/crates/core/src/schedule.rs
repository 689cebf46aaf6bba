//! Linear noise schedule, forward noising `Q`, and interpolation weights.
//!
//! Two sequences live here and must not be confused: `alpha_bar[k]` is the
//! cumulative noise-retention coefficient used by `Q`, while
//! `interp_weight[k] = k / T` weighs the two frame latents in the
//! interpolation operators.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_T: usize = 50;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { t: DEFAULT_T, beta_start: DEFAULT_BETA_START, beta_end: DEFAULT_BETA_END }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::make_linear(self.t, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    interp_weight: Vec<f64>,
}

impl NoiseSchedule {
    pub fn make_linear(t: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t == 0 {
            return Err(Error::Config("schedule T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta = (0..t)
            .map(|j| if t == 1 { beta_start } else { beta_start + (beta_end - beta_start) * j as f64 / (t - 1) as f64 })
            .collect();
        Self::from_betas(beta)
    }

    /// Builds a schedule from an explicit `beta_1 .. beta_T` list.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("schedule needs at least one beta".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let t = beta.len();
        let mut alpha_bar = Vec::with_capacity(t + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let interp_weight = (0..=t).map(|k| k as f64 / t as f64).collect();
        Ok(Self { t, beta, alpha_bar, interp_weight })
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn interp_weights(&self) -> &[f64] {
        &self.interp_weight
    }

    /// `alpha_bar[k]`, checked.
    pub fn ab(&self, k: usize) -> Result<f64> {
        self.check(k)?;
        Ok(self.alpha_bar[k])
    }

    /// Interpolation weight `k / T`, checked.
    pub fn weight(&self, k: usize) -> Result<f64> {
        self.check(k)?;
        Ok(self.interp_weight[k])
    }

    fn check(&self, k: usize) -> Result<()> {
        if k > self.t {
            return Err(Error::Index { index: k, bound: self.t });
        }
        Ok(())
    }

    /// `sqrt(ab_k) z0 + sqrt(1 - ab_k) eps`.
    pub fn q_sample(&self, z0: &Tensor, k: usize, eps: &Tensor) -> Result<Tensor> {
        let ab = self.ab(k)?;
        if z0.shape() != eps.shape() {
            return Err(Error::Shape(format!("q_sample: z0 {:?} vs eps {:?}", z0.shape(), eps.shape())));
        }
        let (a, c) = (ab.sqrt(), (1.0 - ab).sqrt());
        z0.zip_map(eps, "q_sample", |z, e| a * z + c * e)
    }
}

/// Standard-normal tensor that depends only on `(shape, seed, k)`.
pub fn seeded_noise(shape: &[usize], seed: u64, k: usize) -> Tensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches data length")
}
