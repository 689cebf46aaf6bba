//! Inplace finetuning of the denoiser on a single frame pair.
//!
//! Each step draws `k ~ U{1..T}` and takes one Adam step on a single-step
//! estimate of the selected process's objective:
//!
//! * reconstruct: `mse(f(Q(z_t0, k), k), Q(z_t1, k))`, sharing `eps_k`;
//! * interpolate: only step `k` deviates from the identity pass, so
//!   `z_0 = z_0* + g_k (f(s_k, k) - s_k)` where `s_k`, `z_0*` come from the
//!   identity pass and `g_k` is the operator's gain from step `k` to the end;
//!   the loss is `mse(z_0, z_t1)`.
//!
//! Targets and identity-pass states are constants (no gradient).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::loss::mse;
use super::operators::{gain_to_final, NoiseContext, OperatorKind};
use super::process::{interpolate, ProcessKind};
use crate::denoiser::{Denoiser, IdentityNetwork};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::schedule::NoiseSchedule;

pub const PAPER_STEPS: usize = 500;
pub const PAPER_LR: f64 = 3e-5;
pub const DESK_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub process: ProcessKind,
    pub operator: OperatorKind,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            process: ProcessKind::Interpolate,
            operator: OperatorKind::OffsetClean,
            steps: DESK_STEPS,
            lr: PAPER_LR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Sampled-step loss before each update.
    pub losses: Vec<f64>,
    /// Sampled step of each update.
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                let md = &mut m.data_mut()[i];
                *md = b1 * *md + (1.0 - b1) * gd[i];
                let mhat = *md / c1;
                let vd = &mut v.data_mut()[i];
                *vd = b2 * *vd + (1.0 - b2) * gd[i] * gd[i];
                let vhat = *vd / c2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-pair training data shared by every step.
struct Objective<'a> {
    cfg: &'a FinetuneConfig,
    z_t0: &'a Tensor,
    z_t1: &'a Tensor,
    schedule: &'a NoiseSchedule,
    noise: &'a NoiseContext,
    identity_states: Vec<Tensor>,
}

impl<'a> Objective<'a> {
    fn new(
        cfg: &'a FinetuneConfig,
        z_t0: &'a Tensor,
        z_t1: &'a Tensor,
        tau: &Tensor,
        schedule: &'a NoiseSchedule,
        noise: &'a NoiseContext,
    ) -> Result<Self> {
        let identity_states = match cfg.process {
            ProcessKind::Interpolate => {
                interpolate(z_t0, z_t1, tau, schedule, cfg.operator, &IdentityNetwork, false, noise)?.states
            }
            ProcessKind::Reconstruct => Vec::new(),
        };
        Ok(Self { cfg, z_t0, z_t1, schedule, noise, identity_states })
    }

    /// Network input, and a map from network output to prediction and target.
    fn sample(&self, k: usize) -> Result<(Tensor, f64, Tensor, Tensor)> {
        match self.cfg.process {
            ProcessKind::Reconstruct => {
                let input = self.noise.q_pass(self.schedule, self.z_t0, k)?;
                let target = self.noise.q_pass(self.schedule, self.z_t1, k)?;
                let zeros = Tensor::zeros(input.shape());
                Ok((input, 1.0, zeros, target))
            }
            ProcessKind::Interpolate => {
                let s_k = self.identity_states[k].clone();
                let g = gain_to_final(self.cfg.operator, self.schedule, k);
                // prediction = g * out + (z_0* - g * s_k)
                let shift = self.identity_states[0].axpy(-g, &s_k)?;
                Ok((s_k, g, shift, self.z_t1.clone()))
            }
        }
    }

    fn gradient(&self, model: &Denoiser, tau: &Tensor, k: usize) -> Result<(f64, Vec<Tensor>)> {
        let (input, g, shift, target) = self.sample(k)?;
        let tape = Tape::new();
        let params: Vec<Var> = model.params().iter().map(|p| tape.param(p.clone())).collect();
        let zv = tape.constant(input);
        let tv = tape.constant(tau.clone());
        let (out, _) = model.forward_var(&tape, &params, zv, k, tv)?;
        let pred = out.scale(g).add(&tape.constant(shift))?;
        let loss = pred.sub(&tape.constant(target))?.square()?.mean();
        let value = loss.value().item()?;
        if !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        let grads = params
            .iter()
            .zip(model.params())
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, grads))
    }

    fn loss(&self, model: &Denoiser, tau: &Tensor, k: usize) -> Result<f64> {
        let (input, g, shift, target) = self.sample(k)?;
        let (out, _) = model.forward(&input, k, tau, false)?;
        mse(&out.scale(g).add(&shift)?, &target)
    }
}

/// Adam steps on the selected process's single-step objective.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    model: &mut Denoiser,
    z_t0: &Tensor,
    z_t1: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    noise: &NoiseContext,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if cfg.steps == 0 {
        return Err(Error::Contract("finetune needs at least one step".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", cfg.lr)));
    }
    let objective = Objective::new(cfg, z_t0, z_t1, tau, schedule, noise)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut ks = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let k = rng.gen_range(1..=schedule.steps());
        let (value, grads) = objective.gradient(model, tau, k)?;
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        let mut updated = model.params().to_vec();
        adam.update(&mut updated, &grads);
        if updated.iter().any(|p| !p.all_finite()) {
            return Err(Error::Divergence { step, loss: value });
        }
        model.set_params(updated)?;
        losses.push(value);
        ks.push(k);
    }
    Ok(FinetuneReport { losses, ks })
}

/// Mean single-step objective over every `k = 1..T`.
pub fn objective_average(
    model: &Denoiser,
    z_t0: &Tensor,
    z_t1: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    noise: &NoiseContext,
    cfg: &FinetuneConfig,
) -> Result<f64> {
    let objective = Objective::new(cfg, z_t0, z_t1, tau, schedule, noise)?;
    let t = schedule.steps();
    let mut total = 0.0;
    for k in 1..=t {
        total += objective.loss(model, tau, k)?;
    }
    Ok(total / t as f64)
}

/// Single-step objective at step `k` and its gradient for every parameter.
#[allow(clippy::too_many_arguments)]
pub fn objective_gradient(
    model: &Denoiser,
    z_t0: &Tensor,
    z_t1: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    noise: &NoiseContext,
    cfg: &FinetuneConfig,
    k: usize,
) -> Result<(f64, Vec<Tensor>)> {
    if k == 0 || k > schedule.steps() {
        return Err(Error::Index { index: k, bound: schedule.steps() });
    }
    Objective::new(cfg, z_t0, z_t1, tau, schedule, noise)?.gradient(model, tau, k)
}
