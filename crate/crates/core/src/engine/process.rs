//! Interpolation and reconstruction passes between two frame latents.

use serde::{Deserialize, Serialize};

use super::operators::{blend, is_boundary, operator_step, NoiseContext, OperatorKind};
use crate::denoiser::{AttentionRecord, StepNetwork};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Interpolate,
    Reconstruct,
}

impl ProcessKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProcessKind::Interpolate => "interpolate",
            ProcessKind::Reconstruct => "reconstruct",
        }
    }
}

/// States `z_T .. z_0` of one pass with the network output of every step.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `states[k]` is `z_k`; `states[T]` is the starting point.
    pub states: Vec<Tensor>,
    /// `outputs[k - 1]` is the network output at step `k`.
    pub outputs: Vec<Tensor>,
    pub records: Vec<AttentionRecord>,
    /// Network evaluations made during the pass.
    pub evals: usize,
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_latent(&self) -> &Tensor {
        &self.states[0]
    }

    pub fn state(&self, k: usize) -> &Tensor {
        &self.states[k]
    }

    pub fn output(&self, k: usize) -> &Tensor {
        &self.outputs[k - 1]
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("latents {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Carries `z_t0` towards `z_t1` in `T` network steps starting from `z_T = z_t0`.
pub fn interpolate(
    z_t0: &Tensor,
    z_t1: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    kind: OperatorKind,
    model: &dyn StepNetwork,
    capture: bool,
    noise: &NoiseContext,
) -> Result<Trace> {
    interpolate_from(z_t0.clone(), z_t0, z_t1, tau, schedule, kind, model, capture, noise)
}

/// As [`interpolate`] with an explicit starting state `z_T`.
#[allow(clippy::too_many_arguments)]
pub fn interpolate_from(
    base: Tensor,
    z_t0: &Tensor,
    z_t1: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    kind: OperatorKind,
    model: &dyn StepNetwork,
    capture: bool,
    noise: &NoiseContext,
) -> Result<Trace> {
    check_pair(z_t0, z_t1)?;
    check_pair(&base, z_t0)?;
    let t = schedule.steps();
    let mut states = vec![Tensor::zeros(&[0]); t + 1];
    let mut outputs = Vec::with_capacity(t);
    let mut records = Vec::new();
    states[t] = base;
    for k in (1..=t).rev() {
        let (out, recs) = model.step(&states[k], k, tau, capture)?;
        records.extend(recs);
        states[k - 1] = if is_boundary(kind, schedule, k) {
            blend(z_t0, z_t1, schedule, k - 1)?
        } else {
            operator_step(kind, &out, z_t0, z_t1, schedule, k, noise)?
        };
        outputs.push(out);
    }
    outputs.reverse();
    Ok(Trace { states, outputs, records, evals: t })
}

/// How the noisy latent `z_T` is reached before denoising.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inversion {
    /// `T` deterministic network steps from `z_t0`.
    Network,
    /// `z_T = Q(z_t0, T)` directly, no network evaluations.
    ClosedForm,
}

/// Inverts `z_t0` to step `T`, then denoises back to step 0 with a
/// deterministic DDIM pass sharing one noise draw `eps`.
///
/// The network output `f` at step `k` implies a clean estimate
/// `x = (f - c_k eps) / s_k` and a noise estimate `e = (z_k - s_k x) / c_k`,
/// with `s_k = sqrt(ab_k)` and `c_k = sqrt(1 - ab_k)`. Denoising moves to
/// `s_{k-1} x + c_{k-1} e`; network inversion evaluates step `k - 1` on
/// `z_{k-1}` and moves to `s_k x + c_k e`. For the identity network every
/// state is exactly `Q(z_t0, k)`. Only denoising steps are recorded in
/// `states`, `outputs` and `records`.
pub fn reconstruct(
    z_t0: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    model: &dyn StepNetwork,
    capture: bool,
    noise: &NoiseContext,
    inversion: Inversion,
) -> Result<Trace> {
    let t = schedule.steps();
    let ab = schedule.alpha_bar();
    let eps = noise.pass_eps(z_t0.shape());
    let s = |k: usize| ab[k].sqrt();
    let c = |k: usize| (1.0 - ab[k]).sqrt();
    // Clean and noise estimates from output `f` for state `z` at step `k`.
    let estimate = |f: &Tensor, z: &Tensor, k: usize| -> Result<(Tensor, Tensor)> {
        if k == 0 {
            return Ok((f.clone(), eps.clone()));
        }
        let x = f.axpy(-c(k), &eps)?.scale(1.0 / s(k));
        let e = z.axpy(-s(k), &x)?.scale(1.0 / c(k));
        Ok((x, e))
    };
    let mut evals = 0;
    let mut z = match inversion {
        Inversion::ClosedForm => schedule.q_sample(z_t0, t, &eps)?,
        Inversion::Network => {
            let mut z = z_t0.clone();
            for k in 1..=t {
                let (out, _) = model.step(&z, k - 1, tau, false)?;
                evals += 1;
                let (x, e) = estimate(&out, &z, k - 1)?;
                z = x.scale(s(k)).axpy(c(k), &e)?;
            }
            z
        }
    };
    let mut states = vec![Tensor::zeros(&[0]); t + 1];
    let mut outputs = Vec::with_capacity(t);
    let mut records = Vec::new();
    states[t] = z.clone();
    for k in (1..=t).rev() {
        let (out, recs) = model.step(&z, k, tau, capture)?;
        evals += 1;
        records.extend(recs);
        let (x, e) = estimate(&out, &z, k)?;
        z = x.scale(s(k - 1)).axpy(c(k - 1), &e)?;
        states[k - 1] = z.clone();
        outputs.push(out);
    }
    outputs.reverse();
    Ok(Trace { states, outputs, records, evals })
}

/// Runs the configured process for a frame pair.
#[allow(clippy::too_many_arguments)]
pub fn run_process(
    process: ProcessKind,
    z_t0: &Tensor,
    z_t1: &Tensor,
    tau: &Tensor,
    schedule: &NoiseSchedule,
    kind: OperatorKind,
    model: &dyn StepNetwork,
    capture: bool,
    noise: &NoiseContext,
    inversion: Inversion,
) -> Result<Trace> {
    match process {
        ProcessKind::Interpolate => interpolate(z_t0, z_t1, tau, schedule, kind, model, capture, noise),
        ProcessKind::Reconstruct => {
            check_pair(z_t0, z_t1)?;
            reconstruct(z_t0, tau, schedule, model, capture, noise, inversion)
        }
    }
}
