//! Perturbation response of the interpolation operators.

use super::operators::{is_boundary, operator_step, step_factor, NoiseContext, OperatorKind};
use super::process::interpolate_from;
use crate::denoiser::IdentityNetwork;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCurve {
    pub kind: OperatorKind,
    /// `measured[k - 1]`: `|response at z_{k-1}| / delta` for a kick at `z_k`.
    pub measured: Vec<f64>,
    /// Analytic step factors in the same layout.
    pub analytic: Vec<f64>,
    /// Response of `z_0` to a kick at `z_T` over a full identity pass.
    pub cumulative: f64,
    /// Product of the analytic step factors.
    pub cumulative_analytic: f64,
}

/// Kicks `z_k` by `delta` and measures the response one step and one full
/// pass later, on scalar latents `z_t0 = 0`, `z_t1 = 1`.
pub fn stability_probe(kind: OperatorKind, schedule: &NoiseSchedule, delta: f64) -> Result<StabilityCurve> {
    if !(delta > 0.0) {
        return Err(Error::Contract(format!("perturbation must be > 0, got {delta}")));
    }
    let t = schedule.steps();
    let noise = NoiseContext { seed: 0 };
    let z0 = Tensor::new(vec![1], vec![0.0])?;
    let z1 = Tensor::new(vec![1], vec![1.0])?;
    let tau = Tensor::zeros(&[1, 1]);
    let clean = interpolate_from(z0.clone(), &z0, &z1, &tau, schedule, kind, &IdentityNetwork, false, &noise)?;
    let mut measured = Vec::with_capacity(t);
    let mut analytic = Vec::with_capacity(t);
    for k in 1..=t {
        let f = step_factor(kind, schedule, k);
        analytic.push(f);
        if is_boundary(kind, schedule, k) {
            measured.push(0.0);
            continue;
        }
        let base = clean.state(k);
        let kicked = base.map(|v| v + delta);
        let a = operator_step(kind, base, &z0, &z1, schedule, k, &noise)?;
        let b = operator_step(kind, &kicked, &z0, &z1, schedule, k, &noise)?;
        measured.push(a.max_abs_diff(&b)? / delta);
    }
    let kicked = z0.map(|v| v + delta);
    let moved = interpolate_from(kicked, &z0, &z1, &tau, schedule, kind, &IdentityNetwork, false, &noise)?;
    let cumulative = moved.final_latent().max_abs_diff(clean.final_latent())? / delta;
    Ok(StabilityCurve { kind, measured, cumulative_analytic: analytic.iter().product(), analytic, cumulative })
}
