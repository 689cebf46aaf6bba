//! The four interpolation operators carrying `z_k` to `z_{k-1}`.
//!
//! `alpha_k = k / T` is the weight of the current-frame latent `z_t0`, so the
//! closed form at step `k` is `alpha_k z_t0 + (1 - alpha_k) z_t1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schedule::{seeded_noise, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Closed-form linear blend; ignores the network output.
    Blend,
    /// Rescales the output's distance from `z_t1`.
    FromNext,
    /// Rescales the output's distance from `z_t0`.
    FromCurrent,
    /// Adds `(z_t1 - z_t0) / T` to the output.
    OffsetClean,
    /// Adds `Q(z_t1, k-1) - Q(z_t0, k)` to the output.
    OffsetNoisy,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::Blend,
        OperatorKind::FromNext,
        OperatorKind::FromCurrent,
        OperatorKind::OffsetClean,
        OperatorKind::OffsetNoisy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Blend => "blend",
            OperatorKind::FromNext => "from_next",
            OperatorKind::FromCurrent => "from_current",
            OperatorKind::OffsetClean => "offset_clean",
            OperatorKind::OffsetNoisy => "offset_noisy",
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Source of the per-step noise used by `Q`; `eps_k` depends only on the
/// seed, the step, and the latent shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseContext {
    pub seed: u64,
}

impl NoiseContext {
    pub fn eps(&self, shape: &[usize], k: usize) -> Tensor {
        seeded_noise(shape, self.seed, k)
    }

    /// `Q(z, k)` with this context's `eps_k`.
    pub fn q(&self, schedule: &NoiseSchedule, z: &Tensor, k: usize) -> Result<Tensor> {
        schedule.q_sample(z, k, &self.eps(z.shape(), k))
    }

    /// Single draw shared by every step of a deterministic reconstruction pass.
    pub fn pass_eps(&self, shape: &[usize]) -> Tensor {
        seeded_noise(shape, self.seed, 0)
    }

    /// `Q(z, k)` with the shared pass noise.
    pub fn q_pass(&self, schedule: &NoiseSchedule, z: &Tensor, k: usize) -> Result<Tensor> {
        schedule.q_sample(z, k, &self.pass_eps(z.shape()))
    }
}

/// Closed-form blend `alpha_k z_t0 + (1 - alpha_k) z_t1`.
pub fn blend(z_t0: &Tensor, z_t1: &Tensor, schedule: &NoiseSchedule, k: usize) -> Result<Tensor> {
    let a = schedule.weight(k)?;
    z_t0.zip_map(z_t1, "blend", |x, y| a * x + (1.0 - a) * y)
}

/// One operator step from `z_k` (the network output at step `k`) to `z_{k-1}`.
pub fn operator_step(
    kind: OperatorKind,
    z_k: &Tensor,
    z_t0: &Tensor,
    z_t1: &Tensor,
    schedule: &NoiseSchedule,
    k: usize,
    noise: &NoiseContext,
) -> Result<Tensor> {
    if k == 0 || k > schedule.steps() {
        return Err(Error::Index { index: k, bound: schedule.steps() });
    }
    if z_k.shape() != z_t0.shape() || z_t0.shape() != z_t1.shape() {
        return Err(Error::Shape(format!("operator inputs {:?}, {:?}, {:?}", z_k.shape(), z_t0.shape(), z_t1.shape())));
    }
    let (a_prev, a) = (schedule.weight(k - 1)?, schedule.weight(k)?);
    match kind {
        OperatorKind::Blend => blend(z_t0, z_t1, schedule, k - 1),
        OperatorKind::FromNext => {
            if a == 0.0 {
                return Err(Error::Instability { operator: kind.name(), k, divisor: a });
            }
            let r = a_prev / a;
            z_t1.zip_map(z_k, "from_next", |y, z| y + r * (z - y))
        }
        OperatorKind::FromCurrent => {
            if a == 1.0 {
                return Err(Error::Instability { operator: kind.name(), k, divisor: 1.0 - a });
            }
            let r = (1.0 - a_prev) / (1.0 - a);
            z_t0.zip_map(z_k, "from_current", |x, z| x + r * (z - x))
        }
        OperatorKind::OffsetClean => {
            let w = a - a_prev;
            let delta = z_t1.sub(z_t0)?;
            z_k.axpy(w, &delta)
        }
        OperatorKind::OffsetNoisy => {
            let cur = noise.q(schedule, z_t0, k)?;
            let next = noise.q(schedule, z_t1, k - 1)?;
            z_k.sub(&cur)?.add(&next)
        }
    }
}

/// Whether `operator_step` would divide by zero at step `k`; such steps are
/// served by the closed-form blend instead.
pub fn is_boundary(kind: OperatorKind, schedule: &NoiseSchedule, k: usize) -> bool {
    match kind {
        OperatorKind::FromNext => k == 0,
        OperatorKind::FromCurrent => k == schedule.steps(),
        _ => false,
    }
}

/// `d z_{k-1} / d z_k` of one operator step (0 at boundary steps).
pub fn step_factor(kind: OperatorKind, schedule: &NoiseSchedule, k: usize) -> f64 {
    if is_boundary(kind, schedule, k) {
        return 0.0;
    }
    let w = schedule.interp_weights();
    match kind {
        OperatorKind::Blend => 0.0,
        OperatorKind::FromNext => w[k - 1] / w[k],
        OperatorKind::FromCurrent => (1.0 - w[k - 1]) / (1.0 - w[k]),
        OperatorKind::OffsetClean | OperatorKind::OffsetNoisy => 1.0,
    }
}

/// `d z_0 / d (network output at step k)` along an otherwise identity pass.
pub fn gain_to_final(kind: OperatorKind, schedule: &NoiseSchedule, k: usize) -> f64 {
    (1..=k).map(|j| step_factor(kind, schedule, j)).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    fn sched(t: usize) -> NoiseSchedule {
        NoiseSchedule::make_linear(t, 1e-4, 0.02).unwrap()
    }

    const NOISE: NoiseContext = NoiseContext { seed: 0 };

    #[test]
    fn offset_clean_zero_offset_is_fixed_point() {
        let sc = sched(10);
        for k in 1..=10 {
            let out = operator_step(OperatorKind::OffsetClean, &s(0.7), &s(0.7), &s(0.7), &sc, k, &NOISE).unwrap();
            assert_eq!(out, s(0.7));
        }
    }

    #[test]
    fn blend_endpoints() {
        let sc = sched(8);
        assert_eq!(blend(&s(2.0), &s(5.0), &sc, 8).unwrap(), s(2.0));
        assert_eq!(blend(&s(2.0), &s(5.0), &sc, 0).unwrap(), s(5.0));
        assert_eq!(operator_step(OperatorKind::Blend, &s(9.0), &s(2.0), &s(5.0), &sc, 1, &NOISE).unwrap(), s(5.0));
    }

    #[test]
    fn offset_clean_telescopes_in_quarters() {
        let sc = sched(4);
        let mut z = s(0.0);
        let mut seen = Vec::new();
        for k in (1..=4).rev() {
            z = operator_step(OperatorKind::OffsetClean, &z, &s(0.0), &s(1.0), &sc, k, &NOISE).unwrap();
            seen.push(z.data()[0]);
        }
        assert_eq!(seen, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn from_current_at_t_is_unstable() {
        let sc = sched(5);
        let e = operator_step(OperatorKind::FromCurrent, &s(0.0), &s(0.0), &s(1.0), &sc, 5, &NOISE);
        assert!(matches!(e, Err(Error::Instability { k: 5, .. })));
        assert!(is_boundary(OperatorKind::FromCurrent, &sc, 5));
        assert!(!is_boundary(OperatorKind::FromNext, &sc, 1));
    }

    #[test]
    fn step_index_checked() {
        let sc = sched(3);
        assert!(matches!(
            operator_step(OperatorKind::Blend, &s(0.0), &s(0.0), &s(1.0), &sc, 0, &NOISE),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn offset_noisy_literal() {
        let sc = sched(6);
        let (z0, z1, zk) = (s(0.3), s(-0.4), s(1.1));
        let got = operator_step(OperatorKind::OffsetNoisy, &zk, &z0, &z1, &sc, 4, &NOISE).unwrap();
        let want = 1.1 - NOISE.q(&sc, &z0, 4).unwrap().data()[0] + NOISE.q(&sc, &z1, 3).unwrap().data()[0];
        assert_eq!(got.data()[0], want);
    }
}
