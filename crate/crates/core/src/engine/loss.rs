//! Training and evaluation losses.

use super::operators::NoiseContext;
use super::process::Trace;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schedule::NoiseSchedule;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("mse of {:?} and {:?}", a.shape(), b.shape())));
    }
    let n = a.len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Mean squared error between the predicted and true next-frame latent.
pub fn interpolation_loss(z_hat_0: &Tensor, z_t1: &Tensor) -> Result<f64> {
    mse(z_hat_0, z_t1)
}

/// `targets[j] = Q(z_t1, j)` for `j = 0 .. T-1`.
pub fn reconstruction_targets(z_t1: &Tensor, schedule: &NoiseSchedule, noise: &NoiseContext) -> Result<Vec<Tensor>> {
    (0..schedule.steps()).map(|j| noise.q_pass(schedule, z_t1, j)).collect()
}

/// Sum over steps `k = T..1` of `mse(z_{k-1}, targets[k-1])`, plus
/// `mse(z_0, image_target)` when an image-space target is given (the codec
/// is a permutation, so latent and pixel MSE coincide).
pub fn reconstruction_loss(trace: &Trace, targets: &[Tensor], image_target: Option<&Tensor>) -> Result<f64> {
    let t = trace.steps();
    if targets.len() != t {
        return Err(Error::Contract(format!("{} targets for a {t}-step trace", targets.len())));
    }
    let mut total = 0.0;
    for (j, target) in targets.iter().enumerate() {
        total += mse(trace.state(j), target)?;
    }
    if let Some(img) = image_target {
        total += mse(trace.final_latent(), img)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_arithmetic() {
        let a = Tensor::scalar(0.0);
        let b = Tensor::scalar(2.0);
        assert_eq!(interpolation_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(interpolation_loss(&a, &b).unwrap(), 4.0);
    }

    #[test]
    fn single_step_reduces_to_interpolation_loss() {
        let s0 = Tensor::from_fn(&[2, 3], |i| i as f64);
        let s1 = Tensor::from_fn(&[2, 3], |i| 1.0 - i as f64);
        let trace = Trace { states: vec![s0.clone(), s1], outputs: vec![], records: vec![], evals: 1 };
        let target = Tensor::from_fn(&[2, 3], |i| (i * i) as f64 / 7.0);
        let r = reconstruction_loss(&trace, &[target.clone()], None).unwrap();
        assert_eq!(r, interpolation_loss(&s0, &target).unwrap());
        assert!(matches!(reconstruction_loss(&trace, &[], None), Err(Error::Contract(_))));
    }
}
