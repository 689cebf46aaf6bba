//! Dense tensor kernel with a reverse-mode autodiff tape.

pub mod gradcheck;
pub mod io;
mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Central finite-difference gradient of a scalar function, step `h`.
///
/// Evaluates `f` only; shares no code with [`Tape::backward`].
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Max elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
