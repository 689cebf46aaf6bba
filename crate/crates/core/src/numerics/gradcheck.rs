//! Central finite-difference checks for every differentiable tape primitive.

use super::{finite_difference, relative_error, Tape, Tensor, Var};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Build = for<'t> fn(&'t Tape, Var<'t>, Var<'t>) -> Result<Var<'t>>;

/// Primitive name, input shapes `(x, y)`, whether `x` must be positive, and
/// the scalar-valued builder under test.
const PRIMITIVES: &[(&str, [usize; 2], [usize; 2], bool, Build)] = &[
    ("add", [3, 4], [3, 4], false, |_, x, y| x.add(&y)),
    ("sub", [3, 4], [3, 4], false, |_, x, y| x.sub(&y)),
    ("mul", [3, 4], [3, 4], false, |_, x, y| x.mul(&y)),
    ("scale", [3, 4], [3, 4], false, |_, x, y| Ok(x.scale(-1.7).mul(&y)?)),
    ("add_scalar", [3, 4], [3, 4], false, |_, x, y| x.add_scalar(0.3).mul(&y)),
    ("sqrt", [3, 4], [3, 4], true, |_, x, y| x.sqrt()?.mul(&y)),
    ("exp", [3, 4], [3, 4], false, |_, x, y| x.exp().mul(&y)),
    ("log", [3, 4], [3, 4], true, |_, x, y| x.log()?.mul(&y)),
    ("tanh", [3, 4], [3, 4], false, |_, x, y| x.tanh().mul(&y)),
    ("square", [3, 4], [3, 4], false, |_, x, y| x.square()?.mul(&y)),
    ("reshape", [3, 4], [2, 6], false, |_, x, y| x.reshape(&[2, 6])?.mul(&y)),
    ("transpose", [3, 4], [4, 3], false, |_, x, y| x.transpose()?.mul(&y)),
    ("matmul", [3, 4], [4, 2], false, |_, x, y| x.matmul(&y)),
    ("softmax_rows", [3, 4], [3, 4], false, |_, x, y| x.softmax_rows(0.8)?.mul(&y)),
    ("sum", [3, 4], [3, 4], false, |_, x, y| Ok(x.mul(&y)?.sum())),
    ("mean", [3, 4], [3, 4], false, |_, x, y| Ok(x.mul(&y)?.mean())),
    ("slice", [3, 4], [2, 4], false, |_, x, y| x.slice(0, 1, 2)?.mul(&y)),
    ("split", [3, 4], [3, 3], false, |_, x, y| {
        let parts = x.split(1, &[1, 3])?;
        parts[1].mul(&y)
    }),
    ("concat", [3, 4], [3, 4], false, |_, x, y| {
        let parts = x.split(1, &[2, 2])?;
        Var::concat(&[parts[1].clone(), parts[0].clone()], 1)?.mul(&y)
    }),
];

fn random(rng: &mut ChaCha20Rng, shape: [usize; 2], positive: bool) -> Tensor {
    Tensor::from_fn(&shape, |_| if positive { rng.gen_range(0.5..2.0) } else { rng.gen_range(-1.5..1.5) })
}

/// Worst relative error between tape and finite-difference gradients for
/// both inputs of a primitive, with the output reduced by a weighted sum.
fn check(build: Build, x: &Tensor, y: &Tensor) -> Result<f64> {
    let eval = |xv: &Tensor, yv: &Tensor| -> f64 {
        let tape = Tape::new();
        let out = build(&tape, tape.constant(xv.clone()), tape.constant(yv.clone())).expect("valid shapes");
        let w = Tensor::from_fn(&out.shape(), |i| 0.5 + 0.1 * i as f64);
        out.value().mul(&w).expect("same shape").sum()
    };
    let tape = Tape::new();
    let (xv, yv) = (tape.param(x.clone()), tape.param(y.clone()));
    let out = build(&tape, xv.clone(), yv.clone())?;
    let w = tape.constant(Tensor::from_fn(&out.shape(), |i| 0.5 + 0.1 * i as f64));
    tape.backward(out.mul(&w)?.sum())?;
    let gx = xv.grad().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let gy = yv.grad().unwrap_or_else(|| Tensor::zeros(y.shape()));
    let nx = finite_difference(x, 1e-6, |p| eval(p, y));
    let ny = finite_difference(y, 1e-6, |p| eval(x, p));
    Ok(relative_error(&gx, &nx, 1e-6).max(relative_error(&gy, &ny, 1e-6)))
}

/// Names of the checked primitives, in check order.
pub fn primitive_names() -> Vec<&'static str> {
    PRIMITIVES.iter().map(|p| p.0).collect()
}

/// Relative gradient error of every primitive on inputs drawn from `seed`.
pub fn primitive_gradient_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    PRIMITIVES
        .iter()
        .map(|&(name, xs, ys, positive, build)| {
            let x = random(&mut rng, xs, positive);
            let y = random(&mut rng, ys, false);
            Ok((name, check(build, &x, &y)?))
        })
        .collect()
}
