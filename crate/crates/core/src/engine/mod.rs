//! Temporal processes between consecutive frame latents: the four
//! interpolation operators, the interpolation and reconstruction passes,
//! their losses, inplace finetuning, and the operator stability probe.

mod finetune;
mod loss;
mod operators;
mod process;
mod stability;

pub use finetune::{
    finetune, objective_average, objective_gradient, Adam, FinetuneConfig, FinetuneReport, DESK_STEPS, PAPER_LR,
    PAPER_STEPS,
};
pub use loss::{interpolation_loss, mse, reconstruction_loss, reconstruction_targets};
pub use operators::{blend, gain_to_final, is_boundary, operator_step, step_factor, NoiseContext, OperatorKind};
pub use process::{interpolate, interpolate_from, reconstruct, run_process, Inversion, ProcessKind, Trace};
pub use stability::{stability_probe, StabilityCurve};
