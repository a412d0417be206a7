//! Finite-difference verification of the analytic gradient, end to end
//! through the CTC loss. Small models only: cost is two forwards per
//! parameter.

use crate::ctc::{ctc_grad, ctc_loss};
use crate::error::Result;
use crate::imaging::{FrameSequence, PriorMap};
use crate::model::{backward_sequence, forward_sequence, ModelParams};

const FD_STEP: f64 = 1e-4;
/// Relative-error floor: differences below this absolute scale are noise.
const REL_FLOOR: f64 = 1e-4;

fn check_inner(
    params: &ModelParams,
    frames: &FrameSequence,
    priors: &[PriorMap],
    target: &[usize],
    corrupt: Option<usize>,
) -> Result<f64> {
    let out = forward_sequence(params, frames, priors)?;
    let d_logits = ctc_grad(&out.posteriors, target)?;
    let grads = backward_sequence(params, &out.cache, &d_logits)?;
    let mut analytic = grads.flatten(&params.config);
    if let Some(i) = corrupt {
        let at = i % analytic.len();
        analytic[at] += 1.0;
    }

    let theta = params.t.flatten(&params.config);
    let mut scratch = params.clone();
    let mut flat = theta.clone();
    let mut loss_at = |flat: &[f64]| -> Result<f64> {
        scratch.t.assign_flat(flat)?;
        let out = forward_sequence(&scratch, frames, priors)?;
        ctc_loss(&out.posteriors, target)
    };
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        flat[i] = theta[i] + FD_STEP;
        let lp = loss_at(&flat)?;
        flat[i] = theta[i] - FD_STEP;
        let lm = loss_at(&flat)?;
        flat[i] = theta[i];
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Max relative error between the analytic gradient and central finite
/// differences of the CTC loss, over every parameter.
pub fn finite_diff_check(
    params: &ModelParams,
    frames: &FrameSequence,
    priors: &[PriorMap],
    target: &[usize],
) -> Result<f64> {
    check_inner(params, frames, priors, target, None)
}

/// Same check with 1.0 added to one analytic gradient entry; a sensitivity
/// control that must report a large error.
pub fn finite_diff_check_corrupted(
    params: &ModelParams,
    frames: &FrameSequence,
    priors: &[PriorMap],
    target: &[usize],
    corrupt_index: usize,
) -> Result<f64> {
    check_inner(params, frames, priors, target, Some(corrupt_index))
}
