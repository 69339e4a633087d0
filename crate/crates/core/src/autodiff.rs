//! Gradient entry points over recorded circuit objectives.

use crate::circuit::Circuit;
use crate::error::Result;
use crate::recorder::Recorder;
use crate::tape::{Tape, VarId};

/// Exact reverse-mode gradient of a recorded scalar with respect to every
/// registered input, in flat [`crate::params::ParameterView`] order.
pub fn grad(tape: &Tape, objective: VarId) -> Result<Vec<f64>> {
    tape.gradient(objective)
}

/// Central-difference check of the analytic gradient of an objective.
///
/// `objective` records the scalar of interest on a fresh recorder; it is
/// called once for the analytic gradient and twice per parameter for the
/// numeric one. Returns the maximum relative error over all parameters,
/// using max(1e-8, |analytic|) as the denominator. The circuit's parameters
/// are restored before returning.
pub fn finite_diff_check<F>(circuit: &mut Circuit, h: f64, mut objective: F) -> Result<f64>
where
    F: FnMut(&mut Recorder) -> Result<VarId>,
{
    assert!(h > 0.0, "step must be positive");
    let (analytic, theta, view) = {
        let mut rec = Recorder::new(circuit)?;
        let obj = objective(&mut rec)?;
        let g = rec.tape.gradient(obj)?;
        let view = rec.view().clone();
        let theta = view.flatten(circuit);
        (g, theta, view)
    };

    let mut eval_at = |circuit: &mut Circuit, params: &[f64]| -> Result<f64> {
        view.write_back(circuit, params);
        let mut rec = Recorder::new(circuit)?;
        let obj = objective(&mut rec)?;
        Ok(rec.value(obj))
    };

    let mut max_rel = 0.0f64;
    let mut perturbed = theta.clone();
    for i in 0..theta.len() {
        perturbed[i] = theta[i] + h;
        let hi = eval_at(circuit, &perturbed)?;
        perturbed[i] = theta[i] - h;
        let lo = eval_at(circuit, &perturbed)?;
        perturbed[i] = theta[i];
        let numeric = (hi - lo) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    view.write_back(circuit, &theta);
    Ok(max_rel)
}
