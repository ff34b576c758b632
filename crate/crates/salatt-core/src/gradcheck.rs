//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Relative error with a floored denominator, so that near-zero gradients do
/// not blow the ratio up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the tape gradient of a scalar function against central finite
/// differences, coordinate by coordinate. `build` receives a fresh tape and
/// the input leaf and must return a scalar root. Returns the worst relative
/// error over all coordinates.
pub fn grad_check<F>(build: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let eval = |point: &Tensor| -> Result<(Tape, NodeId, NodeId)> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let root = build(&mut tape, leaf)?;
        let v = tape.value(root);
        if v.len() != 1 {
            return Err(Error::argument(format!(
                "grad_check function must be scalar, got shape {:?}",
                v.shape()
            )));
        }
        if !v.item().is_finite() {
            return Err(Error::Eval(format!(
                "function value {} is not finite",
                v.item()
            )));
        }
        Ok((tape, leaf, root))
    };

    let (tape, leaf, root) = eval(x)?;
    let grads = tape.backward(root)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + h;
        let (tape_plus, _, root_plus) = eval(&probe)?;
        let f_plus = tape_plus.value(root_plus).item();
        probe.data_mut()[i] = original - h;
        let (tape_minus, _, root_minus) = eval(&probe)?;
        let f_minus = tape_minus.value(root_minus).item();
        probe.data_mut()[i] = original;

        let numeric = (f_plus - f_minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
