//! Optimizer step shared by every trainer.

use acdg_grad::{Adam, Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backpropagates `loss` and applies one Adam update to `store`.
///
/// Returns `(loss, pre-clip gradient norm)`; a non-finite loss or gradient
/// aborts with the step number in the message.
pub fn adam_step(
    g: &Graph<f32>,
    loss: Var,
    store: &mut ParamStore<f32>,
    opt: &mut Adam<f32>,
    what: &str,
) -> Result<(f64, f64)> {
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Training(format!("{what}: loss is {value} at step {}", opt.steps_taken())));
    }
    let grads = g.backward(loss)?;
    let mut pg = g.param_grads(&grads, store.len())?;
    let norm = opt.step(store, &mut pg);
    if !norm.is_finite() {
        return Err(Error::Training(format!(
            "{what}: gradient norm is {norm} at step {} (loss {value})",
            opt.steps_taken()
        )));
    }
    Ok((value, norm))
}

/// Per-step losses of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub values: Vec<f64>,
}

impl LossCurve {
    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    /// Mean over `range` (clamped to the recorded steps).
    pub fn mean(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.values.len());
        let start = range.start.min(end);
        let s = &self.values[start..end];
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}
