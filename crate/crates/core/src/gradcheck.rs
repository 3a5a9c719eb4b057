//! Central-difference gradient checking against the tape.
//!
//! Numeric derivatives only ever call the forward closure, so they stay
//! independent of the backward rules they are checking. Probes run in
//! parallel, each on its own tape and its own copy of the parameters.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Var};

/// One probed parameter entry.
#[derive(Clone, Debug)]
pub struct Probe {
    pub param: ParamId,
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|analytic - numeric| / max(1, |analytic|)`.
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(1.0)
    }
}

/// Pins a closure to the signature the checkers expect, so its lifetimes
/// are inferred as higher-ranked.
pub fn loss_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    f
}

/// Evaluate the scalar loss without recording gradients.
pub fn loss_value<F>(store: &ParamStore, loss: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind_frozen(&tape);
    Ok(loss(&tape, &bound)?.item())
}

/// Analytic gradient of the loss with respect to every parameter.
pub fn analytic_grads<F>(store: &ParamStore, loss: &F) -> Result<ParamStore>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let mut out = store.clone();
    out.zero_grad();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let l = loss(&tape, &bound)?;
    tape.backward(l)?;
    out.accumulate_grads(&bound)?;
    Ok(out)
}

/// Compare analytic and central-difference derivatives at `probes`.
pub fn check<F>(store: &ParamStore, probes: &[(ParamId, usize)], eps: f64, loss: &F) -> Result<Vec<Probe>>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>> + Sync,
{
    let grads = analytic_grads(store, loss)?;
    probes
        .par_iter()
        .map(|&(id, index)| {
            if index >= store.get(id).numel() {
                return Err(Error::Contract(format!(
                    "probe index {index} outside {}",
                    store.name(id)
                )));
            }
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[index] += eps;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[index] -= eps;
            let numeric = (loss_value(&plus, loss)? - loss_value(&minus, loss)?) / (2.0 * eps);
            Ok(Probe {
                param: id,
                name: store.name(id).to_string(),
                index,
                analytic: grads.grad(id).data()[index],
                numeric,
            })
        })
        .collect()
}

/// Largest relative error over a probe set.
pub fn worst(probes: &[Probe]) -> Option<&Probe> {
    probes
        .iter()
        .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
}
