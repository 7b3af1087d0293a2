//! Central finite-difference verification of tape gradients.

use super::{DenseMatrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

fn evaluate<F>(f: &F, params: &[DenseMatrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.shape() != (1, 1) {
        return Err(Error::shape("grad_check", format!("f returned {:?}", value.shape())));
    }
    let v = value.get(0, 0);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("f evaluated to {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar expression `f` against
/// central differences with step `h`, over every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[DenseMatrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out);
    if base.shape() != (1, 1) || !base.get(0, 0).is_finite() {
        return Err(Error::NonFinite(format!("f at params: {base:?}")));
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut count = 0;
    let mut perturbed: Vec<DenseMatrix> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..params[pi].len() {
            let orig = params[pi].as_slice()[k];
            perturbed[pi].as_mut_slice()[k] = orig + h;
            let plus = evaluate(&f, &perturbed)?;
            perturbed[pi].as_mut_slice()[k] = orig - h;
            let minus = evaluate(&f, &perturbed)?;
            perturbed[pi].as_mut_slice()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic.as_slice()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            count += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        entries_checked: count,
    })
}
