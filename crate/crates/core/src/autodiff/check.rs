use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.item();
    Ok(v)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// Returns the maximum over all parameter entries of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p)).collect();
    let root = f(&tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            probe[p].data_mut()[i] = orig + eps;
            let plus = evaluate(&f, &probe)?;
            probe[p].data_mut()[i] = orig - eps;
            let minus = evaluate(&f, &probe)?;
            probe[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at perturbation of parameter {p}, entry {i}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
