use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between the tape gradient of `f` and
/// central finite differences with step `h`, over every element of every
/// parameter:
///
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e−12)`.
///
/// `f` must rebuild its graph from the supplied parameter handles and return
/// a scalar.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {h} must be positive")));
    }
    let analytic = analytic_gradients(&f, params)?;

    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            probe[p].data_mut()[i] = orig + h;
            let up = evaluate(&f, &probe)?;
            probe[p].data_mut()[i] = orig - h;
            let down = evaluate(&f, &probe)?;
            probe[p].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Value of `f` at `params` on a fresh tape.
pub fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Tape gradients of `f` for each parameter.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| grads.take(v).expect("leaf gradient is always filled"))
        .collect())
}
