use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares tape gradients of `loss_fn` at `params` with central differences.
///
/// Returns the worst `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`
/// over every parameter entry.
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(out);
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
