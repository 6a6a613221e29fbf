use super::{Graph, Tensor, Var};
use crate::error::{param_err, Result};

fn eval_scalar<F>(f: &mut F, point: &Tensor, requires_grad: bool) -> Result<(Graph, Var, Var)>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone(), requires_grad)?;
    let out = f(&mut g, x)?;
    if g.value(out).numel() != 1 {
        return Err(param_err!(
            "grad_check needs a scalar function, got shape {:?}",
            g.value(out).shape()
        ));
    }
    Ok((g, x, out))
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences and returns the worst relative error
/// `|a − n| / max(|a|, |n|, 1e-8)` over all elements of `x`.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(param_err!("finite-difference step must be positive"));
    }
    let (mut g, xv, out) = eval_scalar(&mut f, x, true)?;
    g.backward(out)?;
    let analytic = g.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let (g, _, out) = eval_scalar(&mut f, &probe, false)?;
        let plus = g.value(out).data()[0];
        probe.data_mut()[i] = orig - h;
        let (g, _, out) = eval_scalar(&mut f, &probe, false)?;
        let minus = g.value(out).data()[0];
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
