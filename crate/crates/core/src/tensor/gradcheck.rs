//! Central finite-difference gradient checking.

use super::tape::{Graph, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Compare the tape gradient of a scalar function against central
/// differences and return the largest relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` receives a fresh graph and one leaf per entry of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Input(format!("grad_check eps {eps} outside (0, 1e-3]")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = scalar_value(&g, out)?;
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("f evaluated to {value}")));
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], Tensor::into_data))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = scalar_value(&g, out)?;
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("f evaluated to {v}")));
        }
        Ok(v)
    };

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn scalar_value(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::dim(format!("grad_check needs a scalar output, got {:?}", t.shape())));
    }
    Ok(t.item())
}
