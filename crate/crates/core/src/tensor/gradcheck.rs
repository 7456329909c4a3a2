use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients whose magnitude falls below this are compared in absolute terms.
const NOISE_FLOOR: f64 = 1e-3;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences with step `h`, over every coordinate of every input.
///
/// Returns the maximum of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(NOISE_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::dim(format!("grad_check needs a scalar output, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}
