use super::{Graph, Real, Var};
use crate::error::{Error, Result};

/// LSTM parameters placed in a graph. Gate rows are ordered input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `[4u, d]`
    pub w_ih: Var,
    /// `[4u, u]`
    pub w_hh: Var,
    /// `[4u]`
    pub bias: Var,
}

impl LstmVars {
    pub fn hidden<T: Real>(&self, g: &Graph<T>) -> usize {
        g.shape(self.w_hh)[1]
    }
}

/// One LSTM step from a raw input `x_t` of width `d`.
pub fn lstm_step<T: Real>(
    g: &mut Graph<T>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let proj = g.dense(x_t, p.w_ih, Some(p.bias))?;
    lstm_step_projected(g, proj, h_prev, c_prev, p.w_hh)
}

/// One LSTM step where `x_proj = W_ih x_t + b` (width `4u`) is already computed,
/// so a whole sequence can be projected with a single matrix product.
pub fn lstm_step_projected<T: Real>(
    g: &mut Graph<T>,
    x_proj: Var,
    h_prev: Var,
    c_prev: Var,
    w_hh: Var,
) -> Result<(Var, Var)> {
    let u = g.shape(w_hh)[1];
    if g.shape(w_hh) != [4 * u, u] {
        return Err(Error::dim(format!("w_hh shape {:?}", g.shape(w_hh))));
    }
    if g.shape(x_proj) != [4 * u] || g.shape(h_prev) != [u] || g.shape(c_prev) != [u] {
        return Err(Error::dim(format!(
            "lstm step: projection {:?}, h {:?}, c {:?} for {u} units",
            g.shape(x_proj),
            g.shape(h_prev),
            g.shape(c_prev)
        )));
    }
    let rec = g.dense(h_prev, w_hh, None)?;
    let pre = g.add(x_proj, rec)?;
    let i = g.slice(pre, 0, u)?;
    let f = g.slice(pre, u, u)?;
    let cand = g.slice(pre, 2 * u, u)?;
    let o = g.slice(pre, 3 * u, u)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn vars(g: &mut Graph<f64>, d: usize, u: usize, bias: Vec<f64>) -> LstmVars {
        LstmVars {
            w_ih: g.input(Tensor::zeros(&[4 * u, d])),
            w_hh: g.input(Tensor::zeros(&[4 * u, u])),
            bias: g.input(Tensor::new(vec![4 * u], bias).unwrap()),
        }
    }

    #[test]
    fn zero_parameters_give_zero_hidden() {
        let mut g = Graph::<f64>::new();
        let p = vars(&mut g, 3, 2, vec![0.0; 8]);
        let x = g.constant(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let h0 = g.constant(Tensor::zeros(&[2]));
        let c0 = g.constant(Tensor::zeros(&[2]));
        let (h, c) = lstm_step(&mut g, x, h0, c0, &p).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let u = 3;
        let mut bias = vec![0.0; 4 * u];
        bias[u..2 * u].iter_mut().for_each(|b| *b = 100.0);
        let mut g = Graph::<f64>::new();
        let p = vars(&mut g, 2, u, bias);
        let x = g.constant(Tensor::from_f64(&[2], &[0.3, 0.9]).unwrap());
        let h0 = g.constant(Tensor::zeros(&[u]));
        let c0 = g.constant(Tensor::from_f64(&[u], &[0.5, -1.5, 2.0]).unwrap());
        let (_, c) = lstm_step(&mut g, x, h0, c0, &p).unwrap();
        for (a, b) in g.value(c).data().iter().zip([0.5, -1.5, 2.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::<f64>::new();
        let p = vars(&mut g, 3, 2, vec![0.0; 8]);
        let x = g.constant(Tensor::zeros(&[4]));
        let h0 = g.constant(Tensor::zeros(&[2]));
        let c0 = g.constant(Tensor::zeros(&[2]));
        assert!(lstm_step(&mut g, x, h0, c0, &p).is_err());
    }
}
