//! Central finite-difference gradient checking in f64.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Norm-based relative error between analytic and numeric gradients of the
/// scalar `f(inputs)`, over all inputs jointly:
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::invalid("gradcheck needs a scalar output"));
    }
    g.backward(out)?;

    let mut analytic = Vec::new();
    for (t, &v) in inputs.iter().zip(&vars) {
        match g.grad(v) {
            Some(gr) => analytic.extend_from_slice(gr),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    Ok(norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-8))
}

/// `sum(w * x)` with fixed weights, turning any tensor into a scalar whose
/// gradient exercises every output element.
pub fn weighted_sum(g: &mut Graph<f64>, x: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(x, w)?;
    g.sum_all(prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let ok = gradcheck(std::slice::from_ref(&x), FD_STEP, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum_all(sq)
        })
        .unwrap();
        assert!(ok < 1e-8, "{ok}");
    }
}
