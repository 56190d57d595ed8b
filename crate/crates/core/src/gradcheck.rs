//! Central-difference gradient checking.

use crate::autodiff::{Graph, NodeId};
use crate::tensor::{Tensor, TensorError};

/// Largest relative disagreement between the analytic gradient of a scalar
/// function and its central difference, with the relative error taken as
/// `|analytic − numeric| / max(1, |analytic|)`.
///
/// `f` receives a fresh graph and the node holding `x` and must return a
/// scalar node.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let analytic = analytic_grad(&f, x)?;
    let numeric = numeric_grad(&f, x, eps)?;
    Ok(max_relative_error(analytic.data(), &numeric))
}

pub fn analytic_grad<F>(f: &F, x: &Tensor) -> Result<Tensor, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = f(&mut g, leaf)?;
    g.backward(out)?;
    Ok(g.grad(leaf).unwrap_or_else(|| Tensor::zeros(x.shape())))
}

pub fn numeric_grad<F>(f: &F, x: &Tensor, eps: f64) -> Result<Vec<f64>, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let eval = |t: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let leaf = g.constant(t);
        let out = f(&mut g, leaf)?;
        Ok(g.value(out).item())
    };
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        out.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![0.0, 4.5, -0.7]]);
        let err = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let grad = analytic_grad(
            &|g: &mut Graph, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &x,
        )
        .unwrap();
        for (d, v) in grad.data().iter().zip(x.data()) {
            assert_eq!(*d, 2.0 * v);
        }
    }

    #[test]
    fn constant_function() {
        let x = Tensor::row(&[1.0, 2.0]);
        let f = |g: &mut Graph, _x: NodeId| Ok(g.constant(Tensor::scalar(3.0)));
        assert_eq!(analytic_grad(&f, &x).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(numeric_grad(&f, &x, 1e-5).unwrap(), vec![0.0, 0.0]);
        assert_eq!(grad_check(f, &x, 1e-5).unwrap(), 0.0);
    }
}
