//! Central finite-difference gradient checking.
//!
//! The numeric side only ever re-evaluates the forward pass on perturbed
//! inputs, so it stays independent of the backward implementations it is
//! used to verify.

use ndarray::ArrayD;

use super::graph::{Graph, NodeId};

/// Evaluate `f` as a pure function of `inputs` (all treated as constants)
/// and return the scalar output.
pub fn eval_scalar<F>(inputs: &[ArrayD<f64>], f: &F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    let out = f(&mut g, &ids);
    g.scalar(out)
}

/// Central-difference gradient of `f` with respect to `inputs[which]`.
pub fn numeric_gradient<F>(
    inputs: &[ArrayD<f64>],
    which: usize,
    f: &F,
    eps: f64,
) -> ArrayD<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut grad = ArrayD::zeros(inputs[which].raw_dim());
    let flat_len = inputs[which].len();
    for i in 0..flat_len {
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        plus[which].as_slice_mut().unwrap()[i] += eps;
        minus[which].as_slice_mut().unwrap()[i] -= eps;
        let fp = eval_scalar(&plus, f);
        let fm = eval_scalar(&minus, f);
        grad.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Relative error with a floor so near-zero gradients compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-6)
}

/// Build the graph with `inputs` as leaves, backprop the scalar output and
/// assert every analytic gradient matches central differences.
pub fn check_grads<F>(inputs: &[ArrayD<f64>], f: F, eps: f64, tol: f64)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let worst = max_grad_error(inputs, &f, eps);
    assert!(
        worst < tol,
        "gradient check failed: max relative error {worst:.3e} >= {tol:.1e}"
    );
}

/// Worst relative error over all inputs and elements.
pub fn max_grad_error<F>(inputs: &[ArrayD<f64>], f: &F, eps: f64) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&mut g, &ids);
    let grads = g.backward(out);

    let mut worst = 0.0f64;
    for (which, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(inputs[which].raw_dim()));
        let numeric = numeric_gradient(inputs, which, f, eps);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    worst
}
