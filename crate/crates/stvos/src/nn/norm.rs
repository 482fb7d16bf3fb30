//! Batch normalization over `(N, C, H, W)` activations.

use ndarray::{Array1, ArrayD, Axis};

use super::graph::{Graph, NodeId};
use super::ops::dims4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch statistics produced by a training-mode forward, to be
/// folded into the running statistics after the step.
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

fn channel_moments(x: &ArrayD<f64>) -> (Array1<f64>, Array1<f64>) {
    let (n, c, h, w) = dims4(x);
    let m = (n * h * w) as f64;
    let mut mean = Array1::<f64>::zeros(c);
    let mut var = Array1::<f64>::zeros(c);
    for ci in 0..c {
        let lane = x.index_axis(Axis(1), ci);
        let mu = lane.sum() / m;
        mean[ci] = mu;
        var[ci] = lane.fold(0.0, |acc, &v| acc + (v - mu) * (v - mu)) / m;
    }
    (mean, var)
}

/// Training-mode batch norm: normalizes with batch statistics and reports
/// them so the caller can update the running estimates.
pub fn batch_norm_train(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
) -> (NodeId, BatchStats) {
    let xv = g.value_rc(x);
    let gv = g.value_rc(gamma);
    let bv = g.value(beta);
    let (n, c, h, w) = dims4(&xv);
    let m = (n * h * w) as f64;
    let (mean, var) = channel_moments(&xv);

    let mut out = ArrayD::<f64>::zeros(xv.raw_dim());
    for ci in 0..c {
        let invstd = 1.0 / (var[ci] + BN_EPS).sqrt();
        let (ga, be, mu) = (gv[[ci]], bv[[ci]], mean[ci]);
        let src = xv.index_axis(Axis(1), ci);
        let mut dst = out.index_axis_mut(Axis(1), ci);
        dst.zip_mut_with(&src, |d, &s| *d = ga * (s - mu) * invstd + be);
    }

    let stats = BatchStats {
        mean: mean.clone(),
        var: var.clone(),
    };
    let node = g.op(
        out,
        vec![x, gamma, beta],
        Box::new(move |go| {
            let mut gx = ArrayD::<f64>::zeros(xv.raw_dim());
            let mut ggamma = Array1::<f64>::zeros(c);
            let mut gbeta = Array1::<f64>::zeros(c);
            for ci in 0..c {
                let invstd = 1.0 / (var[ci] + BN_EPS).sqrt();
                let mu = mean[ci];
                let ga = gv[[ci]];
                let xs = xv.index_axis(Axis(1), ci);
                let gos = go.index_axis(Axis(1), ci);
                let mut sum_go = 0.0;
                let mut sum_go_xhat = 0.0;
                ndarray::Zip::from(&gos).and(&xs).for_each(|&gg, &xx| {
                    sum_go += gg;
                    sum_go_xhat += gg * (xx - mu) * invstd;
                });
                ggamma[ci] = sum_go_xhat;
                gbeta[ci] = sum_go;
                // dx = (gamma*invstd/m) * (m*go - sum_go - xhat * sum_go_xhat)
                let mut dst = gx.index_axis_mut(Axis(1), ci);
                ndarray::Zip::from(&mut dst)
                    .and(&gos)
                    .and(&xs)
                    .for_each(|d, &gg, &xx| {
                        let xhat = (xx - mu) * invstd;
                        *d = ga * invstd / m * (m * gg - sum_go - xhat * sum_go_xhat);
                    });
            }
            vec![Some(gx), Some(ggamma.into_dyn()), Some(gbeta.into_dyn())]
        }),
    );
    (node, stats)
}

/// Evaluation-mode batch norm using fixed running statistics.
pub fn batch_norm_eval(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
) -> NodeId {
    let xv = g.value_rc(x);
    let gv = g.value_rc(gamma);
    let bv = g.value(beta);
    let (_, c, _, _) = dims4(&xv);
    let mean = running_mean.clone();
    let invstd: Array1<f64> = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

    let mut out = ArrayD::<f64>::zeros(xv.raw_dim());
    for ci in 0..c {
        let (ga, be, mu, is) = (gv[[ci]], bv[[ci]], mean[ci], invstd[ci]);
        let src = xv.index_axis(Axis(1), ci);
        let mut dst = out.index_axis_mut(Axis(1), ci);
        dst.zip_mut_with(&src, |d, &s| *d = ga * (s - mu) * is + be);
    }

    g.op(
        out,
        vec![x, gamma, beta],
        Box::new(move |go| {
            let mut gx = ArrayD::<f64>::zeros(xv.raw_dim());
            let mut ggamma = Array1::<f64>::zeros(c);
            let mut gbeta = Array1::<f64>::zeros(c);
            for ci in 0..c {
                let (ga, mu, is) = (gv[[ci]], mean[ci], invstd[ci]);
                let xs = xv.index_axis(Axis(1), ci);
                let gos = go.index_axis(Axis(1), ci);
                let mut dst = gx.index_axis_mut(Axis(1), ci);
                ndarray::Zip::from(&mut dst)
                    .and(&gos)
                    .and(&xs)
                    .for_each(|d, &gg, &xx| {
                        *d = gg * ga * is;
                        ggamma[ci] += gg * (xx - mu) * is;
                        gbeta[ci] += gg;
                    });
            }
            vec![Some(gx), Some(ggamma.into_dyn()), Some(gbeta.into_dyn())]
        }),
    )
}

/// Fold batch statistics into running estimates:
/// `r <- (1 - momentum) * r + momentum * batch`.
pub fn update_running(running: &mut Array1<f64>, batch: &Array1<f64>) {
    running.zip_mut_with(batch, |r, &b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use crate::nn::ops::{mul, sum_all};
    use ndarray::{ArrayD, IxDyn};

    fn wavy(shape: &[usize]) -> ArrayD<f64> {
        let mut k = 0.0_f64;
        ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            k += 1.0;
            (k * 1.13).cos() * 0.9 + 0.2
        })
    }

    #[test]
    fn train_mode_normalizes_channels() {
        let mut g = Graph::new();
        let x = g.constant(wavy(&[2, 3, 4, 4]));
        let gamma = g.constant(ArrayD::from_elem(IxDyn(&[3]), 1.0));
        let beta = g.constant(ArrayD::zeros(IxDyn(&[3])));
        let (y, stats) = batch_norm_train(&mut g, x, gamma, beta);
        let v = g.value(y);
        let (mean, var) = channel_moments(v);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-10);
            assert!((var[c] - 1.0).abs() < 1e-4); // off by var/(var+eps)
            assert!(stats.var[c] > 0.0);
        }
    }

    #[test]
    fn train_mode_grads() {
        let x = wavy(&[2, 2, 3, 3]);
        let gamma = ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.2, 0.7]).unwrap();
        let beta = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.1, -0.3]).unwrap();
        // weight the output so the gradient is not spatially uniform
        let wgt = wavy(&[2, 2, 3, 3]).mapv(|v| v + 1.5);
        check_grads(
            &[x, gamma, beta],
            move |g, inputs| {
                let (y, _) = batch_norm_train(g, inputs[0], inputs[1], inputs[2]);
                let w = g.constant(wgt.clone());
                let yw = mul(g, y, w);
                sum_all(g, yw)
            },
            1e-5,
            1e-5,
        );
    }

    #[test]
    fn eval_mode_grads() {
        let x = wavy(&[1, 2, 4, 4]);
        let gamma = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.9, 1.4]).unwrap();
        let beta = ArrayD::from_shape_vec(IxDyn(&[2]), vec![-0.2, 0.4]).unwrap();
        let rm = Array1::from_vec(vec![0.1, -0.1]);
        let rv = Array1::from_vec(vec![0.8, 1.3]);
        check_grads(
            &[x, gamma, beta],
            move |g, inputs| {
                let y = batch_norm_eval(g, inputs[0], inputs[1], inputs[2], &rm, &rv);
                sum_all(g, y)
            },
            1e-5,
            1e-6,
        );
    }
}
