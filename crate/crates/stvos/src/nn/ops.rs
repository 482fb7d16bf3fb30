//! Elementwise, reduction and shape ops on graph nodes.

use ndarray::{ArrayD, Axis, IxDyn};

use super::graph::{Graph, NodeId};

pub fn add(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let av = g.value(a);
    let bv = g.value(b);
    assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
    let out = av + bv;
    g.op(
        out,
        vec![a, b],
        Box::new(move |go| vec![Some(go.clone()), Some(go.clone())]),
    )
}

pub fn sub(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let av = g.value(a);
    let bv = g.value(b);
    assert_eq!(av.shape(), bv.shape(), "sub: shape mismatch");
    let out = av - bv;
    g.op(
        out,
        vec![a, b],
        Box::new(move |go| vec![Some(go.clone()), Some(-go)]),
    )
}

pub fn mul(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let av = g.value_rc(a);
    let bv = g.value_rc(b);
    assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
    let out = &*av * &*bv;
    g.op(
        out,
        vec![a, b],
        Box::new(move |go| vec![Some(go * &*bv), Some(go * &*av)]),
    )
}

pub fn neg(g: &mut Graph, a: NodeId) -> NodeId {
    let out = -g.value(a);
    g.op(out, vec![a], Box::new(move |go| vec![Some(-go)]))
}

pub fn scale(g: &mut Graph, a: NodeId, c: f64) -> NodeId {
    let out = g.value(a) * c;
    g.op(out, vec![a], Box::new(move |go| vec![Some(go * c)]))
}

pub fn add_scalar(g: &mut Graph, a: NodeId, c: f64) -> NodeId {
    let out = g.value(a) + c;
    g.op(out, vec![a], Box::new(move |go| vec![Some(go.clone())]))
}

pub fn relu(g: &mut Graph, a: NodeId) -> NodeId {
    let av = g.value_rc(a);
    let out = av.mapv(|v| v.max(0.0));
    g.op(
        out,
        vec![a],
        Box::new(move |go| {
            let mut gx = go.clone();
            gx.zip_mut_with(&av, |gv, &x| {
                if x <= 0.0 {
                    *gv = 0.0;
                }
            });
            vec![Some(gx)]
        }),
    )
}

pub fn tanh(g: &mut Graph, a: NodeId) -> NodeId {
    let out = g.value(a).mapv(f64::tanh);
    let out_c = out.clone();
    g.op(
        out,
        vec![a],
        Box::new(move |go| {
            let mut gx = go.clone();
            gx.zip_mut_with(&out_c, |gv, &y| *gv *= 1.0 - y * y);
            vec![Some(gx)]
        }),
    )
}

pub fn log(g: &mut Graph, a: NodeId) -> NodeId {
    let av = g.value_rc(a);
    let out = av.mapv(f64::ln);
    g.op(
        out,
        vec![a],
        Box::new(move |go| {
            let mut gx = go.clone();
            gx.zip_mut_with(&av, |gv, &x| *gv /= x);
            vec![Some(gx)]
        }),
    )
}

/// Clamp to `[lo, hi]`; gradient passes only where the input was in range.
pub fn clamp(g: &mut Graph, a: NodeId, lo: f64, hi: f64) -> NodeId {
    let av = g.value_rc(a);
    let out = av.mapv(|v| v.clamp(lo, hi));
    g.op(
        out,
        vec![a],
        Box::new(move |go| {
            let mut gx = go.clone();
            gx.zip_mut_with(&av, |gv, &x| {
                if x < lo || x > hi {
                    *gv = 0.0;
                }
            });
            vec![Some(gx)]
        }),
    )
}

pub fn sum_all(g: &mut Graph, a: NodeId) -> NodeId {
    let shape: Vec<usize> = g.value(a).shape().to_vec();
    let out = ArrayD::from_elem(IxDyn(&[]), g.value(a).sum());
    g.op(
        out,
        vec![a],
        Box::new(move |go| {
            let s = go[[]];
            vec![Some(ArrayD::from_elem(IxDyn(&shape), s))]
        }),
    )
}

pub fn mean_all(g: &mut Graph, a: NodeId) -> NodeId {
    let n = g.value(a).len() as f64;
    let s = sum_all(g, a);
    scale(g, s, 1.0 / n)
}

/// Softmax along `axis`.
pub fn softmax(g: &mut Graph, a: NodeId, axis: usize) -> NodeId {
    let av = g.value(a);
    let mut out = av.clone();
    let ax = Axis(axis);
    for mut lane in out.lanes_mut(ax) {
        let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in lane.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in lane.iter_mut() {
            *v /= z;
        }
    }
    let out_c = out.clone();
    g.op(
        out,
        vec![a],
        Box::new(move |go| {
            // dx = y * (go - sum(go * y, axis))
            let mut gx = go * &out_c;
            let dot = gx.sum_axis(Axis(axis)).insert_axis(Axis(axis));
            gx = &out_c * &(go - &dot);
            vec![Some(gx)]
        }),
    )
}

/// Concatenate along the channel axis (axis 1 of NCHW tensors).
pub fn concat_channels(g: &mut Graph, parts: &[NodeId]) -> NodeId {
    assert!(!parts.is_empty());
    let views: Vec<_> = parts.iter().map(|&p| g.value(p).view()).collect();
    let out = ndarray::concatenate(Axis(1), &views).expect("concat_channels: shape mismatch");
    let sizes: Vec<usize> = parts.iter().map(|&p| g.value(p).shape()[1]).collect();
    g.op(
        out,
        parts.to_vec(),
        Box::new(move |go| {
            let mut grads = Vec::with_capacity(sizes.len());
            let mut start = 0;
            for &c in &sizes {
                let slice = go.slice_axis(Axis(1), ndarray::Slice::from(start..start + c));
                grads.push(Some(slice.to_owned()));
                start += c;
            }
            grads
        }),
    )
}

/// Multiply an `(N, C, H, W)` tensor by an `(N, 1, H, W)` map broadcast
/// across channels.
pub fn mul_channel_broadcast(g: &mut Graph, x: NodeId, m: NodeId) -> NodeId {
    let xv = g.value_rc(x);
    let mv = g.value_rc(m);
    assert_eq!(xv.ndim(), 4);
    assert_eq!(mv.ndim(), 4);
    assert_eq!(mv.shape()[1], 1, "mul_channel_broadcast: mask must have 1 channel");
    assert_eq!(xv.shape()[0], mv.shape()[0]);
    assert_eq!(&xv.shape()[2..], &mv.shape()[2..]);
    let out = &*xv * &*mv;
    g.op(
        out,
        vec![x, m],
        Box::new(move |go| {
            let gx = go * &*mv;
            let gm = (go * &*xv)
                .sum_axis(Axis(1))
                .insert_axis(Axis(1));
            vec![Some(gx), Some(gm)]
        }),
    )
}

/// Fully connected layer: `x (N, F) · w^T (F, O) + b (O)`.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xv = g.value_rc(x);
    let wv = g.value_rc(w);
    let bv = g.value(b);
    let x2 = xv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    assert_eq!(x2.shape()[1], w2.shape()[1], "linear: feature mismatch");
    let mut out = x2.dot(&w2.t());
    let b1 = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
    out += &b1;
    g.op(
        out.into_dyn(),
        vec![x, w, b],
        Box::new(move |go| {
            let go2 = go.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let x2 = xv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let gx = go2.dot(&w2).into_dyn();
            let gw = go2.t().dot(&x2).into_dyn();
            let gb = go2.sum_axis(Axis(0)).into_dyn();
            vec![Some(gx), Some(gw), Some(gb)]
        }),
    )
}

/// Mean over spatial dims of `(N, C, H, W)` -> `(N, C)`.
pub fn global_avg_pool(g: &mut Graph, x: NodeId) -> NodeId {
    let xv = g.value(x);
    assert_eq!(xv.ndim(), 4);
    let (n, c, h, w) = dims4(xv);
    let area = (h * w) as f64;
    let out = xv
        .sum_axis(Axis(3))
        .sum_axis(Axis(2))
        .mapv(|v| v / area);
    g.op(
        out,
        vec![x],
        Box::new(move |go| {
            let go2 = go.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let mut gx = ArrayD::zeros(IxDyn(&[n, c, h, w]));
            for ni in 0..n {
                for ci in 0..c {
                    let v = go2[[ni, ci]] / area;
                    gx.slice_mut(ndarray::s![ni, ci, .., ..]).fill(v);
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Select one column of an `(N, K)` tensor -> `(N,)`.
pub fn select_column(g: &mut Graph, x: NodeId, col: usize) -> NodeId {
    let xv = g.value(x);
    assert_eq!(xv.ndim(), 2);
    let (n, k) = (xv.shape()[0], xv.shape()[1]);
    assert!(col < k);
    let out = xv.index_axis(Axis(1), col).to_owned();
    g.op(
        out,
        vec![x],
        Box::new(move |go| {
            let mut gx = ArrayD::zeros(IxDyn(&[n, k]));
            for ni in 0..n {
                gx[[ni, col]] = go[[ni]];
            }
            vec![Some(gx)]
        }),
    )
}

pub(crate) fn dims4(a: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use ndarray::{arr1, arr2, ArrayD, IxDyn};

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(arr2(&[[1.0, 2.0], [0.0, -3.0]]).into_dyn());
        let y = softmax(&mut g, x, 1);
        let v = g.value(y);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        let x0 = arr1(&[0.3, -0.7, 1.2, 0.05]).into_dyn();
        check_grads(
            &[x0],
            |g, inputs| {
                let r = relu(g, inputs[0]);
                let t = tanh(g, r);
                let s = scale(g, t, 1.7);
                let a = add_scalar(g, s, 0.2);
                let l = log(g, a);
                sum_all(g, l)
            },
            1e-6,
            1e-6,
        );
    }

    #[test]
    fn softmax_and_select_grads() {
        let x0 = arr2(&[[0.5, -1.0], [2.0, 0.3], [0.0, 0.0]]).into_dyn();
        check_grads(
            &[x0],
            |g, inputs| {
                let sm = softmax(g, inputs[0], 1);
                let c = clamp(g, sm, 1e-7, 1.0 - 1e-7);
                let p = select_column(g, c, 1);
                let lp = log(g, p);
                let n = neg(g, lp);
                mean_all(g, n)
            },
            1e-6,
            1e-6,
        );
    }

    #[test]
    fn broadcast_mul_grads() {
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 3, 2, 2]), |ix| {
            (ix[0] + 2 * ix[1] + ix[2]) as f64 * 0.3 - ix[3] as f64 * 0.1
        });
        let m = ArrayD::from_shape_fn(IxDyn(&[2, 1, 2, 2]), |ix| 0.2 + (ix[2] + ix[3]) as f64 * 0.25);
        check_grads(
            &[x, m],
            |g, inputs| {
                let y = mul_channel_broadcast(g, inputs[0], inputs[1]);
                sum_all(g, y)
            },
            1e-6,
            1e-7,
        );
    }

    #[test]
    fn linear_grads() {
        let x = arr2(&[[0.1, -0.4, 0.9], [1.2, 0.0, -0.3]]).into_dyn();
        let w = arr2(&[[0.5, -0.2, 0.7], [0.3, 0.9, -0.6]]).into_dyn();
        let b = arr1(&[0.05, -0.15]).into_dyn();
        check_grads(
            &[x, w, b],
            |g, inputs| {
                let y = linear(g, inputs[0], inputs[1], inputs[2]);
                let t = tanh(g, y);
                sum_all(g, t)
            },
            1e-6,
            1e-7,
        );
    }
}
