//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Layouts: activations are `(N, C, H, W)`, convolution weights are
//! `(C_out, C_in, KH, KW)`, transposed-convolution weights are
//! `(C_in, C_out, KH, KW)`.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use super::graph::{Graph, NodeId};
use super::ops::dims4;

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvSpec { stride, padding, dilation }
    }

    pub fn out_size(&self, input: usize, k: usize) -> usize {
        (input + 2 * self.padding - self.dilation * (k - 1) - 1) / self.stride + 1
    }
}

/// Gather patches of `a` into a `(C*KH*KW, N*GH*GW)` matrix, where grid
/// position `(i, j)` reads source pixel `i*stride - pad + k*dilation`.
fn im2col(
    a: &ArrayD<f64>,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    gh: usize,
    gw: usize,
) -> Array2<f64> {
    let (n, c, h, w) = dims4(a);
    let mut cols = Array2::<f64>::zeros((c * kh * kw, n * gh * gw));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let mut out_row = cols.row_mut(row);
                for ni in 0..n {
                    for i in 0..gh {
                        let sy = (i * spec.stride + ky * spec.dilation) as isize
                            - spec.padding as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for j in 0..gw {
                            let sx = (j * spec.stride + kx * spec.dilation) as isize
                                - spec.padding as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            out_row[(ni * gh + i) * gw + j] =
                                a[[ni, ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an `(N, C, H, W)`
/// array.
fn col2im(
    cols: &Array2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    gh: usize,
    gw: usize,
) -> ArrayD<f64> {
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let in_row = cols.row(row);
                for ni in 0..n {
                    for i in 0..gh {
                        let sy = (i * spec.stride + ky * spec.dilation) as isize
                            - spec.padding as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for j in 0..gw {
                            let sx = (j * spec.stride + kx * spec.dilation) as isize
                                - spec.padding as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            out[[ni, ci, sy as usize, sx as usize]] +=
                                in_row[(ni * gh + i) * gw + j];
                        }
                    }
                }
            }
        }
    }
    out
}

fn to_nchw(out2: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> ArrayD<f64> {
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
    for co in 0..c {
        let row = out2.row(co);
        for ni in 0..n {
            for i in 0..h {
                for j in 0..w {
                    out[[ni, co, i, j]] = row[(ni * h + i) * w + j];
                }
            }
        }
    }
    out
}

fn from_nchw(a: &ArrayD<f64>) -> Array2<f64> {
    let (n, c, h, w) = dims4(a);
    let mut out2 = Array2::<f64>::zeros((c, n * h * w));
    for co in 0..c {
        let mut row = out2.row_mut(co);
        for ni in 0..n {
            for i in 0..h {
                for j in 0..w {
                    row[(ni * h + i) * w + j] = a[[ni, co, i, j]];
                }
            }
        }
    }
    out2
}

pub fn conv2d(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec) -> NodeId {
    let xv = g.value_rc(x);
    let wv = g.value_rc(w);
    let bv = g.value(b);
    let (n, cin, h, width) = dims4(&xv);
    let ws = wv.shape();
    let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    assert_eq!(cin, wcin, "conv2d: channel mismatch");
    let gh = spec.out_size(h, kh);
    let gw = spec.out_size(width, kw);

    let cols = im2col(&xv, kh, kw, spec, gh, gw);
    let w2 = wv
        .view()
        .into_shape_with_order((cout, cin * kh * kw))
        .unwrap()
        .to_owned();
    let mut out2 = w2.dot(&cols);
    for co in 0..cout {
        let bias = bv[[co]];
        out2.row_mut(co).mapv_inplace(|v| v + bias);
    }
    let out = to_nchw(&out2, n, cout, gh, gw);

    g.op(
        out,
        vec![x, w, b],
        Box::new(move |go| {
            let go2 = from_nchw(go);
            let w2 = wv
                .view()
                .into_shape_with_order((cout, cin * kh * kw))
                .unwrap();
            // input gradient
            let gcols = w2.t().dot(&go2);
            let gx = col2im(&gcols, n, cin, h, width, kh, kw, spec, gh, gw);
            // weight gradient
            let gw2 = go2.dot(&cols.t());
            let gwt = gw2
                .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
                .unwrap();
            // bias gradient
            let gb = go.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            vec![Some(gx), Some(gwt.into_dyn()), Some(gb.into_dyn())]
        }),
    )
}

/// Transposed convolution. Output size per dim:
/// `(in - 1) * stride - 2 * padding + k + output_padding`.
pub fn conv_transpose2d(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    spec: ConvSpec,
    output_padding: usize,
) -> NodeId {
    assert_eq!(spec.dilation, 1, "conv_transpose2d: dilation unsupported");
    let xv = g.value_rc(x);
    let wv = g.value_rc(w);
    let bv = g.value(b);
    let (n, cin, h, width) = dims4(&xv);
    let ws = wv.shape();
    let (wcin, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    assert_eq!(cin, wcin, "conv_transpose2d: channel mismatch");
    let oh = (h - 1) * spec.stride + kh + output_padding - 2 * spec.padding;
    let ow = (width - 1) * spec.stride + kw + output_padding - 2 * spec.padding;

    let x2 = from_nchw(&xv);
    let w2 = wv
        .view()
        .into_shape_with_order((cin, cout * kh * kw))
        .unwrap()
        .to_owned();
    let cols = w2.t().dot(&x2); // (cout*kh*kw, n*h*width)
    let mut out = col2im(&cols, n, cout, oh, ow, kh, kw, spec, h, width);
    for ni in 0..n {
        for co in 0..cout {
            let bias = bv[[co]];
            out.index_axis_mut(Axis(0), ni)
                .index_axis_mut(Axis(0), co)
                .mapv_inplace(|v| v + bias);
        }
    }

    g.op(
        out,
        vec![x, w, b],
        Box::new(move |go| {
            let gcols = im2col(go, kh, kw, spec, h, width);
            let w2 = wv
                .view()
                .into_shape_with_order((cin, cout * kh * kw))
                .unwrap();
            let gx2 = w2.dot(&gcols);
            let gx = to_nchw(&gx2, n, cin, h, width);
            let x2 = from_nchw(&xv);
            let gw2 = x2.dot(&gcols.t());
            let gwt = gw2
                .into_shape_with_order(IxDyn(&[cin, cout, kh, kw]))
                .unwrap();
            let gb = go.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            vec![Some(gx), Some(gwt.into_dyn()), Some(gb.into_dyn())]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use crate::nn::ops::sum_all;
    use ndarray::ArrayD;

    fn seq_array(shape: &[usize], scale: f64, offset: f64) -> ArrayD<f64> {
        let mut k = 0.0_f64;
        ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            k += 1.0;
            (k * 0.7919).sin() * scale + offset
        })
    }

    #[test]
    fn conv2d_known_value() {
        // 1x1 input channel, 2x2 kernel of ones over a 3x3 ramp, stride 1 pad 0.
        let mut g = Graph::new();
        let x = g.constant(
            ArrayD::from_shape_vec(
                IxDyn(&[1, 1, 3, 3]),
                vec![0., 1., 2., 3., 4., 5., 6., 7., 8.],
            )
            .unwrap(),
        );
        let w = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 1.0));
        let b = g.constant(ArrayD::from_elem(IxDyn(&[1]), 0.5));
        let y = conv2d(&mut g, x, w, b, ConvSpec::new(1, 0, 1));
        let v = g.value(y);
        assert_eq!(v.shape(), &[1, 1, 2, 2]);
        // window sums: 0+1+3+4=8, 1+2+4+5=12, 3+4+6+7=20, 4+5+7+8=24 (+0.5 bias)
        assert_eq!(v[[0, 0, 0, 0]], 8.5);
        assert_eq!(v[[0, 0, 0, 1]], 12.5);
        assert_eq!(v[[0, 0, 1, 0]], 20.5);
        assert_eq!(v[[0, 0, 1, 1]], 24.5);
    }

    #[test]
    fn conv2d_grads_stride2_pad1() {
        let x = seq_array(&[2, 3, 6, 6], 0.8, 0.1);
        let w = seq_array(&[4, 3, 3, 3], 0.4, 0.0);
        let b = seq_array(&[4], 0.2, 0.0);
        check_grads(
            &[x, w, b],
            |g, inputs| {
                let y = conv2d(g, inputs[0], inputs[1], inputs[2], ConvSpec::new(2, 1, 1));
                sum_all(g, y)
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn conv2d_grads_dilated() {
        let x = seq_array(&[1, 2, 7, 7], 0.6, -0.2);
        let w = seq_array(&[3, 2, 3, 3], 0.5, 0.05);
        let b = seq_array(&[3], 0.1, 0.0);
        check_grads(
            &[x, w, b],
            |g, inputs| {
                let y = conv2d(g, inputs[0], inputs[1], inputs[2], ConvSpec::new(1, 2, 2));
                sum_all(g, y)
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn conv_transpose_doubles_resolution() {
        let mut g = Graph::new();
        let x = g.constant(seq_array(&[1, 2, 5, 5], 1.0, 0.0));
        let w = g.constant(seq_array(&[2, 3, 3, 3], 0.3, 0.0));
        let b = g.constant(ArrayD::zeros(IxDyn(&[3])));
        let y = conv_transpose2d(&mut g, x, w, b, ConvSpec::new(2, 1, 1), 1);
        assert_eq!(g.value(y).shape(), &[1, 3, 10, 10]);
    }

    #[test]
    fn conv_transpose_grads() {
        let x = seq_array(&[2, 2, 4, 4], 0.7, 0.0);
        let w = seq_array(&[2, 3, 3, 3], 0.4, -0.1);
        let b = seq_array(&[3], 0.3, 0.0);
        check_grads(
            &[x, w, b],
            |g, inputs| {
                let y = conv_transpose2d(
                    g,
                    inputs[0],
                    inputs[1],
                    inputs[2],
                    ConvSpec::new(2, 1, 1),
                    1,
                );
                sum_all(g, y)
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn conv_transpose_matches_scatter_oracle() {
        // Brute-force scatter accumulation oracle on a small case.
        let xv = seq_array(&[1, 2, 3, 3], 1.0, 0.0);
        let wv = seq_array(&[2, 2, 3, 3], 0.5, 0.0);
        let spec = ConvSpec::new(2, 1, 1);
        let (oh, ow) = (6, 6);
        let mut expect = ArrayD::<f64>::zeros(IxDyn(&[1, 2, oh, ow]));
        for ci in 0..2 {
            for co in 0..2 {
                for ih in 0..3 {
                    for iw in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let oy = (ih * 2 + ky) as isize - 1;
                                let ox = (iw * 2 + kx) as isize - 1;
                                if oy < 0 || oy >= oh as isize || ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                expect[[0, co, oy as usize, ox as usize]] +=
                                    xv[[0, ci, ih, iw]] * wv[[ci, co, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
        let mut g = Graph::new();
        let x = g.constant(xv);
        let w = g.constant(wv);
        let b = g.constant(ArrayD::zeros(IxDyn(&[2])));
        let y = conv_transpose2d(&mut g, x, w, b, spec, 1);
        let got = g.value(y);
        for (a, e) in got.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
