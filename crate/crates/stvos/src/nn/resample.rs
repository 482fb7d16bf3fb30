//! Spatial resampling ops: average pooling, adaptive pooling and bilinear
//! resizing, all with exact adjoints.

use ndarray::{ArrayD, IxDyn};

use super::graph::{Graph, NodeId};
use super::ops::dims4;

/// Non-overlapping average pooling (`kernel == stride`), no padding.
pub fn avg_pool2d(g: &mut Graph, x: NodeId, k: usize) -> NodeId {
    let xv = g.value_rc(x);
    let (n, c, h, w) = dims4(&xv);
    assert!(h % k == 0 && w % k == 0, "avg_pool2d: size not divisible");
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, oh, ow]));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            s += xv[[ni, ci, i * k + dy, j * k + dx]];
                        }
                    }
                    out[[ni, ci, i, j]] = s * inv;
                }
            }
        }
    }
    g.op(
        out,
        vec![x],
        Box::new(move |go| {
            let mut gx = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
            for ni in 0..n {
                for ci in 0..c {
                    for i in 0..h / k {
                        for j in 0..w / k {
                            let v = go[[ni, ci, i, j]] * inv;
                            for dy in 0..k {
                                for dx in 0..k {
                                    gx[[ni, ci, i * k + dy, j * k + dx]] = v;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

fn bin_bounds(i: usize, bins: usize, size: usize) -> (usize, usize) {
    let start = i * size / bins;
    let end = ((i + 1) * size).div_ceil(bins);
    (start, end)
}

/// Adaptive average pooling to a `bins x bins` grid.
pub fn adaptive_avg_pool(g: &mut Graph, x: NodeId, bins: usize) -> NodeId {
    let xv = g.value_rc(x);
    let (n, c, h, w) = dims4(&xv);
    assert!(h >= bins && w >= bins, "adaptive_avg_pool: input smaller than grid");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, bins, bins]));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..bins {
                let (y0, y1) = bin_bounds(i, bins, h);
                for j in 0..bins {
                    let (x0, x1) = bin_bounds(j, bins, w);
                    let mut s = 0.0;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            s += xv[[ni, ci, yy, xx]];
                        }
                    }
                    out[[ni, ci, i, j]] = s / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
    }
    g.op(
        out,
        vec![x],
        Box::new(move |go| {
            let mut gx = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
            for ni in 0..n {
                for ci in 0..c {
                    for i in 0..bins {
                        let (y0, y1) = bin_bounds(i, bins, h);
                        for j in 0..bins {
                            let (x0, x1) = bin_bounds(j, bins, w);
                            let v = go[[ni, ci, i, j]] / ((y1 - y0) * (x1 - x0)) as f64;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    gx[[ni, ci, yy, xx]] += v;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(out_size: usize, in_size: usize) -> Vec<Tap> {
    (0..out_size)
        .map(|o| {
            let src = ((o as f64 + 0.5) * in_size as f64 / out_size as f64 - 0.5)
                .clamp(0.0, (in_size - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_size - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

/// Bilinear resize with half-pixel centers. Identity when sizes match.
pub fn bilinear_resize(g: &mut Graph, x: NodeId, oh: usize, ow: usize) -> NodeId {
    let xv = g.value_rc(x);
    let (n, c, h, w) = dims4(&xv);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, oh, ow]));
    for ni in 0..n {
        for ci in 0..c {
            for (i, typ) in ty.iter().enumerate() {
                for (j, txp) in tx.iter().enumerate() {
                    let a = xv[[ni, ci, typ.lo, txp.lo]];
                    let b = xv[[ni, ci, typ.lo, txp.hi]];
                    let cc = xv[[ni, ci, typ.hi, txp.lo]];
                    let d = xv[[ni, ci, typ.hi, txp.hi]];
                    let top = a + (b - a) * txp.frac;
                    let bot = cc + (d - cc) * txp.frac;
                    out[[ni, ci, i, j]] = top + (bot - top) * typ.frac;
                }
            }
        }
    }
    g.op(
        out,
        vec![x],
        Box::new(move |go| {
            let ty = taps(oh, h);
            let tx = taps(ow, w);
            let mut gx = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
            for ni in 0..n {
                for ci in 0..c {
                    for (i, typ) in ty.iter().enumerate() {
                        for (j, txp) in tx.iter().enumerate() {
                            let gg = go[[ni, ci, i, j]];
                            let (fy, fx) = (typ.frac, txp.frac);
                            gx[[ni, ci, typ.lo, txp.lo]] += gg * (1.0 - fy) * (1.0 - fx);
                            gx[[ni, ci, typ.lo, txp.hi]] += gg * (1.0 - fy) * fx;
                            gx[[ni, ci, typ.hi, txp.lo]] += gg * fy * (1.0 - fx);
                            gx[[ni, ci, typ.hi, txp.hi]] += gg * fy * fx;
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use crate::nn::ops::sum_all;

    fn wavy(shape: &[usize]) -> ArrayD<f64> {
        let mut k = 0.0_f64;
        ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            k += 1.0;
            (k * 0.37).sin() + 0.1 * k.cos()
        })
    }

    #[test]
    fn bilinear_identity_is_exact() {
        let mut g = Graph::new();
        let xv = wavy(&[1, 2, 5, 7]);
        let x = g.constant(xv.clone());
        let y = bilinear_resize(&mut g, x, 5, 7);
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn adaptive_pool_bin1_is_global_mean() {
        // brute-force mean oracle
        let mut g = Graph::new();
        let xv = wavy(&[1, 3, 6, 5]);
        let x = g.constant(xv.clone());
        let y = adaptive_avg_pool(&mut g, x, 1);
        for c in 0..3 {
            let mean = xv.index_axis(ndarray::Axis(1), c).sum() / 30.0;
            assert!((g.value(y)[[0, c, 0, 0]] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_pool_constant_field() {
        let mut g = Graph::new();
        let x = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 7, 9]), 3.25));
        for bins in [1usize, 2, 3, 6] {
            let y = adaptive_avg_pool(&mut g, x, bins);
            for v in g.value(y).iter() {
                assert!((v - 3.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_grads() {
        let x = wavy(&[1, 2, 4, 4]);
        check_grads(
            &[x.clone()],
            |g, inputs| {
                let y = avg_pool2d(g, inputs[0], 2);
                sum_all(g, y)
            },
            1e-5,
            1e-7,
        );
        check_grads(
            &[x.clone()],
            |g, inputs| {
                let y = adaptive_avg_pool(g, inputs[0], 3);
                sum_all(g, y)
            },
            1e-5,
            1e-7,
        );
        check_grads(
            &[x],
            |g, inputs| {
                let y = bilinear_resize(g, inputs[0], 7, 9);
                sum_all(g, y)
            },
            1e-5,
            1e-6,
        );
    }
}
