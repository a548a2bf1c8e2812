//! Reverse accumulation over a recorded graph.

use super::graph::{add_window, copy_window, Graph, Op, Var};
use super::kernels::*;
use super::Tensor;
use crate::error::{Error, Result};

/// Gradient table produced by [`backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the loss w.r.t. `v`; parameters that do not participate
    /// in the loss get zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

/// Reverse-mode gradients of a scalar `loss` w.r.t. every grad-tracked node.
///
/// Visits each recorded op exactly once, newest to oldest. Gradients are
/// plain values, not graph nodes, so differentiating through `backward`
/// itself (double backward) is not supported.
pub fn backward(g: &Graph, loss: Var) -> Result<Gradients> {
    let lt = g.value(loss);
    if lt.numel() != 1 {
        return Err(Error::Shape(format!(
            "backward: loss must be scalar, got shape {:?}",
            lt.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = (0..g.len()).map(|_| None).collect();
    grads[loss.0] = Some(Tensor::scalar(1.0));

    for i in (0..=loss.0).rev() {
        if grads[i].is_none() {
            continue;
        }
        let node = &g.nodes[i];
        if matches!(node.op, Op::Leaf) || !node.needs_grad {
            continue;
        }
        let gout = grads[i].take().unwrap();
        step(g, i, &gout, &mut grads);
        grads[i] = Some(gout);
    }
    Ok(Gradients { grads })
}

fn step(g: &Graph, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &g.nodes[i];
    let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
        if g.needs_grad(v) {
            accumulate(&mut grads[v.0], t);
        }
    };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            send(*a, gout.clone(), grads);
            send(*b, gout.clone(), grads);
        }
        Op::Sub(a, b) => {
            send(*a, gout.clone(), grads);
            let neg = map(gout, |v| -v);
            send(*b, neg, grads);
        }
        Op::Mul(a, b) => {
            if g.needs_grad(*a) {
                send(*a, zip(gout, g.value(*b), |x, y| x * y), grads);
            }
            if g.needs_grad(*b) {
                send(*b, zip(gout, g.value(*a), |x, y| x * y), grads);
            }
        }
        Op::Affine { x, scale, .. } => {
            let s = *scale;
            send(*x, map(gout, |v| s * v), grads);
        }
        Op::Exp(x) => {
            send(*x, zip(gout, &node.value, |gv, ov| gv * ov), grads);
        }
        Op::Ln(x) => {
            send(*x, zip(gout, g.value(*x), |gv, xv| gv / xv), grads);
        }
        Op::Sqrt(x) => {
            send(*x, zip(gout, &node.value, |gv, ov| gv / (2.0 * ov)), grads);
        }
        Op::LeakyRelu { x, slope } => {
            let s = *slope;
            let gx = zip(gout, g.value(*x), |gv, xv| if xv > 0.0 { gv } else { s * gv });
            send(*x, gx, grads);
        }
        Op::SumAll(x) => {
            let shape = g.value(*x).shape().to_vec();
            let gv = gout.data()[0];
            let n = shape.iter().product();
            send(
                *x,
                Tensor {
                    shape,
                    data: vec![gv; n],
                },
                grads,
            );
        }
        Op::Dense { x, w, b } => {
            let (tx, tw) = (g.value(*x), g.value(*w));
            let (d_out, d_in) = (tw.shape()[0], tw.shape()[1]);
            if g.needs_grad(*x) {
                let mut gx = vec![0.0; d_in];
                for o in 0..d_out {
                    let gv = gout.data()[o];
                    if gv == 0.0 {
                        continue;
                    }
                    let row = &tw.data()[o * d_in..(o + 1) * d_in];
                    for (gxi, wv) in gx.iter_mut().zip(row) {
                        *gxi += gv * wv;
                    }
                }
                send(*x, Tensor::from_vec(gx), grads);
            }
            if g.needs_grad(*w) {
                let mut gw = vec![0.0; d_out * d_in];
                for o in 0..d_out {
                    let gv = gout.data()[o];
                    if gv == 0.0 {
                        continue;
                    }
                    for (gwi, xv) in gw[o * d_in..(o + 1) * d_in].iter_mut().zip(tx.data()) {
                        *gwi += gv * xv;
                    }
                }
                send(
                    *w,
                    Tensor {
                        shape: vec![d_out, d_in],
                        data: gw,
                    },
                    grads,
                );
            }
            if g.needs_grad(*b) {
                send(*b, gout.clone(), grads);
            }
        }
        Op::Conv {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let (tx, tw) = (g.value(*x), g.value(*w));
            let spatial = &tx.shape()[1..];
            let kernel = &tw.shape()[2..];
            let (c_in, c_out) = (tw.shape()[1], tw.shape()[0]);
            let out_spatial = &node.value.shape()[1..];
            let xp = pad_spatial(tx.data(), c_in, spatial, *pad);
            match spatial.len() {
                1 => {
                    let lp = spatial[0] + 2 * pad;
                    let (k, out_l) = (kernel[0], out_spatial[0]);
                    if g.needs_grad(*x) {
                        let gxp =
                            scatter1d(gout.data(), tw.data(), c_out, out_l, c_in, k, *stride, lp);
                        let gx = crop_spatial(&gxp, c_in, spatial, *pad);
                        send(
                            *x,
                            Tensor {
                                shape: tx.shape().to_vec(),
                                data: gx,
                            },
                            grads,
                        );
                    }
                    if g.needs_grad(*w) {
                        let gw = kernel_grad1d(gout.data(), &xp, c_out, out_l, c_in, k, *stride, lp);
                        send(
                            *w,
                            Tensor {
                                shape: tw.shape().to_vec(),
                                data: gw,
                            },
                            grads,
                        );
                    }
                }
                _ => {
                    let (hp, wp) = (spatial[0] + 2 * pad, spatial[1] + 2 * pad);
                    let (kh, kw) = (kernel[0], kernel[1]);
                    let (oh, ow) = (out_spatial[0], out_spatial[1]);
                    if g.needs_grad(*x) {
                        let gxp = scatter2d(
                            gout.data(),
                            tw.data(),
                            c_out,
                            oh,
                            ow,
                            c_in,
                            kh,
                            kw,
                            *stride,
                            hp,
                            wp,
                        );
                        let gx = crop_spatial(&gxp, c_in, spatial, *pad);
                        send(
                            *x,
                            Tensor {
                                shape: tx.shape().to_vec(),
                                data: gx,
                            },
                            grads,
                        );
                    }
                    if g.needs_grad(*w) {
                        let gw = kernel_grad2d(
                            gout.data(),
                            &xp,
                            c_out,
                            oh,
                            ow,
                            c_in,
                            kh,
                            kw,
                            *stride,
                            hp,
                            wp,
                        );
                        send(
                            *w,
                            Tensor {
                                shape: tw.shape().to_vec(),
                                data: gw,
                            },
                            grads,
                        );
                    }
                }
            }
            if g.needs_grad(*b) {
                send(*b, channel_sums(gout, c_out), grads);
            }
        }
        Op::ConvTranspose {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let (tx, tw) = (g.value(*x), g.value(*w));
            let (c_a, c_b) = (tw.shape()[0], tw.shape()[1]);
            let spatial = &tx.shape()[1..];
            let kernel = &tw.shape()[2..];
            // Re-expand the output gradient to the uncropped extent.
            let gfull = pad_spatial(gout.data(), c_b, &node.value.shape()[1..], *pad);
            match spatial.len() {
                1 => {
                    let full_l = conv_transpose_out_len(spatial[0], kernel[0], *stride);
                    if g.needs_grad(*x) {
                        let gx =
                            gather1d(&gfull, tw.data(), c_b, full_l, c_a, kernel[0], *stride);
                        send(
                            *x,
                            Tensor {
                                shape: tx.shape().to_vec(),
                                data: gx,
                            },
                            grads,
                        );
                    }
                    if g.needs_grad(*w) {
                        let gw = kernel_grad1d(
                            tx.data(),
                            &gfull,
                            c_a,
                            spatial[0],
                            c_b,
                            kernel[0],
                            *stride,
                            full_l,
                        );
                        send(
                            *w,
                            Tensor {
                                shape: tw.shape().to_vec(),
                                data: gw,
                            },
                            grads,
                        );
                    }
                }
                _ => {
                    let full_h = conv_transpose_out_len(spatial[0], kernel[0], *stride);
                    let full_w = conv_transpose_out_len(spatial[1], kernel[1], *stride);
                    if g.needs_grad(*x) {
                        let gx = gather2d(
                            &gfull,
                            tw.data(),
                            c_b,
                            full_h,
                            full_w,
                            c_a,
                            kernel[0],
                            kernel[1],
                            *stride,
                        );
                        send(
                            *x,
                            Tensor {
                                shape: tx.shape().to_vec(),
                                data: gx,
                            },
                            grads,
                        );
                    }
                    if g.needs_grad(*w) {
                        let gw = kernel_grad2d(
                            tx.data(),
                            &gfull,
                            c_a,
                            spatial[0],
                            spatial[1],
                            c_b,
                            kernel[0],
                            kernel[1],
                            *stride,
                            full_h,
                            full_w,
                        );
                        send(
                            *w,
                            Tensor {
                                shape: tw.shape().to_vec(),
                                data: gw,
                            },
                            grads,
                        );
                    }
                }
            }
            if g.needs_grad(*b) {
                send(*b, channel_sums(gout, c_b), grads);
            }
        }
        Op::GlobalAvgPool(x) => {
            let tx = g.value(*x);
            let c = tx.shape()[0];
            let n: usize = tx.shape()[1..].iter().product();
            let mut gx = vec![0.0; tx.numel()];
            for ci in 0..c {
                let gv = gout.data()[ci] / n as f64;
                for v in &mut gx[ci * n..(ci + 1) * n] {
                    *v = gv;
                }
            }
            send(
                *x,
                Tensor {
                    shape: tx.shape().to_vec(),
                    data: gx,
                },
                grads,
            );
        }
        Op::AdaIn { x, gamma, beta } => {
            let (tx, tg) = (g.value(*x), g.value(*gamma));
            let c = tx.shape()[0];
            let n: usize = tx.shape()[1..].iter().product();
            let stats = channel_stats(tx.data(), c, n, super::ADAIN_EPS);
            let mut gx = vec![0.0; tx.numel()];
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for ci in 0..c {
                let (m, s) = stats[ci];
                let gam = tg.data()[ci];
                let xs = &tx.data()[ci * n..(ci + 1) * n];
                let gs = &gout.data()[ci * n..(ci + 1) * n];
                let mut g_sum = 0.0;
                let mut g_dot_xh = 0.0;
                for i in 0..n {
                    let xh = (xs[i] - m) / s;
                    g_sum += gs[i];
                    g_dot_xh += gs[i] * xh;
                }
                let g_mean = g_sum / n as f64;
                let gxh_mean = g_dot_xh / n as f64;
                gg[ci] = g_dot_xh;
                gb[ci] = g_sum;
                for i in 0..n {
                    let xh = (xs[i] - m) / s;
                    gx[ci * n + i] = gam / s * (gs[i] - g_mean - xh * gxh_mean);
                }
            }
            if g.needs_grad(*x) {
                send(
                    *x,
                    Tensor {
                        shape: tx.shape().to_vec(),
                        data: gx,
                    },
                    grads,
                );
            }
            send(*gamma, Tensor::from_vec(gg), grads);
            send(*beta, Tensor::from_vec(gb), grads);
        }
        Op::Reshape(x) => {
            let shape = g.value(*x).shape().to_vec();
            send(
                *x,
                Tensor {
                    shape,
                    data: gout.data().to_vec(),
                },
                grads,
            );
        }
        Op::Crop { x, offsets } => {
            let tx = g.value(*x);
            let mut gx = Tensor::zeros(tx.shape().to_vec());
            let dst_shape = tx.shape().to_vec();
            add_window(
                gx.data_mut(),
                &dst_shape,
                offsets,
                node.value.shape(),
                gout.data(),
            );
            send(*x, gx, grads);
        }
        Op::ZeroPad { x, before } => {
            let tx = g.value(*x);
            let mut gx = Vec::with_capacity(tx.numel());
            copy_window(
                gout.data(),
                node.value.shape(),
                before,
                tx.shape(),
                &mut gx,
            );
            send(
                *x,
                Tensor {
                    shape: tx.shape().to_vec(),
                    data: gx,
                },
                grads,
            );
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape().to_vec(),
        data: a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    }
}

/// Per-channel sums of a `[C, spatial...]` gradient, for bias accumulation.
fn channel_sums(gout: &Tensor, c: usize) -> Tensor {
    let n = gout.numel() / c;
    let data = (0..c)
        .map(|ci| gout.data()[ci * n..(ci + 1) * n].iter().sum())
        .collect();
    Tensor {
        shape: vec![c],
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, grad_rel_err, residual_block, ResBlockParams};
    use rand::Rng;

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq);
        let grads = backward(&g, loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let unused = g.param(Tensor::from_vec(vec![3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq);
        let grads = backward(&g, loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, &[1]).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        assert!(backward(&g, y).is_err());
    }

    #[test]
    fn dense_chain_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(11, crate::rng::StreamLabel::Init, 0);
        let w1 = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let b1 = Tensor::from_vec((0..3).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let w2 = Tensor::new(vec![1, 3], (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let b2 = Tensor::from_vec(vec![rng.gen_range(-0.5..0.5)]);
        let x = Tensor::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let run = |w1t: &Tensor| -> f64 {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let w1v = g.param(w1t.clone());
            let b1v = g.param(b1.clone());
            let w2v = g.param(w2.clone());
            let b2v = g.param(b2.clone());
            let h = g.dense(xv, w1v, b1v).unwrap();
            let h = g.leaky_relu(h, 0.2);
            let out = g.dense(h, w2v, b2v).unwrap();
            let loss = g.mul(out, out).unwrap();
            let loss = g.sum_all(loss);
            g.value(loss).item().unwrap()
        };

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w1v = g.param(w1.clone());
        let b1v = g.param(b1.clone());
        let w2v = g.param(w2.clone());
        let b2v = g.param(b2.clone());
        let h = g.dense(xv, w1v, b1v).unwrap();
        let h = g.leaky_relu(h, 0.2);
        let out = g.dense(h, w2v, b2v).unwrap();
        let loss = g.mul(out, out).unwrap();
        let loss = g.sum_all(loss);
        let grads = backward(&g, loss).unwrap();

        let fd = finite_diff_grad(|p| Ok(run(p)), &w1, 1e-5).unwrap();
        let rel = grad_rel_err(grads.get(w1v).unwrap(), &fd);
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn residual_block_zero_weights_is_identity() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 5], (0..10).map(|i| i as f64).collect()).unwrap());
        let p = ResBlockParams {
            w1: g.param(Tensor::zeros(vec![2, 2, 3])),
            b1: g.param(Tensor::zeros(vec![2])),
            w2: g.param(Tensor::zeros(vec![2, 2, 3])),
            b2: g.param(Tensor::zeros(vec![2])),
        };
        let y = residual_block(&mut g, x, &p, 0.2).unwrap();
        assert_eq!(g.value(y).shape(), g.value(x).shape());
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn residual_block_hand_computation() {
        // 1 channel, kernel size 1: F(x) = 3 * lrelu(2x + 0.5) - 1
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let p = ResBlockParams {
            w1: g.constant(Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap()),
            b1: g.constant(Tensor::from_vec(vec![0.5])),
            w2: g.constant(Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap()),
            b2: g.constant(Tensor::from_vec(vec![-1.0])),
        };
        let y = residual_block(&mut g, x, &p, 0.2).unwrap();
        // x=1: 1 + (3*2.5 - 1) = 7.5 ; x=0: 0 + (3*0.5 - 1) = 0.5
        assert_eq!(g.value(y).data(), &[7.5, 0.5]);
    }

    #[test]
    fn residual_block_rejects_shape_changing_layers() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 5]));
        let p = ResBlockParams {
            w1: g.constant(Tensor::zeros(vec![3, 2, 3])), // changes channels
            b1: g.constant(Tensor::zeros(vec![3])),
            w2: g.constant(Tensor::zeros(vec![2, 3, 3])),
            b2: g.constant(Tensor::zeros(vec![2])),
        };
        assert!(residual_block(&mut g, x, &p, 0.2).is_err());

        let p_even = ResBlockParams {
            w1: g.constant(Tensor::zeros(vec![2, 2, 4])), // even kernel
            b1: g.constant(Tensor::zeros(vec![2])),
            w2: g.constant(Tensor::zeros(vec![2, 2, 3])),
            b2: g.constant(Tensor::zeros(vec![2])),
        };
        assert!(residual_block(&mut g, x, &p_even, 0.2).is_err());
    }
}
