//! The recorded computation graph (a Wengert tape) and its forward ops.

use super::kernels::*;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// How a node was produced. Inputs are handles to earlier nodes, so the
/// record is topological by construction.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`, elementwise with scalar constants.
    Affine { x: Var, scale: f64, shift: f64 },
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    LeakyRelu { x: Var, slope: f64 },
    SumAll(Var),
    /// `w @ x + b` with `x: [d_in]`, `w: [d_out, d_in]`, `b: [d_out]`.
    Dense { x: Var, w: Var, b: Var },
    /// Strided cross-correlation with optional symmetric zero padding.
    Conv { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    /// Adjoint of [`Op::Conv`]'s linear map, plus an output-channel bias.
    ConvTranspose { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    GlobalAvgPool(Var),
    /// Per-channel renormalization to externally supplied statistics.
    AdaIn { x: Var, gamma: Var, beta: Var },
    Reshape(Var),
    /// Window read; output extents live on the node's value.
    Crop { x: Var, offsets: Vec<usize> },
    /// Zero padding per axis; trailing pad is implied by the output shape.
    ZeroPad { x: Var, before: Vec<usize> },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Recorded forward pass. Append-only; every op validates shapes before
/// computing and returns a diagnostic naming the offending shapes otherwise.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Drop every node appended after the graph had `len` nodes. Handles to
    /// dropped nodes become invalid; used to reuse a graph whose prefix
    /// holds registered parameters.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a constant leaf (no gradient tracked).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Insert a gradient-tracked leaf (a trainable parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant scalar leaf of shape `[1]`.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::Shape(format!(
                "{name}: operand shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Tensor { shape, data }, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), ng))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| scale * v + shift).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs_grad(x);
        self.push(Tensor { shape, data }, Op::Affine { x, scale, shift }, ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.exp()).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs_grad(x);
        self.push(Tensor { shape, data }, Op::Exp(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("ln of non-positive value".into()));
        }
        let data = t.data().iter().map(|v| v.ln()).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor { shape, data }, Op::Ln(x), ng))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("sqrt of negative value".into()));
        }
        let data = t.data().iter().map(|v| v.sqrt()).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor { shape, data }, Op::Sqrt(x), ng))
    }

    /// Leaky rectifier; `slope == 0.0` is the plain rectifier, the gradient
    /// at exactly zero takes the leaky branch.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = t.shape().to_vec();
        let ng = self.needs_grad(x);
        self.push(Tensor { shape, data }, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs_grad(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Affine map `w @ x + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape().len() != 1 || tw.shape().len() != 2 || tb.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "dense: expected x [d_in], w [d_out, d_in], b [d_out]; got x {:?}, w {:?}, b {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let (d_out, d_in) = (tw.shape()[0], tw.shape()[1]);
        if tx.shape()[0] != d_in || tb.shape()[0] != d_out {
            return Err(Error::Shape(format!(
                "dense: w {:?} incompatible with x {:?} / b {:?}",
                tw.shape(),
                tx.shape(),
                tb.shape()
            )));
        }
        let mut data = Vec::with_capacity(d_out);
        for o in 0..d_out {
            let row = &tw.data()[o * d_in..(o + 1) * d_in];
            let acc: f64 = row.iter().zip(tx.data()).map(|(wv, xv)| wv * xv).sum();
            data.push(acc + tb.data()[o]);
        }
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(
            Tensor {
                shape: vec![d_out],
                data,
            },
            Op::Dense { x, w, b },
            ng,
        ))
    }

    /// Strided cross-correlation. `x: [c_in, L...]` with one or two spatial
    /// axes, `w: [c_out, c_in, K...]`, `b: [c_out]`. Valid convolution unless
    /// `pad` requests symmetric zero padding.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (dims, c_in, c_out) = self.check_conv_shapes(x, w, b, stride, "conv")?;
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let spatial = &tx.shape()[1..];
        let kernel = &tw.shape()[2..];
        for d in 0..dims {
            if spatial[d] + 2 * pad < kernel[d] {
                return Err(Error::Shape(format!(
                    "conv: padded input {:?} (pad {pad}) smaller than kernel {:?}",
                    tx.shape(),
                    tw.shape()
                )));
            }
        }
        let xp = pad_spatial(tx.data(), c_in, spatial, pad);
        let (mut data, out_shape) = match dims {
            1 => {
                let lp = spatial[0] + 2 * pad;
                let k = kernel[0];
                let out_l = conv_out_len(lp, k, stride);
                (
                    gather1d(&xp, tw.data(), c_in, lp, c_out, k, stride),
                    vec![c_out, out_l],
                )
            }
            _ => {
                let (hp, wp) = (spatial[0] + 2 * pad, spatial[1] + 2 * pad);
                let (kh, kw) = (kernel[0], kernel[1]);
                let (oh, ow) = (conv_out_len(hp, kh, stride), conv_out_len(wp, kw, stride));
                (
                    gather2d(&xp, tw.data(), c_in, hp, wp, c_out, kh, kw, stride),
                    vec![c_out, oh, ow],
                )
            }
        };
        let per_ch = data.len() / c_out;
        for co in 0..c_out {
            let bv = tb.data()[co];
            for v in &mut data[co * per_ch..(co + 1) * per_ch] {
                *v += bv;
            }
        }
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        ))
    }

    /// Transposed convolution: the adjoint of [`Graph::conv`]'s linear map
    /// for the same kernel, stride, and padding, plus a per-channel bias.
    /// `x: [c_a, L...]`, `w: [c_a, c_b, K...]` -> `[c_b, (L-1)*stride+K-2*pad...]`.
    pub fn conv_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.shape().len() < 3 || tw.shape().len() > 4 {
            return Err(Error::Shape(format!(
                "conv_transpose: kernel must be rank 3 or 4, got {:?}",
                tw.shape()
            )));
        }
        let dims = tw.shape().len() - 2;
        if tx.shape().len() != dims + 1 {
            return Err(Error::Shape(format!(
                "conv_transpose: input {:?} incompatible with kernel {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv_transpose: stride must be >= 1".into()));
        }
        let (c_a, c_b) = (tw.shape()[0], tw.shape()[1]);
        if tx.shape()[0] != c_a || tb.shape() != [c_b] {
            return Err(Error::Shape(format!(
                "conv_transpose: input {:?} / kernel {:?} / bias {:?} mismatch",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let spatial = &tx.shape()[1..];
        let kernel = &tw.shape()[2..];
        for d in 0..dims {
            if conv_transpose_out_len(spatial[d], kernel[d], stride) <= 2 * pad {
                return Err(Error::Shape(format!(
                    "conv_transpose: pad {pad} consumes entire output for input {:?}, kernel {:?}",
                    tx.shape(),
                    tw.shape()
                )));
            }
        }
        let (full, full_spatial): (Vec<f64>, Vec<usize>) = match dims {
            1 => {
                let fl = conv_transpose_out_len(spatial[0], kernel[0], stride);
                (
                    scatter1d(
                        tx.data(),
                        tw.data(),
                        c_a,
                        spatial[0],
                        c_b,
                        kernel[0],
                        stride,
                        fl,
                    ),
                    vec![fl],
                )
            }
            _ => {
                let fh = conv_transpose_out_len(spatial[0], kernel[0], stride);
                let fw = conv_transpose_out_len(spatial[1], kernel[1], stride);
                (
                    scatter2d(
                        tx.data(),
                        tw.data(),
                        c_a,
                        spatial[0],
                        spatial[1],
                        c_b,
                        kernel[0],
                        kernel[1],
                        stride,
                        fh,
                        fw,
                    ),
                    vec![fh, fw],
                )
            }
        };
        let out_spatial: Vec<usize> = full_spatial.iter().map(|&l| l - 2 * pad).collect();
        let mut data = crop_spatial(&full, c_b, &out_spatial, pad);
        let per_ch: usize = out_spatial.iter().product();
        for cb in 0..c_b {
            let bv = tb.data()[cb];
            for v in &mut data[cb * per_ch..(cb + 1) * per_ch] {
                *v += bv;
            }
        }
        let mut out_shape = vec![c_b];
        out_shape.extend(out_spatial);
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::ConvTranspose {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        ))
    }

    fn check_conv_shapes(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        name: &str,
    ) -> Result<(usize, usize, usize)> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.shape().len() < 3 || tw.shape().len() > 4 {
            return Err(Error::Shape(format!(
                "{name}: kernel must be rank 3 (1-D) or 4 (2-D), got {:?}",
                tw.shape()
            )));
        }
        let dims = tw.shape().len() - 2;
        if tx.shape().len() != dims + 1 {
            return Err(Error::Shape(format!(
                "{name}: input {:?} incompatible with kernel {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config(format!("{name}: stride must be >= 1")));
        }
        let (c_out, c_in) = (tw.shape()[0], tw.shape()[1]);
        if tx.shape()[0] != c_in {
            return Err(Error::Shape(format!(
                "{name}: input channels {:?} do not match kernel {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        if tb.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "{name}: bias {:?} does not match kernel {:?}",
                tb.shape(),
                tw.shape()
            )));
        }
        Ok((dims, c_in, c_out))
    }

    /// Per-channel arithmetic mean over the spatial axes: `[C, L...]` -> `[C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() < 2 {
            return Err(Error::Shape(format!(
                "global_avg_pool: need channel plus spatial axes, got {:?}",
                t.shape()
            )));
        }
        let c = t.shape()[0];
        let n: usize = t.shape()[1..].iter().product();
        let data = (0..c)
            .map(|ci| t.data()[ci * n..(ci + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor {
                shape: vec![c],
                data,
            },
            Op::GlobalAvgPool(x),
            ng,
        ))
    }

    /// Adaptive instance normalization: per channel, standardize by the
    /// population statistics and re-scale to `(gamma, beta)`.
    pub fn adain(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.shape().len() < 2 {
            return Err(Error::Shape(format!(
                "adain: need channel plus spatial axes, got {:?}",
                tx.shape()
            )));
        }
        let c = tx.shape()[0];
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::Shape(format!(
                "adain: gamma {:?} / beta {:?} do not match content {:?}",
                tg.shape(),
                tb.shape(),
                tx.shape()
            )));
        }
        let n: usize = tx.shape()[1..].iter().product();
        let stats = channel_stats(tx.data(), c, n, super::ADAIN_EPS);
        let mut data = vec![0.0; tx.numel()];
        for ci in 0..c {
            let (m, s) = stats[ci];
            let (g, b) = (tg.data()[ci], tb.data()[ci]);
            for i in 0..n {
                data[ci * n + i] = g * (tx.data()[ci * n + i] - m) / s + b;
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        Ok(self.push(Tensor { shape, data }, Op::AdaIn { x, gamma, beta }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "reshape: {:?} incompatible with {:?}",
                t.shape(),
                shape
            )));
        }
        let data = t.data().to_vec();
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor { shape, data }, Op::Reshape(x), ng))
    }

    /// Read the window `offsets[i] .. offsets[i] + extents[i]` along every axis.
    pub fn crop(&mut self, x: Var, offsets: &[usize], extents: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.shape().len();
        if offsets.len() != rank || extents.len() != rank {
            return Err(Error::Shape(format!(
                "crop: offsets {:?} / extents {:?} do not match rank of {:?}",
                offsets,
                extents,
                t.shape()
            )));
        }
        for d in 0..rank {
            if extents[d] == 0 || offsets[d] + extents[d] > t.shape()[d] {
                return Err(Error::Shape(format!(
                    "crop: window {:?}+{:?} exceeds {:?}",
                    offsets,
                    extents,
                    t.shape()
                )));
            }
        }
        let mut data = Vec::with_capacity(extents.iter().product());
        copy_window(t.data(), t.shape(), offsets, extents, &mut data);
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor {
                shape: extents.to_vec(),
                data,
            },
            Op::Crop {
                x,
                offsets: offsets.to_vec(),
            },
            ng,
        ))
    }

    /// Zero-pad by `before[i]` / `after[i]` along every axis.
    pub fn zero_pad(&mut self, x: Var, before: &[usize], after: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.shape().len();
        if before.len() != rank || after.len() != rank {
            return Err(Error::Shape(format!(
                "zero_pad: before {:?} / after {:?} do not match rank of {:?}",
                before,
                after,
                t.shape()
            )));
        }
        let out_shape: Vec<usize> = (0..rank)
            .map(|d| t.shape()[d] + before[d] + after[d])
            .collect();
        let mut data = vec![0.0; out_shape.iter().product()];
        write_window(&mut data, &out_shape, before, t.shape(), t.data());
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::ZeroPad {
                x,
                before: before.to_vec(),
            },
            ng,
        ))
    }
}

/// Append the window `offsets..offsets+extents` of `src` (shape `src_shape`)
/// to `out`, row-major.
pub(crate) fn copy_window(
    src: &[f64],
    src_shape: &[usize],
    offsets: &[usize],
    extents: &[usize],
    out: &mut Vec<f64>,
) {
    let rank = src_shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        strides[d] = strides[d + 1] * src_shape[d + 1];
    }
    let mut idx = vec![0usize; rank];
    loop {
        let base: usize = (0..rank - 1)
            .map(|d| (offsets[d] + idx[d]) * strides[d])
            .sum();
        let row = base + offsets[rank - 1];
        out.extend_from_slice(&src[row..row + extents[rank - 1]]);
        // advance the outer indices (innermost axis handled by the slice copy)
        let mut d = rank.wrapping_sub(2);
        loop {
            if d == usize::MAX {
                return;
            }
            idx[d] += 1;
            if idx[d] < extents[d] {
                break;
            }
            idx[d] = 0;
            d = d.wrapping_sub(1);
        }
        if rank == 1 {
            return;
        }
    }
}

/// Scatter `src` (shape `src_shape`) into the window starting at `offsets`
/// of `dst` (shape `dst_shape`), adding values in place.
pub(crate) fn add_window(
    dst: &mut [f64],
    dst_shape: &[usize],
    offsets: &[usize],
    src_shape: &[usize],
    src: &[f64],
) {
    let rank = dst_shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        strides[d] = strides[d + 1] * dst_shape[d + 1];
    }
    let inner = src_shape[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut src_off = 0;
    loop {
        let base: usize = (0..rank - 1)
            .map(|d| (offsets[d] + idx[d]) * strides[d])
            .sum();
        let row = base + offsets[rank - 1];
        for i in 0..inner {
            dst[row + i] += src[src_off + i];
        }
        src_off += inner;
        let mut d = rank.wrapping_sub(2);
        loop {
            if d == usize::MAX {
                return;
            }
            idx[d] += 1;
            if idx[d] < src_shape[d] {
                break;
            }
            idx[d] = 0;
            d = d.wrapping_sub(1);
        }
        if rank == 1 {
            return;
        }
    }
}

/// Overwrite variant of [`add_window`] used when the destination is fresh.
pub(crate) fn write_window(
    dst: &mut [f64],
    dst_shape: &[usize],
    offsets: &[usize],
    src_shape: &[usize],
    src: &[f64],
) {
    add_window(dst, dst_shape, offsets, src_shape, src);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t1(data: &[f64]) -> Tensor {
        Tensor::from_vec(data.to_vec())
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 1], &[1.0]));
        let b = g.constant(t1(&[0.0]));
        let y = g.conv(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 4]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_stride_two_box_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
        let b = g.constant(t1(&[0.0]));
        let y = g.conv(x, w, b, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv_output_length_157() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 157]));
        let w = g.constant(Tensor::zeros(vec![1, 1, 4]));
        let b = g.constant(t1(&[0.0]));
        let y = g.conv(x, w, b, 2, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 77]);
    }

    #[test]
    fn conv_rejects_bad_shapes_and_stride() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 8]));
        let w = g.constant(Tensor::zeros(vec![1, 3, 2])); // wrong in-channels
        let b = g.constant(t1(&[0.0]));
        let err = g.conv(x, w, b, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 8]") && msg.contains("[1, 3, 2]"), "{msg}");

        let w_ok = g.constant(Tensor::zeros(vec![1, 2, 2]));
        assert!(matches!(g.conv(x, w_ok, b, 0, 0), Err(Error::Config(_))));

        let w_big = g.constant(Tensor::zeros(vec![1, 2, 9])); // kernel longer than input
        assert!(g.conv(x, w_big, b, 1, 0).is_err());
    }

    #[test]
    fn conv_transpose_single_tap_spread() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1], &[1.0]));
        let w = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
        let b = g.constant(t1(&[0.0]));
        let y = g.conv_transpose(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0]);
    }

    #[test]
    fn conv_transpose_stride_two() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
        let b = g.constant(t1(&[0.0]));
        let y = g.conv_transpose(x, w, b, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(t1(&[3.0, -1.0]));
        let w_id = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b0 = g.constant(t1(&[0.0, 0.0]));
        let y = g.dense(x, w_id, b0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let x2 = g.constant(t1(&[2.0, 3.0]));
        let w = g.constant(t(&[1, 2], &[1.0, 1.0]));
        let b = g.constant(t1(&[1.0]));
        let y2 = g.dense(x2, w, b).unwrap();
        assert_eq!(g.value(y2).data(), &[6.0]);
    }

    #[test]
    fn dense_rejects_wrong_length() {
        let mut g = Graph::new();
        let x = g.constant(t1(&[1.0, 2.0, 3.0]));
        let w = g.constant(t(&[1, 2], &[1.0, 1.0]));
        let b = g.constant(t1(&[0.0]));
        assert!(g.dense(x, w, b).is_err());
    }

    #[test]
    fn global_avg_pool_means() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[2.0, 2.0, 2.0]));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.0]);

        let x2 = g.constant(t(&[2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let y2 = g.global_avg_pool(x2).unwrap();
        assert_eq!(g.value(y2).shape(), &[2]);
        assert_eq!(g.value(y2).data(), &[2.0, 6.0]);

        let flat = g.constant(t1(&[1.0]));
        assert!(g.global_avg_pool(flat).is_err());
    }

    #[test]
    fn adain_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let gamma = g.constant(t1(&[2.0]));
        let beta = g.constant(t1(&[1.0]));
        let y = g.adain(x, gamma, beta).unwrap();
        let expect = [-1.4494897427831781, 1.0, 3.449489742783178];
        for (got, want) in g.value(y).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn adain_reapplying_own_stats_is_identity() {
        let mut g = Graph::new();
        let data = [0.3, -1.2, 2.4, 0.9];
        let mean = data.iter().sum::<f64>() / 4.0;
        let std = (data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt();
        let x = g.constant(t(&[1, 4], &data));
        let gamma = g.constant(t1(&[std]));
        let beta = g.constant(t1(&[mean]));
        let y = g.adain(x, gamma, beta).unwrap();
        for (got, want) in g.value(y).data().iter().zip(data) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn adain_constant_channel_is_stabilized() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[5.0, 5.0, 5.0, 5.0]));
        let gamma = g.constant(t1(&[2.0]));
        let beta = g.constant(t1(&[1.0]));
        let y = g.adain(x, gamma, beta).unwrap();
        assert!(g.value(y).is_finite());
        // standardized residual is zero, so the output is exactly beta
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn crop_and_pad_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let padded = g.zero_pad(x, &[0, 1], &[0, 2]).unwrap();
        assert_eq!(g.value(padded).shape(), &[2, 6]);
        assert_eq!(
            g.value(padded).data(),
            &[0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 4.0, 5.0, 6.0, 0.0, 0.0]
        );
        let back = g.crop(padded, &[0, 1], &[2, 3]).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());

        assert!(g.crop(x, &[0, 2], &[2, 3]).is_err());
    }

    #[test]
    fn scalar_helpers() {
        let mut g = Graph::new();
        let x = g.constant(t1(&[1.0, 2.0, 3.0]));
        let s = g.sum_all(x);
        assert_eq!(g.value(s).item().unwrap(), 6.0);
        let m = g.mean_all(x);
        assert_eq!(g.value(m).item().unwrap(), 2.0);
        let a = g.affine(s, 2.0, -1.0);
        assert_eq!(g.value(a).item().unwrap(), 11.0);
    }
}
