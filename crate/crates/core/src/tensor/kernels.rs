//! Raw numeric loops behind the convolution, pooling, and normalization ops.
//!
//! Three primitives cover all convolution work in both directions:
//!
//! * `gather`: valid cross-correlation of a (pre-padded) input with a kernel.
//! * `scatter`: the adjoint spread (used by transposed convolution forward
//!   and by convolution input-gradients).
//! * `kernel_grad`: accumulation of kernel gradients from paired
//!   source/window tensors.
//!
//! Layouts are row-major: inputs `[C, L]` or `[C, H, W]`, kernels
//! `[C_a, C_b, K]` or `[C_a, C_b, KH, KW]`.

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output extent of a valid strided cross-correlation.
pub fn conv_out_len(l_in: usize, k: usize, stride: usize) -> usize {
    (l_in - k) / stride + 1
}

/// Output extent of a transposed convolution before padding removal.
pub fn conv_transpose_out_len(l_in: usize, k: usize, stride: usize) -> usize {
    (l_in - 1) * stride + k
}

/// Zero-pad the spatial axes of `[C, L]` / `[C, H, W]` data by `pad` on each
/// side. `pad == 0` returns a plain copy.
pub fn pad_spatial(data: &[f64], channels: usize, spatial: &[usize], pad: usize) -> Vec<f64> {
    if pad == 0 {
        return data.to_vec();
    }
    match spatial {
        [l] => {
            let lp = l + 2 * pad;
            let mut out = vec![0.0; channels * lp];
            for c in 0..channels {
                out[c * lp + pad..c * lp + pad + l].copy_from_slice(&data[c * l..(c + 1) * l]);
            }
            out
        }
        [h, w] => {
            let (hp, wp) = (h + 2 * pad, w + 2 * pad);
            let mut out = vec![0.0; channels * hp * wp];
            for c in 0..channels {
                for i in 0..*h {
                    let src = &data[(c * h + i) * w..(c * h + i + 1) * w];
                    let dst_off = (c * hp + i + pad) * wp + pad;
                    out[dst_off..dst_off + w].copy_from_slice(src);
                }
            }
            out
        }
        _ => unreachable!("spatial rank must be 1 or 2"),
    }
}

/// Crop `pad` from each side of the spatial axes (adjoint of `pad_spatial`).
pub fn crop_spatial(data: &[f64], channels: usize, spatial_out: &[usize], pad: usize) -> Vec<f64> {
    if pad == 0 {
        return data.to_vec();
    }
    match spatial_out {
        [l] => {
            let lp = l + 2 * pad;
            let mut out = vec![0.0; channels * l];
            for c in 0..channels {
                out[c * l..(c + 1) * l].copy_from_slice(&data[c * lp + pad..c * lp + pad + l]);
            }
            out
        }
        [h, w] => {
            let (hp, wp) = (h + 2 * pad, w + 2 * pad);
            let mut out = vec![0.0; channels * h * w];
            for c in 0..channels {
                for i in 0..*h {
                    let src_off = (c * hp + i + pad) * wp + pad;
                    out[(c * h + i) * w..(c * h + i + 1) * w]
                        .copy_from_slice(&data[src_off..src_off + w]);
                }
            }
            out
        }
        _ => unreachable!("spatial rank must be 1 or 2"),
    }
}

/// Valid strided cross-correlation, 1-D.
/// `x: [c_in, l]`, `w: [c_out, c_in, k]` -> `[c_out, out_l]`.
pub fn gather1d(
    x: &[f64],
    w: &[f64],
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
) -> Vec<f64> {
    let out_l = conv_out_len(l, k, stride);
    let mut y = vec![0.0; c_out * out_l];
    for co in 0..c_out {
        for t in 0..out_l {
            let base = t * stride;
            let mut acc = 0.0;
            for ci in 0..c_in {
                let xs = &x[ci * l + base..ci * l + base + k];
                let ws = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                acc += dot(xs, ws);
            }
            y[co * out_l + t] = acc;
        }
    }
    y
}

/// Adjoint spread, 1-D: `src: [c_a, t_len]`, `w: [c_a, c_b, k]` ->
/// `[c_b, dst_l]` with `dst[cb, t*stride + j] += src[ca, t] * w[ca, cb, j]`.
/// `dst_l` may exceed `(t_len-1)*stride + k`; the tail stays zero.
pub fn scatter1d(
    src: &[f64],
    w: &[f64],
    c_a: usize,
    t_len: usize,
    c_b: usize,
    k: usize,
    stride: usize,
    dst_l: usize,
) -> Vec<f64> {
    let mut dst = vec![0.0; c_b * dst_l];
    for ca in 0..c_a {
        for t in 0..t_len {
            let s = src[ca * t_len + t];
            if s == 0.0 {
                continue;
            }
            let base = t * stride;
            for cb in 0..c_b {
                let ws = &w[(ca * c_b + cb) * k..(ca * c_b + cb + 1) * k];
                let ds = &mut dst[cb * dst_l + base..cb * dst_l + base + k];
                for (d, wv) in ds.iter_mut().zip(ws) {
                    *d += s * wv;
                }
            }
        }
    }
    dst
}

/// Kernel gradient, 1-D: `gw[ca, cb, j] = sum_t src[ca, t] * win[cb, t*stride + j]`.
pub fn kernel_grad1d(
    src: &[f64],
    win: &[f64],
    c_a: usize,
    t_len: usize,
    c_b: usize,
    k: usize,
    stride: usize,
    win_l: usize,
) -> Vec<f64> {
    let mut gw = vec![0.0; c_a * c_b * k];
    for ca in 0..c_a {
        for t in 0..t_len {
            let s = src[ca * t_len + t];
            if s == 0.0 {
                continue;
            }
            let base = t * stride;
            for cb in 0..c_b {
                let ws = &win[cb * win_l + base..cb * win_l + base + k];
                let gs = &mut gw[(ca * c_b + cb) * k..(ca * c_b + cb + 1) * k];
                for (g, wv) in gs.iter_mut().zip(ws) {
                    *g += s * wv;
                }
            }
        }
    }
    gw
}

/// Valid strided cross-correlation, 2-D.
/// `x: [c_in, h, w]`, `ker: [c_out, c_in, kh, kw]` -> `[c_out, oh, ow]`.
#[allow(clippy::too_many_arguments)]
pub fn gather2d(
    x: &[f64],
    ker: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = conv_out_len(h, kh, stride);
    let ow = conv_out_len(w, kw, stride);
    let mut y = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for ti in 0..oh {
            for tj in 0..ow {
                let (bi, bj) = (ti * stride, tj * stride);
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for ki in 0..kh {
                        let xs = &x[(ci * h + bi + ki) * w + bj..(ci * h + bi + ki) * w + bj + kw];
                        let ks = &ker[((co * c_in + ci) * kh + ki) * kw
                            ..((co * c_in + ci) * kh + ki + 1) * kw];
                        acc += dot(xs, ks);
                    }
                }
                y[(co * oh + ti) * ow + tj] = acc;
            }
        }
    }
    y
}

/// Adjoint spread, 2-D (see `scatter1d`).
#[allow(clippy::too_many_arguments)]
pub fn scatter2d(
    src: &[f64],
    ker: &[f64],
    c_a: usize,
    th: usize,
    tw: usize,
    c_b: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    let mut dst = vec![0.0; c_b * dst_h * dst_w];
    for ca in 0..c_a {
        for ti in 0..th {
            for tj in 0..tw {
                let s = src[(ca * th + ti) * tw + tj];
                if s == 0.0 {
                    continue;
                }
                let (bi, bj) = (ti * stride, tj * stride);
                for cb in 0..c_b {
                    for ki in 0..kh {
                        let ks = &ker[((ca * c_b + cb) * kh + ki) * kw
                            ..((ca * c_b + cb) * kh + ki + 1) * kw];
                        let off = (cb * dst_h + bi + ki) * dst_w + bj;
                        for (d, kv) in dst[off..off + kw].iter_mut().zip(ks) {
                            *d += s * kv;
                        }
                    }
                }
            }
        }
    }
    dst
}

/// Kernel gradient, 2-D (see `kernel_grad1d`).
#[allow(clippy::too_many_arguments)]
pub fn kernel_grad2d(
    src: &[f64],
    win: &[f64],
    c_a: usize,
    th: usize,
    tw: usize,
    c_b: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    win_h: usize,
    win_w: usize,
) -> Vec<f64> {
    let mut gw = vec![0.0; c_a * c_b * kh * kw];
    for ca in 0..c_a {
        for ti in 0..th {
            for tj in 0..tw {
                let s = src[(ca * th + ti) * tw + tj];
                if s == 0.0 {
                    continue;
                }
                let (bi, bj) = (ti * stride, tj * stride);
                for cb in 0..c_b {
                    for ki in 0..kh {
                        let ws = &win[(cb * win_h + bi + ki) * win_w + bj
                            ..(cb * win_h + bi + ki) * win_w + bj + kw];
                        let off = ((ca * c_b + cb) * kh + ki) * kw;
                        for (g, wv) in gw[off..off + kw].iter_mut().zip(ws) {
                            *g += s * wv;
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Per-channel statistics used by adaptive instance normalization:
/// population mean and the stabilized std `sqrt(var + eps^2)`.
pub fn channel_stats(x: &[f64], channels: usize, n: usize, eps: f64) -> Vec<(f64, f64)> {
    let mut stats = Vec::with_capacity(channels);
    for c in 0..channels {
        let xs = &x[c * n..(c + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        stats.push((mean, (var + eps * eps).sqrt()));
    }
    stats
}
