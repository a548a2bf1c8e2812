//! Residual block built from the graph primitives.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Parameters of one residual block: two shape-preserving convolutions.
#[derive(Debug, Clone, Copy)]
pub struct ResBlockParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `x + conv2(act(conv1(x)))` with stride-1 same-padded convolutions.
///
/// Both internal convolutions must preserve the input shape: equal channel
/// counts and odd kernel extents (padding is `(k - 1) / 2`). Anything
/// shape-changing is rejected before any arithmetic runs.
pub fn residual_block(
    g: &mut Graph,
    x: Var,
    p: &ResBlockParams,
    act_slope: f64,
) -> Result<Var> {
    let channels = g.value(x).shape()[0];
    for (name, w) in [("first", p.w1), ("second", p.w2)] {
        let shape = g.value(w).shape();
        if shape.len() < 3 || shape[0] != channels || shape[1] != channels {
            return Err(Error::Shape(format!(
                "residual block: {name} conv kernel {shape:?} changes channel count {channels}"
            )));
        }
        if shape[2..].iter().any(|&k| k % 2 == 0 || k != shape[2]) {
            return Err(Error::Shape(format!(
                "residual block: {name} conv kernel {shape:?} must have equal odd extents \
                 to preserve shape"
            )));
        }
    }
    let k1 = g.value(p.w1).shape()[2];
    let k2 = g.value(p.w2).shape()[2];
    let h = g.conv(x, p.w1, p.b1, 1, (k1 - 1) / 2)?;
    let h = g.leaky_relu(h, act_slope);
    let h = g.conv(h, p.w2, p.b2, 1, (k2 - 1) / 2)?;
    g.add(x, h)
}
