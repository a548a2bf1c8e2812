//! Parameter containers, generic over the leaf type so the same structure
//! holds owned tensors (`ModelParams`) or graph handles (`ModelVars`).
//!
//! `visit` walks leaves in a fixed order; that order defines the checkpoint
//! blob layout and the optimizer's parameter list.

use crate::tensor::{Tensor, Var};

/// One affine layer (dense or convolution): weight plus bias.
#[derive(Debug, Clone)]
pub struct LayerP<T> {
    pub w: T,
    pub b: T,
}

/// One residual block: two shape-preserving convolutions.
#[derive(Debug, Clone)]
pub struct ResP<T> {
    pub c1: LayerP<T>,
    pub c2: LayerP<T>,
}

/// Encoder body, one variant per layer form.
#[derive(Debug, Clone)]
pub enum EncBody<T> {
    Conv1d {
        convs: Vec<LayerP<T>>,
        res: Vec<ResP<T>>,
    },
    Conv2d {
        convs: Vec<LayerP<T>>,
        res: Vec<ResP<T>>,
    },
    Linear {
        hidden: Vec<LayerP<T>>,
    },
}

/// Encoder: a body producing a feature vector, then the code layer
/// emitting `[mean, log-variance]`.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub body: EncBody<T>,
    pub code: LayerP<T>,
}

/// Decoder body, one variant per layer form.
#[derive(Debug, Clone)]
pub enum DecBody<T> {
    Conv1d {
        seed: LayerP<T>,
        res: Vec<ResP<T>>,
        tconvs: Vec<LayerP<T>>,
    },
    Conv2d {
        seed: LayerP<T>,
        res: Vec<ResP<T>>,
        tconvs: Vec<LayerP<T>>,
    },
    Linear {
        layers: Vec<LayerP<T>>,
    },
}

/// Decoder: main path driven by the range latent, conditioned on the
/// environment latent through an MLP that emits per-site AdaIN parameters.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    pub body: DecBody<T>,
    pub mlp_hidden: LayerP<T>,
    pub mlp_out: LayerP<T>,
}

/// Head body (estimator or classifier), one variant per layer form.
#[derive(Debug, Clone)]
pub enum HeadBody<T> {
    Linear { l1: LayerP<T>, l2: LayerP<T> },
    Conv1d { c1: LayerP<T>, c2: LayerP<T> },
    Conv2d { c1: LayerP<T>, c2: LayerP<T> },
}

/// Three-layer head: two form-dependent layers plus a dense output.
#[derive(Debug, Clone)]
pub struct Head<T> {
    pub body: HeadBody<T>,
    pub out: LayerP<T>,
}

/// All five parameter groups.
#[derive(Debug, Clone)]
pub struct ModelParamsT<T> {
    pub phi_y: Encoder<T>,
    pub phi_z: Encoder<T>,
    pub theta: Decoder<T>,
    pub phi_e: Head<T>,
    pub phi_c: Head<T>,
}

pub type ModelParams = ModelParamsT<Tensor>;
pub type ModelVars = ModelParamsT<Var>;

impl<T> LayerP<T> {
    fn visit<'a>(&'a self, path: String, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{path}.w"), &self.w);
        f(format!("{path}.b"), &self.b);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerP<U> {
        LayerP {
            w: f(&self.w),
            b: f(&self.b),
        }
    }

    fn for_each_mut<'s>(&'s mut self, f: &mut impl FnMut(&'s mut T)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

impl<T> ResP<T> {
    fn visit<'a>(&'a self, path: String, f: &mut impl FnMut(String, &'a T)) {
        self.c1.visit(format!("{path}.c1"), f);
        self.c2.visit(format!("{path}.c2"), f);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ResP<U> {
        ResP {
            c1: self.c1.map(f),
            c2: self.c2.map(f),
        }
    }

    fn for_each_mut<'s>(&'s mut self, f: &mut impl FnMut(&'s mut T)) {
        self.c1.for_each_mut(f);
        self.c2.for_each_mut(f);
    }
}

impl<T> Encoder<T> {
    fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        match &self.body {
            EncBody::Conv1d { convs, res } | EncBody::Conv2d { convs, res } => {
                for (i, c) in convs.iter().enumerate() {
                    c.visit(format!("{path}.conv{i}"), f);
                }
                for (i, r) in res.iter().enumerate() {
                    r.visit(format!("{path}.res{i}"), f);
                }
            }
            EncBody::Linear { hidden } => {
                for (i, l) in hidden.iter().enumerate() {
                    l.visit(format!("{path}.lin{i}"), f);
                }
            }
        }
        self.code.visit(format!("{path}.code"), f);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Encoder<U> {
        let body = match &self.body {
            EncBody::Conv1d { convs, res } => EncBody::Conv1d {
                convs: convs.iter().map(|c| c.map(f)).collect(),
                res: res.iter().map(|r| r.map(f)).collect(),
            },
            EncBody::Conv2d { convs, res } => EncBody::Conv2d {
                convs: convs.iter().map(|c| c.map(f)).collect(),
                res: res.iter().map(|r| r.map(f)).collect(),
            },
            EncBody::Linear { hidden } => EncBody::Linear {
                hidden: hidden.iter().map(|l| l.map(f)).collect(),
            },
        };
        Encoder {
            body,
            code: self.code.map(f),
        }
    }

    fn for_each_mut<'s>(&'s mut self, f: &mut impl FnMut(&'s mut T)) {
        match &mut self.body {
            EncBody::Conv1d { convs, res } | EncBody::Conv2d { convs, res } => {
                for c in convs {
                    c.for_each_mut(f);
                }
                for r in res {
                    r.for_each_mut(f);
                }
            }
            EncBody::Linear { hidden } => {
                for l in hidden {
                    l.for_each_mut(f);
                }
            }
        }
        self.code.for_each_mut(f);
    }
}

impl<T> Decoder<T> {
    fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        match &self.body {
            DecBody::Conv1d { seed, res, tconvs } | DecBody::Conv2d { seed, res, tconvs } => {
                seed.visit(format!("{path}.seed"), f);
                for (i, r) in res.iter().enumerate() {
                    r.visit(format!("{path}.res{i}"), f);
                }
                for (i, t) in tconvs.iter().enumerate() {
                    t.visit(format!("{path}.tconv{i}"), f);
                }
            }
            DecBody::Linear { layers } => {
                for (i, l) in layers.iter().enumerate() {
                    l.visit(format!("{path}.lin{i}"), f);
                }
            }
        }
        self.mlp_hidden.visit(format!("{path}.adain_mlp0"), f);
        self.mlp_out.visit(format!("{path}.adain_mlp1"), f);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Decoder<U> {
        let body = match &self.body {
            DecBody::Conv1d { seed, res, tconvs } => DecBody::Conv1d {
                seed: seed.map(f),
                res: res.iter().map(|r| r.map(f)).collect(),
                tconvs: tconvs.iter().map(|t| t.map(f)).collect(),
            },
            DecBody::Conv2d { seed, res, tconvs } => DecBody::Conv2d {
                seed: seed.map(f),
                res: res.iter().map(|r| r.map(f)).collect(),
                tconvs: tconvs.iter().map(|t| t.map(f)).collect(),
            },
            DecBody::Linear { layers } => DecBody::Linear {
                layers: layers.iter().map(|l| l.map(f)).collect(),
            },
        };
        Decoder {
            body,
            mlp_hidden: self.mlp_hidden.map(f),
            mlp_out: self.mlp_out.map(f),
        }
    }

    fn for_each_mut<'s>(&'s mut self, f: &mut impl FnMut(&'s mut T)) {
        match &mut self.body {
            DecBody::Conv1d { seed, res, tconvs } | DecBody::Conv2d { seed, res, tconvs } => {
                seed.for_each_mut(f);
                for r in res {
                    r.for_each_mut(f);
                }
                for t in tconvs {
                    t.for_each_mut(f);
                }
            }
            DecBody::Linear { layers } => {
                for l in layers {
                    l.for_each_mut(f);
                }
            }
        }
        self.mlp_hidden.for_each_mut(f);
        self.mlp_out.for_each_mut(f);
    }
}

impl<T> Head<T> {
    fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        match &self.body {
            HeadBody::Linear { l1, l2 } => {
                l1.visit(format!("{path}.l1"), f);
                l2.visit(format!("{path}.l2"), f);
            }
            HeadBody::Conv1d { c1, c2 } | HeadBody::Conv2d { c1, c2 } => {
                c1.visit(format!("{path}.c1"), f);
                c2.visit(format!("{path}.c2"), f);
            }
        }
        self.out.visit(format!("{path}.out"), f);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Head<U> {
        let body = match &self.body {
            HeadBody::Linear { l1, l2 } => HeadBody::Linear {
                l1: l1.map(f),
                l2: l2.map(f),
            },
            HeadBody::Conv1d { c1, c2 } => HeadBody::Conv1d {
                c1: c1.map(f),
                c2: c2.map(f),
            },
            HeadBody::Conv2d { c1, c2 } => HeadBody::Conv2d {
                c1: c1.map(f),
                c2: c2.map(f),
            },
        };
        Head {
            body,
            out: self.out.map(f),
        }
    }

    fn for_each_mut<'s>(&'s mut self, f: &mut impl FnMut(&'s mut T)) {
        match &mut self.body {
            HeadBody::Linear { l1, l2 } => {
                l1.for_each_mut(f);
                l2.for_each_mut(f);
            }
            HeadBody::Conv1d { c1, c2 } | HeadBody::Conv2d { c1, c2 } => {
                c1.for_each_mut(f);
                c2.for_each_mut(f);
            }
        }
        self.out.for_each_mut(f);
    }
}

impl<T> ModelParamsT<T> {
    /// Walk every leaf in the declared group order:
    /// `phi_y, phi_z, theta, phi_e, phi_c`.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.phi_y.visit("phi_y", f);
        self.phi_z.visit("phi_z", f);
        self.theta.visit("theta", f);
        self.phi_e.visit("phi_e", f);
        self.phi_c.visit("phi_c", f);
    }

    /// Rebuild the same structure with transformed leaves.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParamsT<U> {
        ModelParamsT {
            phi_y: self.phi_y.map(&mut f),
            phi_z: self.phi_z.map(&mut f),
            theta: self.theta.map(&mut f),
            phi_e: self.phi_e.map(&mut f),
            phi_c: self.phi_c.map(&mut f),
        }
    }

    /// Leaves with their dotted path names, in visit order.
    pub fn named_leaves(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    /// Mutable access to every leaf, in the same order as [`Self::visit`].
    pub fn for_each_leaf_mut<'s>(&'s mut self, mut f: impl FnMut(&'s mut T)) {
        self.phi_y.for_each_mut(&mut f);
        self.phi_z.for_each_mut(&mut f);
        self.theta.for_each_mut(&mut f);
        self.phi_e.for_each_mut(&mut f);
        self.phi_c.for_each_mut(&mut f);
    }

    /// Every leaf as a mutable reference, in visit order.
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.for_each_leaf_mut(|t| out.push(t));
        out
    }
}

impl ModelParams {
    /// Total f64 count across all groups.
    pub fn numel(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// All tensors finite.
    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }
}
