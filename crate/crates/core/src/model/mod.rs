//! The dual-latent network: two encoders emitting diagonal-Gaussian codes,
//! an AdaIN-conditioned decoder, an error-estimation head, and an
//! environment-classification head.
//!
//! The range encoder is strided convolutions followed by residual blocks;
//! the environment encoder is strided convolutions followed by global
//! average pooling and a dense layer; the decoder drives a convolutional
//! path from the range latent while the environment latent enters only
//! through per-channel AdaIN statistics produced by an MLP. Heads are
//! three-layer. Each sub-module's layer form is switchable between linear,
//! 1-D convolutional, and 2-D convolutional for the ablation protocol.

mod checkpoint;
mod params;

pub use checkpoint::{arch_from_kv, arch_to_kv, load_checkpoint, save_checkpoint, CheckpointMeta};
pub use params::{
    DecBody, Decoder, EncBody, Encoder, Head, HeadBody, LayerP, ModelParams, ModelParamsT,
    ModelVars, ResP,
};

use crate::data::WAVEFORM_LEN;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamLabel};
use crate::tensor::{residual_block, Graph, ResBlockParams, Tensor, Var};
use rand::Rng;

/// Leaky-rectifier slope used on encoder and head hidden layers.
const ENC_SLOPE: f64 = 0.2;

/// 2-D layer form: the padded waveform (157 -> 160, zeros appended)
/// reshapes to this map.
const AE2D_ROWS: usize = 10;
const AE2D_COLS: usize = 16;
/// Padding of the strided 2-D encoder convolutions.
const AE2D_PAD: usize = 1;

/// Layer form switch for the ablation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerForm {
    Linear,
    Conv1d,
    Conv2d,
}

impl std::fmt::Display for LayerForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LayerForm::Linear => "linear",
            LayerForm::Conv1d => "conv1d",
            LayerForm::Conv2d => "conv2d",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LayerForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LayerForm::Linear),
            "conv1d" => Ok(LayerForm::Conv1d),
            "conv2d" => Ok(LayerForm::Conv2d),
            other => Err(Error::Config(format!(
                "unknown layer form {other:?} (expected linear, conv1d, or conv2d)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Range latent dimension.
    pub d_y: usize,
    /// Environment latent dimension.
    pub d_z: usize,
    /// Strided-convolution channel widths (both encoders; decoder mirrors).
    pub channels: Vec<usize>,
    /// Strided-convolution kernel size.
    pub kernel: usize,
    /// Strided-convolution stride.
    pub stride: usize,
    /// Residual blocks in the range encoder and the decoder.
    pub res_blocks: usize,
    /// Residual-block kernel size (odd).
    pub res_kernel: usize,
    /// Decoder seed map spatial length (1-D form).
    pub decoder_len: usize,
    /// Hidden widths of the linear layer form.
    pub linear_widths: Vec<usize>,
    /// Head hidden width (linear form).
    pub head_hidden: usize,
    /// Head channel width (convolutional forms).
    pub head_channels: usize,
    /// AdaIN MLP hidden width.
    pub adain_hidden: usize,
    /// Layer form of the autoencoder (both encoders and the decoder).
    pub ae_form: LayerForm,
    /// Layer form of the error estimator head.
    pub est_form: LayerForm,
    /// Layer form of the environment classifier head.
    pub cls_form: LayerForm,
    /// Environment class count.
    pub k_env: usize,
    /// Append a material one-hot block to the classifier target.
    pub use_material: bool,
    /// Material class count (used when `use_material`).
    pub k_mat: usize,
}

impl Default for ArchConfig {
    /// Full-scale defaults.
    fn default() -> Self {
        ArchConfig {
            d_y: 16,
            d_z: 8,
            channels: vec![16, 32, 64],
            kernel: 4,
            stride: 2,
            res_blocks: 2,
            res_kernel: 3,
            decoder_len: 20,
            linear_widths: vec![96, 48],
            head_hidden: 32,
            head_channels: 4,
            adain_hidden: 32,
            ae_form: LayerForm::Conv1d,
            est_form: LayerForm::Linear,
            cls_form: LayerForm::Linear,
            k_env: 5,
            use_material: false,
            k_mat: 0,
        }
    }
}

impl ArchConfig {
    /// Reduced widths for desk-scale training and tests.
    pub fn desk() -> Self {
        ArchConfig {
            d_y: 6,
            d_z: 3,
            channels: vec![6, 8, 10],
            res_blocks: 1,
            decoder_len: 18,
            linear_widths: vec![48, 24],
            head_hidden: 12,
            adain_hidden: 8,
            k_env: 2,
            ..ArchConfig::default()
        }
    }

    /// Tiny architecture for gradient checking.
    pub fn tiny() -> Self {
        ArchConfig {
            d_y: 3,
            d_z: 2,
            channels: vec![2, 3],
            res_blocks: 1,
            decoder_len: 6,
            linear_widths: vec![12, 8],
            head_hidden: 4,
            head_channels: 2,
            adain_hidden: 4,
            k_env: 2,
            ..ArchConfig::default()
        }
    }

    /// Classifier output dimension.
    pub fn cls_out(&self) -> usize {
        self.k_env + if self.use_material { self.k_mat } else { 0 }
    }
}

/// Extent after a valid strided convolution, checking feasibility.
fn conv_chain(mut l: usize, k: usize, s: usize, pad: usize, n: usize, what: &str) -> Result<usize> {
    for i in 0..n {
        if l + 2 * pad < k {
            return Err(Error::Config(format!(
                "{what}: spatial extent {l} too small for kernel {k} at layer {i}"
            )));
        }
        l = (l + 2 * pad - k) / s + 1;
    }
    Ok(l)
}

/// Near-square factorization r x c = d with r <= c.
fn factor2d(d: usize) -> (usize, usize) {
    let mut r = (d as f64).sqrt() as usize;
    while r > 1 && d % r != 0 {
        r -= 1;
    }
    (r.max(1), d / r.max(1))
}

/// Shapes derived from the configuration, shared by init and forward.
#[derive(Debug, Clone)]
struct Plan {
    /// Feature dim entering the range-encoder code layer.
    feat_y: usize,
    /// Feature dim entering the environment-encoder code layer.
    feat_z: usize,
    /// Decoder seed map: channels and spatial extents.
    dec_seed_ch: usize,
    dec_seed_spatial: Vec<usize>,
    /// Channels of each AdaIN site, in forward order.
    adain_sites: Vec<usize>,
}

/// The network: configuration plus derived shape plan.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ArchConfig,
    plan: Plan,
}

impl Model {
    pub fn new(cfg: ArchConfig) -> Result<Self> {
        if cfg.d_y == 0
            || cfg.d_z == 0
            || cfg.channels.is_empty()
            || cfg.k_env == 0
            || cfg.kernel == 0
            || cfg.stride == 0
            || cfg.decoder_len == 0
            || cfg.head_hidden == 0
            || cfg.head_channels == 0
            || cfg.adain_hidden == 0
            || cfg.linear_widths.len() != 2
        {
            return Err(Error::Config(format!("invalid architecture config: {cfg:?}")));
        }
        if cfg.res_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "residual kernel must be odd, got {}",
                cfg.res_kernel
            )));
        }
        if cfg.use_material && cfg.k_mat == 0 {
            return Err(Error::Config(
                "use_material requires k_mat > 0".into(),
            ));
        }
        let plan = match cfg.ae_form {
            LayerForm::Conv1d => {
                let l_end = conv_chain(
                    WAVEFORM_LEN,
                    cfg.kernel,
                    cfg.stride,
                    0,
                    cfg.channels.len(),
                    "1-D encoder",
                )?;
                let c_last = *cfg.channels.last().unwrap();
                Plan {
                    feat_y: c_last * l_end,
                    feat_z: c_last,
                    dec_seed_ch: c_last,
                    dec_seed_spatial: vec![cfg.decoder_len],
                    adain_sites: vec![c_last; 2 * cfg.res_blocks],
                }
            }
            LayerForm::Conv2d => {
                if cfg.channels.len() < 2 {
                    return Err(Error::Config(
                        "2-D layer form needs at least two channel widths".into(),
                    ));
                }
                debug_assert_eq!(AE2D_ROWS * AE2D_COLS, WAVEFORM_LEN + 3);
                let h = conv_chain(AE2D_ROWS, cfg.kernel, cfg.stride, AE2D_PAD, 2, "2-D encoder")?;
                let w = conv_chain(AE2D_COLS, cfg.kernel, cfg.stride, AE2D_PAD, 2, "2-D encoder")?;
                let c1 = cfg.channels[1];
                Plan {
                    feat_y: c1 * h * w,
                    feat_z: c1,
                    dec_seed_ch: c1,
                    dec_seed_spatial: vec![h, w],
                    adain_sites: vec![c1; 2 * cfg.res_blocks],
                }
            }
            LayerForm::Linear => Plan {
                feat_y: cfg.linear_widths[1],
                feat_z: cfg.linear_widths[1],
                dec_seed_ch: 1,
                dec_seed_spatial: vec![cfg.linear_widths[1]],
                adain_sites: vec![1, 1],
            },
        };
        Ok(Model { cfg, plan })
    }

    pub fn cfg(&self) -> &ArchConfig {
        &self.cfg
    }

    /// Deterministic fan-in-scaled uniform initialization; biases zero.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut init = Init {
            rng: stream_rng(seed, StreamLabel::Init, 0),
        };
        let cfg = &self.cfg;
        let enc_body = |init: &mut Init| match cfg.ae_form {
            LayerForm::Conv1d => EncBody::Conv1d {
                convs: conv_stack_params(init, &cfg.channels, cfg.kernel, 1),
                res: Vec::new(),
            },
            LayerForm::Conv2d => EncBody::Conv2d {
                convs: conv_stack_params(init, &cfg.channels[..2], cfg.kernel, 2),
                res: Vec::new(),
            },
            LayerForm::Linear => EncBody::Linear {
                hidden: vec![
                    init.dense(WAVEFORM_LEN, cfg.linear_widths[0]),
                    init.dense(cfg.linear_widths[0], cfg.linear_widths[1]),
                ],
            },
        };
        let res_stack = |init: &mut Init, n: usize| -> Vec<ResP<Tensor>> {
            let c = self.plan.dec_seed_ch;
            let dims = self.conv_dims();
            (0..n)
                .map(|_| ResP {
                    c1: init.conv(c, c, cfg.res_kernel, dims),
                    c2: init.conv(c, c, cfg.res_kernel, dims),
                })
                .collect()
        };

        // range encoder: body + residual blocks + code layer
        let mut phi_y_body = enc_body(&mut init);
        if let EncBody::Conv1d { res, .. } | EncBody::Conv2d { res, .. } = &mut phi_y_body {
            *res = res_stack(&mut init, cfg.res_blocks);
        }
        let phi_y = Encoder {
            body: phi_y_body,
            code: init.dense(self.plan.feat_y, 2 * cfg.d_y),
        };

        // environment encoder: body + pooling + code layer
        let phi_z = Encoder {
            body: enc_body(&mut init),
            code: init.dense(self.plan.feat_z, 2 * cfg.d_z),
        };

        // decoder
        let seed_numel: usize =
            self.plan.dec_seed_ch * self.plan.dec_seed_spatial.iter().product::<usize>();
        let theta_body = match cfg.ae_form {
            LayerForm::Conv1d => DecBody::Conv1d {
                seed: init.dense(cfg.d_y, seed_numel),
                res: res_stack(&mut init, cfg.res_blocks),
                tconvs: tconv_stack_params(&mut init, &cfg.channels, cfg.kernel, 1),
            },
            LayerForm::Conv2d => DecBody::Conv2d {
                seed: init.dense(cfg.d_y, seed_numel),
                res: res_stack(&mut init, cfg.res_blocks),
                tconvs: tconv_stack_params(&mut init, &cfg.channels[..2], cfg.kernel, 2),
            },
            LayerForm::Linear => DecBody::Linear {
                layers: vec![
                    init.dense(cfg.d_y, cfg.linear_widths[1]),
                    init.dense(cfg.linear_widths[1], cfg.linear_widths[0]),
                    init.dense(cfg.linear_widths[0], WAVEFORM_LEN),
                ],
            },
        };
        let n_adain: usize = self.plan.adain_sites.iter().map(|c| 2 * c).sum();
        let theta = Decoder {
            body: theta_body,
            mlp_hidden: init.dense(cfg.d_z, cfg.adain_hidden),
            mlp_out: init.dense(cfg.adain_hidden, n_adain),
        };

        let phi_e = head_params(&mut init, cfg, cfg.est_form, cfg.d_y, 1);
        let phi_c = head_params(&mut init, cfg, cfg.cls_form, cfg.d_z, cfg.cls_out());

        ModelParamsT {
            phi_y,
            phi_z,
            theta,
            phi_e,
            phi_c,
        }
    }

    fn conv_dims(&self) -> usize {
        match self.cfg.ae_form {
            LayerForm::Conv2d => 2,
            _ => 1,
        }
    }

    /// Insert parameters as grad-tracked graph leaves.
    pub fn register(&self, g: &mut Graph, params: &ModelParams) -> ModelVars {
        params.map(|t| g.param(t.clone()))
    }

    /// Insert parameters as constants (evaluation without gradients).
    pub fn register_frozen(&self, g: &mut Graph, params: &ModelParams) -> ModelVars {
        params.map(|t| g.constant(t.clone()))
    }

    /// Shared encoder body: waveform `[157]` to a feature map/vector.
    fn encode_body(
        &self,
        g: &mut Graph,
        body: &EncBody<Var>,
        x: Var,
    ) -> Result<Var> {
        match body {
            EncBody::Conv1d { convs, res } => {
                let mut h = g.reshape(x, vec![1, WAVEFORM_LEN])?;
                for layer in convs {
                    h = g.conv(h, layer.w, layer.b, self.cfg.stride, 0)?;
                    h = g.leaky_relu(h, ENC_SLOPE);
                }
                for r in res {
                    h = residual_block(g, h, &res_params(r), ENC_SLOPE)?;
                }
                Ok(h)
            }
            EncBody::Conv2d { convs, res } => {
                let padded = g.zero_pad(x, &[0], &[AE2D_ROWS * AE2D_COLS - WAVEFORM_LEN])?;
                let mut h = g.reshape(padded, vec![1, AE2D_ROWS, AE2D_COLS])?;
                for layer in convs {
                    h = g.conv(h, layer.w, layer.b, self.cfg.stride, AE2D_PAD)?;
                    h = g.leaky_relu(h, ENC_SLOPE);
                }
                for r in res {
                    h = residual_block(g, h, &res_params(r), ENC_SLOPE)?;
                }
                Ok(h)
            }
            EncBody::Linear { hidden } => {
                let mut h = x;
                for layer in hidden {
                    h = g.dense(h, layer.w, layer.b)?;
                    h = g.leaky_relu(h, ENC_SLOPE);
                }
                Ok(h)
            }
        }
    }

    fn split_code(&self, g: &mut Graph, code: Var, d: usize) -> Result<(Var, Var)> {
        let mean = g.crop(code, &[0], &[d])?;
        let logvar = g.crop(code, &[d], &[d])?;
        let var = g.exp(logvar);
        Ok((mean, var))
    }

    /// Range-feature posterior: waveform `[157]` to `(mean, variance)` of
    /// dimension `d_y`. Variances are positive by construction.
    pub fn encode_y(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<(Var, Var)> {
        self.check_waveform(g, x)?;
        let h = self.encode_body(g, &vars.phi_y.body, x)?;
        let flat = match vars.phi_y.body {
            EncBody::Linear { .. } => h,
            _ => {
                let n = g.value(h).numel();
                g.reshape(h, vec![n])?
            }
        };
        let code = g.dense(flat, vars.phi_y.code.w, vars.phi_y.code.b)?;
        self.split_code(g, code, self.cfg.d_y)
    }

    /// Environment-feature posterior: waveform `[157]` to `(mean, variance)`
    /// of dimension `d_z`; convolutional bodies pool before the code layer.
    pub fn encode_z(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<(Var, Var)> {
        self.check_waveform(g, x)?;
        let h = self.encode_body(g, &vars.phi_z.body, x)?;
        let feat = match vars.phi_z.body {
            EncBody::Linear { .. } => h,
            _ => g.global_avg_pool(h)?,
        };
        let code = g.dense(feat, vars.phi_z.code.w, vars.phi_z.code.b)?;
        self.split_code(g, code, self.cfg.d_z)
    }

    fn check_waveform(&self, g: &Graph, x: Var) -> Result<()> {
        if g.value(x).shape() != [WAVEFORM_LEN] {
            return Err(Error::Shape(format!(
                "expected waveform of shape [{WAVEFORM_LEN}], got {:?}",
                g.value(x).shape()
            )));
        }
        Ok(())
    }

    /// AdaIN parameters from the environment latent: per site,
    /// `gamma = 1 + raw`, `beta = raw`.
    fn adain_params(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        z: Var,
    ) -> Result<Vec<(Var, Var)>> {
        let h = g.dense(z, vars.theta.mlp_hidden.w, vars.theta.mlp_hidden.b)?;
        let h = g.leaky_relu(h, ENC_SLOPE);
        let raw = g.dense(h, vars.theta.mlp_out.w, vars.theta.mlp_out.b)?;
        let mut out = Vec::with_capacity(self.plan.adain_sites.len());
        let mut off = 0;
        for &c in &self.plan.adain_sites {
            let raw_gamma = g.crop(raw, &[off], &[c])?;
            let gamma = g.affine(raw_gamma, 1.0, 1.0);
            let beta = g.crop(raw, &[off + c], &[c])?;
            out.push((gamma, beta));
            off += 2 * c;
        }
        Ok(out)
    }

    /// Residual block with AdaIN after each convolution.
    fn adain_res_block(
        &self,
        g: &mut Graph,
        x: Var,
        r: &ResP<Var>,
        site0: (Var, Var),
        site1: (Var, Var),
    ) -> Result<Var> {
        let pad = (self.cfg.res_kernel - 1) / 2;
        let h = g.conv(x, r.c1.w, r.c1.b, 1, pad)?;
        let h = g.adain(h, site0.0, site0.1)?;
        let h = g.relu(h);
        let h = g.conv(h, r.c2.w, r.c2.b, 1, pad)?;
        let h = g.adain(h, site1.0, site1.1)?;
        g.add(x, h)
    }

    /// Reconstruct a waveform from the two latents. The environment latent
    /// enters only through the AdaIN statistics.
    pub fn decode(&self, g: &mut Graph, vars: &ModelVars, y: Var, z: Var) -> Result<Var> {
        if g.value(y).shape() != [self.cfg.d_y] || g.value(z).shape() != [self.cfg.d_z] {
            return Err(Error::Shape(format!(
                "decode: latents {:?} / {:?} do not match (d_y {}, d_z {})",
                g.value(y).shape(),
                g.value(z).shape(),
                self.cfg.d_y,
                self.cfg.d_z
            )));
        }
        let sites = self.adain_params(g, vars, z)?;
        match &vars.theta.body {
            DecBody::Conv1d { seed, res, tconvs } | DecBody::Conv2d { seed, res, tconvs } => {
                let s = g.dense(y, seed.w, seed.b)?;
                let mut shape = vec![self.plan.dec_seed_ch];
                shape.extend(&self.plan.dec_seed_spatial);
                let mut h = g.reshape(s, shape)?;
                for (i, r) in res.iter().enumerate() {
                    h = self.adain_res_block(g, h, r, sites[2 * i], sites[2 * i + 1])?;
                }
                for (i, t) in tconvs.iter().enumerate() {
                    h = g.conv_transpose(h, t.w, t.b, self.cfg.stride, 0)?;
                    if i + 1 < tconvs.len() {
                        h = g.relu(h);
                    }
                }
                self.fit_waveform(g, h)
            }
            DecBody::Linear { layers } => {
                let mut h = y;
                for (i, layer) in layers.iter().enumerate() {
                    h = g.dense(h, layer.w, layer.b)?;
                    if i + 1 < layers.len() {
                        let n = g.value(h).numel();
                        let map = g.reshape(h, vec![1, n])?;
                        let conditioned = g.adain(map, sites[i].0, sites[i].1)?;
                        let back = g.reshape(conditioned, vec![n])?;
                        h = g.relu(back);
                    }
                }
                Ok(h)
            }
        }
    }

    /// Center-crop or right-pad the decoder output to exactly 157 samples.
    fn fit_waveform(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let shape = g.value(h).shape().to_vec();
        let flat = match shape.len() {
            3 => {
                // 2-D path: crop the map back to the reshape geometry, then
                // flatten and drop the padding tail.
                let (hh, ww) = (shape[1], shape[2]);
                if hh < AE2D_ROWS || ww < AE2D_COLS {
                    return Err(Error::Shape(format!(
                        "decoder map {shape:?} smaller than [{AE2D_ROWS}, {AE2D_COLS}]"
                    )));
                }
                let off = [0, (hh - AE2D_ROWS) / 2, (ww - AE2D_COLS) / 2];
                let m = g.crop(h, &off, &[1, AE2D_ROWS, AE2D_COLS])?;
                g.reshape(m, vec![AE2D_ROWS * AE2D_COLS])?
            }
            2 => {
                let n = shape[1];
                g.reshape(h, vec![n])?
            }
            _ => h,
        };
        let n = g.value(flat).numel();
        if n >= WAVEFORM_LEN {
            let off = (n - WAVEFORM_LEN) / 2;
            g.crop(flat, &[off], &[WAVEFORM_LEN])
        } else {
            g.zero_pad(flat, &[0], &[WAVEFORM_LEN - n])
        }
    }

    fn head_forward(&self, g: &mut Graph, head: &Head<Var>, input: Var) -> Result<Var> {
        let d = g.value(input).numel();
        let feat = match &head.body {
            HeadBody::Linear { l1, l2 } => {
                let h = g.dense(input, l1.w, l1.b)?;
                let h = g.leaky_relu(h, ENC_SLOPE);
                let h = g.dense(h, l2.w, l2.b)?;
                g.leaky_relu(h, ENC_SLOPE)
            }
            HeadBody::Conv1d { c1, c2 } => {
                let mut h = g.reshape(input, vec![1, d])?;
                for layer in [c1, c2] {
                    h = g.conv(h, layer.w, layer.b, 1, 1)?;
                    h = g.leaky_relu(h, ENC_SLOPE);
                }
                let n = g.value(h).numel();
                g.reshape(h, vec![n])?
            }
            HeadBody::Conv2d { c1, c2 } => {
                let (r, c) = factor2d(d);
                let mut h = g.reshape(input, vec![1, r, c])?;
                for layer in [c1, c2] {
                    h = g.conv(h, layer.w, layer.b, 1, 1)?;
                    h = g.leaky_relu(h, ENC_SLOPE);
                }
                let n = g.value(h).numel();
                g.reshape(h, vec![n])?
            }
        };
        g.dense(feat, head.out.w, head.out.b)
    }

    /// Predicted ranging error (meters) from a range latent `[d_y]`.
    pub fn estimate_error(&self, g: &mut Graph, vars: &ModelVars, y: Var) -> Result<Var> {
        if g.value(y).shape() != [self.cfg.d_y] {
            return Err(Error::Shape(format!(
                "estimate_error: latent {:?}, expected [{}]",
                g.value(y).shape(),
                self.cfg.d_y
            )));
        }
        self.head_forward(g, &vars.phi_e, y)
    }

    /// Environment class scores from an environment latent `[d_z]`.
    pub fn classify_env(&self, g: &mut Graph, vars: &ModelVars, z: Var) -> Result<Var> {
        if g.value(z).shape() != [self.cfg.d_z] {
            return Err(Error::Shape(format!(
                "classify_env: latent {:?}, expected [{}]",
                g.value(z).shape(),
                self.cfg.d_z
            )));
        }
        self.head_forward(g, &vars.phi_c, z)
    }

    /// Value-level deployment path: predicted ranging error for one
    /// waveform, reading the head off the posterior mean.
    pub fn predict_error(&self, params: &ModelParams, waveform: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.register_frozen(&mut g, params);
        let x = g.constant(Tensor::new(vec![WAVEFORM_LEN], waveform.to_vec())?);
        let (mean, _) = self.encode_y(&mut g, &vars, x)?;
        let est = self.estimate_error(&mut g, &vars, mean)?;
        g.value(est).item()
    }

    /// Value-level class scores from the posterior mean of `z`.
    pub fn predict_class_scores(
        &self,
        params: &ModelParams,
        waveform: &[f64],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.register_frozen(&mut g, params);
        let x = g.constant(Tensor::new(vec![WAVEFORM_LEN], waveform.to_vec())?);
        let (mean, _) = self.encode_z(&mut g, &vars, x)?;
        let scores = self.classify_env(&mut g, &vars, mean)?;
        Ok(g.value(scores).data().to_vec())
    }
}

fn res_params(r: &ResP<Var>) -> ResBlockParams {
    ResBlockParams {
        w1: r.c1.w,
        b1: r.c1.b,
        w2: r.c2.w,
        b2: r.c2.b,
    }
}

struct Init {
    rng: rand_chacha::ChaCha8Rng,
}

impl Init {
    fn tensor(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn dense(&mut self, d_in: usize, d_out: usize) -> LayerP<Tensor> {
        LayerP {
            w: self.tensor(vec![d_out, d_in], d_in),
            b: Tensor::zeros(vec![d_out]),
        }
    }

    fn conv(&mut self, c_out: usize, c_in: usize, k: usize, dims: usize) -> LayerP<Tensor> {
        let (shape, fan_in) = if dims == 1 {
            (vec![c_out, c_in, k], c_in * k)
        } else {
            (vec![c_out, c_in, k, k], c_in * k * k)
        };
        LayerP {
            w: self.tensor(shape, fan_in),
            b: Tensor::zeros(vec![c_out]),
        }
    }
}

/// Strided conv stack `1 -> channels[0] -> ... -> channels[n-1]`.
fn conv_stack_params(
    init: &mut Init,
    channels: &[usize],
    k: usize,
    dims: usize,
) -> Vec<LayerP<Tensor>> {
    let mut c_in = 1;
    let mut out = Vec::with_capacity(channels.len());
    for &c in channels {
        out.push(init.conv(c, c_in, k, dims));
        c_in = c;
    }
    out
}

/// Transposed conv stack mirroring `conv_stack_params`:
/// `channels[n-1] -> ... -> channels[0] -> 1`. Kernels are laid out
/// `[c_in, c_out, k...]` as the transposed op expects.
fn tconv_stack_params(
    init: &mut Init,
    channels: &[usize],
    k: usize,
    dims: usize,
) -> Vec<LayerP<Tensor>> {
    let mut widths: Vec<usize> = channels.to_vec();
    widths.reverse();
    widths.push(1);
    let mut out = Vec::with_capacity(widths.len() - 1);
    for win in widths.windows(2) {
        let (c_a, c_b) = (win[0], win[1]);
        let (shape, fan_in) = if dims == 1 {
            (vec![c_a, c_b, k], c_a * k)
        } else {
            (vec![c_a, c_b, k, k], c_a * k * k)
        };
        out.push(LayerP {
            w: init.tensor(shape, fan_in),
            b: Tensor::zeros(vec![c_b]),
        });
    }
    out
}

fn head_params(
    init: &mut Init,
    cfg: &ArchConfig,
    form: LayerForm,
    d_in: usize,
    d_out: usize,
) -> Head<Tensor> {
    let hc = cfg.head_channels;
    let (body, feat) = match form {
        LayerForm::Linear => (
            HeadBody::Linear {
                l1: init.dense(d_in, cfg.head_hidden),
                l2: init.dense(cfg.head_hidden, cfg.head_hidden),
            },
            cfg.head_hidden,
        ),
        LayerForm::Conv1d => (
            HeadBody::Conv1d {
                c1: init.conv(hc, 1, 3, 1),
                c2: init.conv(hc, hc, 3, 1),
            },
            hc * d_in,
        ),
        LayerForm::Conv2d => (
            HeadBody::Conv2d {
                c1: init.conv(hc, 1, 3, 2),
                c2: init.conv(hc, hc, 3, 2),
            },
            hc * d_in,
        ),
    };
    Head {
        body,
        out: init.dense(feat, d_out),
    }
}
