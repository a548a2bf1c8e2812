//! Finite-difference verification of reverse-mode gradients: every layer
//! primitive, the distribution machinery, and the end-to-end objective on a
//! tiny architecture, each compared against central differences.

use crate::data::WAVEFORM_LEN;
use crate::error::Result;
use crate::loss::{total_loss_graph, BatchItem, Labels, LossConfig};
use crate::model::{ArchConfig, LayerForm, Model, ModelParams};
use crate::rng::{stream_rng, StreamLabel};
use crate::tensor::{
    backward, finite_diff_grad, grad_rel_err, residual_block, Graph, ResBlockParams, Tensor, Var,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One named comparison.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub rel_err: f64,
    pub passed: bool,
}

/// Full suite outcome.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().fold(0.0, |m, c| m.max(c.rel_err))
    }
}

const FD_STEP: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Check gradients of a scalar-valued graph builder w.r.t. every input.
/// The builder must be a pure function of the input list.
fn check_op(
    report: &mut Vec<CheckResult>,
    tol: f64,
    name: &str,
    inputs: &[Tensor],
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<()> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let loss = g.sum_all(out);
    let grads = backward(&g, loss)?;

    for (i, input) in inputs.iter().enumerate() {
        let ad = grads.get_or_zeros(vars[i], input.shape());
        let fd = finite_diff_grad(
            |probe| {
                let mut g2 = Graph::new();
                let vars2: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g2.constant(if j == i { probe.clone() } else { t.clone() }))
                    .collect();
                let out2 = build(&mut g2, &vars2)?;
                let l2 = g2.sum_all(out2);
                g2.value(l2).item()
            },
            input,
            FD_STEP,
        )?;
        let rel_err = grad_rel_err(&ad, &fd);
        report.push(CheckResult {
            name: format!("{name}[input {i}]"),
            rel_err,
            passed: rel_err < tol,
        });
    }
    Ok(())
}

fn primitive_checks(report: &mut Vec<CheckResult>, tol: f64, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, StreamLabel::Init, 100);

    // elementwise and scalar ops composed into one chain
    let x = rand_tensor(&mut rng, &[6], 0.2, 1.5); // positive for ln/sqrt
    let y = rand_tensor(&mut rng, &[6], -1.0, 1.0);
    check_op(report, tol, "elementwise chain", &[x, y], &|g, v| {
        let a = g.mul(v[0], v[1])?;
        let b = g.add(a, v[0])?;
        let c = g.sub(b, v[1])?;
        let d = g.leaky_relu(c, 0.2);
        let e = g.ln(v[0])?;
        let f = g.sqrt(v[0])?;
        let s = g.exp(v[1]);
        let t = g.add(e, f)?;
        let u = g.add(t, s)?;
        let w = g.add(d, u)?;
        Ok(g.affine(w, 0.7, -0.3))
    })?;

    // dense
    let x = rand_tensor(&mut rng, &[5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    check_op(report, tol, "dense", &[x, w, b], &|g, v| {
        let h = g.dense(v[0], v[1], v[2])?;
        Ok(g.leaky_relu(h, 0.2))
    })?;

    // strided conv, 1-D, with and without padding
    for (pad, stride) in [(0usize, 2usize), (1, 1), (2, 3)] {
        let x = rand_tensor(&mut rng, &[2, 13], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        check_op(
            report,
            tol,
            &format!("conv1d s{stride} p{pad}"),
            &[x, w, b],
            &move |g, v| g.conv(v[0], v[1], v[2], stride, pad),
        )?;
    }

    // strided conv, 2-D
    let x = rand_tensor(&mut rng, &[2, 6, 7], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
    check_op(report, tol, "conv2d s2 p1", &[x, w, b], &|g, v| {
        g.conv(v[0], v[1], v[2], 2, 1)
    })?;

    // transposed conv, 1-D and 2-D
    for (pad, stride) in [(0usize, 2usize), (1, 2)] {
        let x = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
        check_op(
            report,
            tol,
            &format!("conv_transpose1d s{stride} p{pad}"),
            &[x, w, b],
            &move |g, v| g.conv_transpose(v[0], v[1], v[2], stride, pad),
        )?;
    }
    let x = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
    check_op(report, tol, "conv_transpose2d s2 p0", &[x, w, b], &|g, v| {
        g.conv_transpose(v[0], v[1], v[2], 2, 0)
    })?;

    // residual block
    let x = rand_tensor(&mut rng, &[3, 9], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[3, 3, 3], -0.7, 0.7);
    let b1 = rand_tensor(&mut rng, &[3], -0.3, 0.3);
    let w2 = rand_tensor(&mut rng, &[3, 3, 3], -0.7, 0.7);
    let b2 = rand_tensor(&mut rng, &[3], -0.3, 0.3);
    check_op(
        report,
        tol,
        "residual block",
        &[x, w1, b1, w2, b2],
        &|g, v| {
            let p = ResBlockParams {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            residual_block(g, v[0], &p, 0.2)
        },
    )?;

    // global average pooling
    let x = rand_tensor(&mut rng, &[4, 11], -1.0, 1.0);
    check_op(report, tol, "global_avg_pool", &[x], &|g, v| {
        g.global_avg_pool(v[0])
    })?;

    // adaptive instance normalization
    let x = rand_tensor(&mut rng, &[3, 10], -2.0, 2.0);
    let gamma = rand_tensor(&mut rng, &[3], 0.5, 2.0);
    let beta = rand_tensor(&mut rng, &[3], -1.0, 1.0);
    check_op(report, tol, "adain", &[x, gamma, beta], &|g, v| {
        g.adain(v[0], v[1], v[2])
    })?;

    // window ops
    let x = rand_tensor(&mut rng, &[2, 9], -1.0, 1.0);
    check_op(report, tol, "reshape/crop/pad", &[x], &|g, v| {
        let r = g.reshape(v[0], vec![18])?;
        let c = g.crop(r, &[3], &[10])?;
        let p = g.zero_pad(c, &[2], &[1])?;
        let m = g.reshape(p, vec![1, 13])?;
        g.global_avg_pool(m)
    })?;

    // distribution machinery
    let mean = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    let var = rand_tensor(&mut rng, &[4], 0.3, 2.0);
    check_op(report, tol, "kl_gaussian", &[mean.clone(), var.clone()], &|g, v| {
        crate::dist::kl_gaussian_diag_var(g, v[0], v[1], 0.8)
    })?;
    let noise = rand_tensor(&mut rng, &[4], -1.5, 1.5);
    let noise2 = noise.clone();
    check_op(report, tol, "reparameterize", &[mean, var], &move |g, v| {
        let nz = g.constant(noise2.clone());
        crate::dist::reparameterize_var(g, v[0], v[1], nz)
    })?;
    let x_obs = rand_tensor(&mut rng, &[7], -1.0, 1.0);
    let x_hat = rand_tensor(&mut rng, &[7], -1.0, 1.0);
    let x_obs2 = x_obs.clone();
    check_op(report, tol, "gaussian_log_likelihood", &[x_hat], &move |g, v| {
        let xc = g.constant(x_obs2.clone());
        crate::dist::gaussian_log_likelihood_var(g, xc, v[0], 0.6)
    })?;

    Ok(())
}

/// Replace the `target`-th leaf (visit order) with `probe`.
fn with_leaf(params: &ModelParams, target: usize, probe: &Tensor) -> ModelParams {
    let mut out = params.clone();
    let mut idx = 0;
    out.for_each_leaf_mut(|t| {
        if idx == target {
            *t = probe.clone();
        }
        idx += 1;
    });
    out
}

fn end_to_end_check(
    report: &mut Vec<CheckResult>,
    tol: f64,
    seed: u64,
    tag: &str,
    cfg: ArchConfig,
) -> Result<()> {
    let model = Model::new(cfg)?;
    let params = model.init_params(seed);
    let loss_cfg = LossConfig {
        obs_var: 0.5,
        ..LossConfig::default()
    };

    // two-sample mixed batch from fixed synthetic waveforms
    let data_cfg = crate::data::SynthConfig {
        count: 2,
        seed,
        ..crate::data::SynthConfig::default()
    };
    let samples = crate::data::synth_generate(&data_cfg)?;
    let w0 = crate::data::normalize_waveform(&samples[0].waveform).0;
    let w1 = crate::data::normalize_waveform(&samples[1].waveform).0;
    let batch = [
        BatchItem {
            waveform: &w0,
            labels: Some(Labels {
                range_error_m: samples[0].range_error_m.unwrap(),
                env: samples[0].env_label.unwrap(),
                material: None,
            }),
        },
        BatchItem {
            waveform: &w1,
            labels: None,
        },
    ];

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut g = Graph::new();
        let vars = model.register_frozen(&mut g, p);
        let mut noise = stream_rng(seed, StreamLabel::Noise, 500);
        let (total, _) = total_loss_graph(&mut g, &model, &vars, &batch, &loss_cfg, &mut noise)?;
        g.value(total).item()
    };

    // reverse-mode gradients for every parameter tensor
    let mut g = Graph::new();
    let vars = model.register(&mut g, &params);
    let mut noise = stream_rng(seed, StreamLabel::Noise, 500);
    let (total, _) = total_loss_graph(&mut g, &model, &vars, &batch, &loss_cfg, &mut noise)?;
    let grads = backward(&g, total)?;

    let named: Vec<(String, &Tensor)> = params.named_leaves();
    let var_leaves: Vec<(String, &Var)> = vars.named_leaves();
    for (i, (name, tensor)) in named.iter().enumerate() {
        let ad = grads.get_or_zeros(*var_leaves[i].1, tensor.shape());
        let fd = finite_diff_grad(
            |probe| eval(&with_leaf(&params, i, probe)),
            tensor,
            FD_STEP,
        )?;
        let rel_err = grad_rel_err(&ad, &fd);
        report.push(CheckResult {
            name: format!("total_loss/{tag}/{name}"),
            rel_err,
            passed: rel_err < tol,
        });
    }
    Ok(())
}

/// Run the whole suite. Covers each primitive at random points and the
/// end-to-end objective for the default, fully convolutional 2-D, and
/// linear layer forms.
pub fn run_gradcheck(tol: f64, seed: u64) -> Result<GradCheckReport> {
    let mut checks = Vec::new();
    primitive_checks(&mut checks, tol, seed)?;

    end_to_end_check(&mut checks, tol, seed, "conv1d", ArchConfig::tiny())?;
    end_to_end_check(
        &mut checks,
        tol,
        seed,
        "conv2d",
        ArchConfig {
            ae_form: LayerForm::Conv2d,
            est_form: LayerForm::Conv2d,
            cls_form: LayerForm::Conv1d,
            ..ArchConfig::tiny()
        },
    )?;
    end_to_end_check(
        &mut checks,
        tol,
        seed,
        "linear",
        ArchConfig {
            ae_form: LayerForm::Linear,
            est_form: LayerForm::Conv1d,
            cls_form: LayerForm::Conv2d,
            ..ArchConfig::tiny()
        },
    )?;

    let _ = WAVEFORM_LEN;
    Ok(GradCheckReport {
        tolerance: tol,
        checks,
    })
}
