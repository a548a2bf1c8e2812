//! The training objective: Monte-Carlo reconstruction plus closed-form KL
//! terms (the parametric evidence bound), the unsupervised term summing the
//! negative bound over all waveforms, the supervised regression and
//! classification term over the labeled subset, and the weighted total.

use crate::dist::{
    gaussian_log_likelihood_var, kl_gaussian_diag_var, reparameterize_var, PriorConfig,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelVars};
use crate::tensor::{Graph, Tensor, Var};
use rand::Rng;

/// Objective hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda_unsup: f64,
    pub lambda_sup: f64,
    /// Monte-Carlo draw count L for the reconstruction expectation.
    pub mc_draws: usize,
    /// Decoder observation variance.
    pub obs_var: f64,
    pub prior: PriorConfig,
    /// Feed sampled latents (first draw) to the heads instead of the
    /// posterior means.
    pub heads_use_samples: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_unsup: 10.0,
            lambda_sup: 1.0,
            mc_draws: 1,
            obs_var: 1.0,
            prior: PriorConfig::default(),
            heads_use_samples: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_unsup < 0.0 || self.lambda_sup < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.mc_draws == 0 {
            return Err(Error::Config("Monte-Carlo draw count must be >= 1".into()));
        }
        if self.obs_var <= 0.0 {
            return Err(Error::Config(format!(
                "observation variance must be > 0, got {}",
                self.obs_var
            )));
        }
        self.prior.validate()
    }
}

/// Labels of one fully labeled sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub range_error_m: f64,
    pub env: usize,
    pub material: Option<usize>,
}

/// One batch element: a normalized waveform plus optional labels.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub waveform: &'a [f64],
    pub labels: Option<Labels>,
}

/// Per-batch sums of every objective component.
/// `total = lambda_unsup * unsup + lambda_sup * sup` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub unsup: f64,
    pub sup: f64,
    /// Sum of Monte-Carlo reconstruction log-likelihood terms.
    pub recon: f64,
    pub kl_y: f64,
    pub kl_z: f64,
}

/// One pair of standard-normal draws `(eps_y, eps_z)` for a single
/// Monte-Carlo sample.
pub type DrawPair = (Vec<f64>, Vec<f64>);

/// Sample `l` reparameterization draw pairs from a seeded stream.
pub fn sample_draws<R: Rng>(rng: &mut R, l: usize, d_y: usize, d_z: usize) -> Vec<DrawPair> {
    (0..l)
        .map(|_| {
            let ey = (0..d_y)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            let ez = (0..d_z)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            (ey, ez)
        })
        .collect()
}

/// Graph nodes produced by a per-sample bound evaluation.
struct SampleBound {
    elbo: Var,
    recon: Var,
    kl_y: Var,
    kl_z: Var,
    /// First-draw latent samples (for sampled-input heads).
    y0: Var,
    z0: Var,
    /// Posterior means (default head inputs).
    mu_y: Var,
    mu_z: Var,
}

/// Per-sample parametric bound:
/// `(1/L) sum_l log p(x | y_l, z_l) - KL(q_y || p_y) - KL(q_z || p_z)`.
fn sample_bound(
    g: &mut Graph,
    model: &Model,
    vars: &ModelVars,
    x: Var,
    draws: &[DrawPair],
    cfg: &LossConfig,
) -> Result<SampleBound> {
    let (mu_y, var_y) = model.encode_y(g, vars, x)?;
    let (mu_z, var_z) = model.encode_z(g, vars, x)?;
    let kl_y = kl_gaussian_diag_var(g, mu_y, var_y, cfg.prior.eps_y)?;
    let kl_z = kl_gaussian_diag_var(g, mu_z, var_z, cfg.prior.eps_z)?;

    let mut ll_sum: Option<Var> = None;
    let mut first = None;
    for (ey, ez) in draws {
        let ey_var = g.constant(Tensor::from_vec(ey.clone()));
        let ez_var = g.constant(Tensor::from_vec(ez.clone()));
        let y = reparameterize_var(g, mu_y, var_y, ey_var)?;
        let z = reparameterize_var(g, mu_z, var_z, ez_var)?;
        if first.is_none() {
            first = Some((y, z));
        }
        let x_hat = model.decode(g, vars, y, z)?;
        let ll = gaussian_log_likelihood_var(g, x, x_hat, cfg.obs_var)?;
        ll_sum = Some(match ll_sum {
            Some(acc) => g.add(acc, ll)?,
            None => ll,
        });
    }
    let recon = g.affine(ll_sum.unwrap(), 1.0 / draws.len() as f64, 0.0);
    let e1 = g.sub(recon, kl_y)?;
    let elbo = g.sub(e1, kl_z)?;
    let (y0, z0) = first.unwrap();
    Ok(SampleBound {
        elbo,
        recon,
        kl_y,
        kl_z,
        y0,
        z0,
        mu_y,
        mu_z,
    })
}

fn one_hot(idx: usize, len: usize, what: &str) -> Result<Vec<f64>> {
    if idx >= len {
        return Err(Error::Data {
            row: None,
            msg: format!("{what} label {idx} out of range (expected < {len})"),
        });
    }
    let mut v = vec![0.0; len];
    v[idx] = 1.0;
    Ok(v)
}

/// Classifier target: environment one-hot, optionally concatenated with a
/// material one-hot block.
fn class_target(model: &Model, labels: &Labels) -> Result<Vec<f64>> {
    let cfg = model.cfg();
    let mut t = one_hot(labels.env, cfg.k_env, "environment")?;
    if cfg.use_material {
        let m = labels.material.ok_or(Error::Data {
            row: None,
            msg: "material label required by this configuration".into(),
        })?;
        t.extend(one_hot(m, cfg.k_mat, "material")?);
    }
    Ok(t)
}

/// Supervised term for one labeled sample given its latent head inputs:
/// `(f_est(y) - dd)^2 + ||f_cls(z) - onehot(k)||^2`.
fn sample_supervised(
    g: &mut Graph,
    model: &Model,
    vars: &ModelVars,
    head_y: Var,
    head_z: Var,
    labels: &Labels,
) -> Result<Var> {
    let est = model.estimate_error(g, vars, head_y)?;
    let target = g.constant(Tensor::from_vec(vec![labels.range_error_m]));
    let err = g.sub(est, target)?;
    let err_sq = g.mul(err, err)?;

    let scores = model.classify_env(g, vars, head_z)?;
    let tgt = g.constant(Tensor::from_vec(class_target(model, labels)?));
    let diff = g.sub(scores, tgt)?;
    let diff_sq = g.mul(diff, diff)?;
    let cls = g.sum_all(diff_sq);
    g.add(err_sq, cls)
}

/// Build the full objective over a mixed batch. Returns the total-loss node
/// (a batch sum; scale it before backward if a mean is wanted) and the
/// value-level breakdown.
pub fn total_loss_graph<R: Rng>(
    g: &mut Graph,
    model: &Model,
    vars: &ModelVars,
    batch: &[BatchItem],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("loss over an empty batch".into()));
    }
    let (d_y, d_z) = (model.cfg().d_y, model.cfg().d_z);
    let mut unsup: Option<Var> = None;
    let mut sup: Option<Var> = None;
    let mut recon_sum = 0.0;
    let mut kl_y_sum = 0.0;
    let mut kl_z_sum = 0.0;

    for item in batch {
        let x = g.constant(Tensor::new(vec![item.waveform.len()], item.waveform.to_vec())?);
        let draws = sample_draws(rng, cfg.mc_draws, d_y, d_z);
        let b = sample_bound(g, model, vars, x, &draws, cfg)?;
        recon_sum += g.value(b.recon).item()?;
        kl_y_sum += g.value(b.kl_y).item()?;
        kl_z_sum += g.value(b.kl_z).item()?;
        let neg = g.affine(b.elbo, -1.0, 0.0);
        unsup = Some(match unsup {
            Some(acc) => g.add(acc, neg)?,
            None => neg,
        });
        if let Some(labels) = &item.labels {
            let (hy, hz) = if cfg.heads_use_samples {
                (b.y0, b.z0)
            } else {
                (b.mu_y, b.mu_z)
            };
            let s = sample_supervised(g, model, vars, hy, hz, labels)?;
            sup = Some(match sup {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
    }

    let unsup = unsup.unwrap();
    let sup = match sup {
        Some(s) => s,
        None => g.scalar(0.0),
    };
    let wu = g.affine(unsup, cfg.lambda_unsup, 0.0);
    let ws = g.affine(sup, cfg.lambda_sup, 0.0);
    let total = g.add(wu, ws)?;

    let breakdown = LossBreakdown {
        total: g.value(total).item()?,
        unsup: g.value(unsup).item()?,
        sup: g.value(sup).item()?,
        recon: recon_sum,
        kl_y: kl_y_sum,
        kl_z: kl_z_sum,
    };
    Ok((total, breakdown))
}

/// Value-level parametric bound for one waveform under explicit draws.
pub fn elbo(
    model: &Model,
    params: &crate::model::ModelParams,
    waveform: &[f64],
    draws: &[DrawPair],
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    if draws.is_empty() {
        return Err(Error::Config("elbo needs at least one draw".into()));
    }
    let mut g = Graph::new();
    let vars = model.register_frozen(&mut g, params);
    let x = g.constant(Tensor::new(vec![waveform.len()], waveform.to_vec())?);
    let b = sample_bound(&mut g, model, &vars, x, draws, cfg)?;
    g.value(b.elbo).item()
}

/// Value-level unsupervised term: the negative bound summed over the
/// unlabeled and labeled waveforms. `per_sample_draws` walks the unlabeled
/// batch then the labeled batch.
pub fn unsupervised_loss(
    model: &Model,
    params: &crate::model::ModelParams,
    unlabeled: &[&[f64]],
    labeled: &[&[f64]],
    per_sample_draws: &[Vec<DrawPair>],
    cfg: &LossConfig,
) -> Result<f64> {
    if unlabeled.is_empty() && labeled.is_empty() {
        return Err(Error::Config(
            "unsupervised loss over an empty sample union".into(),
        ));
    }
    if per_sample_draws.len() != unlabeled.len() + labeled.len() {
        return Err(Error::Config(format!(
            "{} draw lists for {} samples",
            per_sample_draws.len(),
            unlabeled.len() + labeled.len()
        )));
    }
    let mut acc = 0.0;
    for (w, draws) in unlabeled.iter().chain(labeled).zip(per_sample_draws) {
        acc -= elbo(model, params, w, draws, cfg)?;
    }
    Ok(acc)
}

/// Value-level supervised term over a labeled batch; heads read the
/// posterior means. Missing labels are rejected.
pub fn supervised_loss(
    model: &Model,
    params: &crate::model::ModelParams,
    batch: &[BatchItem],
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.register_frozen(&mut g, params);
    let mut acc = 0.0;
    for item in batch {
        let labels = item.labels.as_ref().ok_or(Error::Data {
            row: None,
            msg: "supervised loss requires labels for every sample".into(),
        })?;
        let x = g.constant(Tensor::new(vec![item.waveform.len()], item.waveform.to_vec())?);
        let (mu_y, _) = model.encode_y(&mut g, &vars, x)?;
        let (mu_z, _) = model.encode_z(&mut g, &vars, x)?;
        let s = sample_supervised(&mut g, model, &vars, mu_y, mu_z, labels)?;
        acc += g.value(s).item()?;
    }
    Ok(acc)
}

/// Value-level total loss with draws from a seeded stream.
pub fn total_loss<R: Rng>(
    model: &Model,
    params: &crate::model::ModelParams,
    batch: &[BatchItem],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let vars = model.register_frozen(&mut g, params);
    let (_, breakdown) = total_loss_graph(&mut g, model, &vars, batch, cfg, rng)?;
    Ok(breakdown)
}
