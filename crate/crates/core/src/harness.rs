//! Training loop, evaluation metrics, mitigation, the supervision-rate
//! sweep, and the layer-form ablation, plus the column-text artifacts they
//! emit (learning curves and metrics tables).

use crate::data::{normalize_waveform, split_supervision, WaveformSample, WAVEFORM_LEN};
use crate::error::{Error, Result};
use crate::loss::{total_loss_graph, BatchItem, Labels, LossConfig};
use crate::model::{
    save_checkpoint, ArchConfig, CheckpointMeta, LayerForm, Model, ModelParams,
};
use crate::optim::{adam_step, lr_at, AdamState, LrSchedule};
use crate::rng::{stream_rng, StreamLabel};
use crate::tensor::{backward, Graph, Tensor};
use rand::seq::SliceRandom;
use std::path::Path;
use std::time::Instant;

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: LrSchedule,
    pub loss: LossConfig,
    pub arch: ArchConfig,
    /// Supervision rate: fraction of training samples whose labels are used.
    pub eta: f64,
    /// Checkpoint every N epochs (0: only at the end, when a path is given).
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    /// Full-scale profile: 500 epochs at the published learning schedule.
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            seed: 1,
            lr: LrSchedule::default(),
            loss: LossConfig::default(),
            arch: ArchConfig::default(),
            eta: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: reduced widths, 100 epochs, a faster schedule,
    /// and a tighter observation variance. This is the profile tests run.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 100,
            arch: ArchConfig::desk(),
            lr: LrSchedule {
                base: 1e-3,
                half_period: 40,
            },
            loss: LossConfig {
                obs_var: 0.05,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!(
                "supervision rate must lie in [0, 1], got {}",
                self.eta
            )));
        }
        self.loss.validate()
    }
}

/// One learning-curve record; loss columns are per-sample means over the
/// epoch (the supervised column is per labeled sample).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: u32,
    pub total: f64,
    pub unsup: f64,
    pub sup: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

/// Outcome of [`train`].
#[derive(Debug)]
pub struct TrainResult {
    pub model: Model,
    pub params: ModelParams,
    pub curve: LearningCurve,
}

/// Run the training loop: per epoch, shuffle, batch, evaluate the weighted
/// objective, backpropagate, and take one Adam step per batch at the
/// scheduled rate (the optimizer consumes the per-sample mean). Fully
/// deterministic given the config and seed. A non-finite loss aborts with
/// an epoch/batch diagnostic, leaving the last checkpoint on disk.
pub fn train(
    samples: &[WaveformSample],
    cfg: &TrainConfig,
    ckpt_path: Option<&Path>,
    resume: Option<(ModelParams, u32)>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let model = Model::new(cfg.arch.clone())?;
    let (mut params, start_epoch) = match resume {
        Some((p, e)) => (p, e),
        None => (model.init_params(cfg.seed), 0),
    };
    if start_epoch >= cfg.epochs {
        return Err(Error::Config(format!(
            "resume epoch {start_epoch} is not below configured epochs {}",
            cfg.epochs
        )));
    }

    let waveforms: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| normalize_waveform(&s.waveform).0)
        .collect();
    let split = split_supervision(samples, cfg.eta, cfg.seed)?;
    let mut exposed = vec![false; samples.len()];
    for &i in &split.labeled_idx {
        exposed[i] = true;
    }

    let shapes: Vec<Vec<usize>> = params
        .named_leaves()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::new(&shape_refs);

    let mut curve = LearningCurve::default();
    let mut indices: Vec<usize> = (0..samples.len()).collect();

    for epoch in (start_epoch + 1)..=cfg.epochs {
        let lr = lr_at(epoch - 1, &cfg.lr);
        let mut shuffle_rng = stream_rng(cfg.seed, StreamLabel::Shuffle, epoch as u64);
        indices.shuffle(&mut shuffle_rng);
        let mut noise = stream_rng(cfg.seed, StreamLabel::Noise, epoch as u64);

        let mut sums = (0.0, 0.0, 0.0); // total, unsup, sup
        let mut n_labeled = 0usize;

        for (batch_no, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<BatchItem> = chunk
                .iter()
                .map(|&i| BatchItem {
                    waveform: &waveforms[i],
                    labels: if exposed[i] {
                        samples[i].range_error_m.zip(samples[i].env_label).map(
                            |(range_error_m, env)| Labels {
                                range_error_m,
                                env,
                                material: samples[i].material_label,
                            },
                        )
                    } else {
                        None
                    },
                })
                .collect();
            n_labeled += batch.iter().filter(|b| b.labels.is_some()).count();

            let mut g = Graph::new();
            let vars = model.register(&mut g, &params);
            let (total, breakdown) =
                total_loss_graph(&mut g, &model, &vars, &batch, &cfg.loss, &mut noise)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}; \
                     last checkpoint retained"
                )));
            }
            sums.0 += breakdown.total;
            sums.1 += breakdown.unsup;
            sums.2 += breakdown.sup;

            // the optimizer consumes the per-sample mean
            let mean_loss = g.affine(total, 1.0 / batch.len() as f64, 0.0);
            let grads = backward(&g, mean_loss)?;
            let leaf_vars: Vec<_> = vars.named_leaves();
            let grad_tensors: Vec<Tensor> = leaf_vars
                .iter()
                .map(|(_, v)| grads.get_or_zeros(**v, g.value(**v).shape()))
                .collect();
            let mut param_refs = params.leaves_mut();
            adam_step(&mut param_refs, &grad_tensors, &mut adam, lr)?;
        }

        let n = samples.len() as f64;
        curve.rows.push(CurveRow {
            epoch,
            total: sums.0 / n,
            unsup: sums.1 / n,
            sup: sums.2 / n_labeled.max(1) as f64,
            lr,
        });

        if let Some(path) = ckpt_path {
            let last = epoch == cfg.epochs;
            let due = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if last || due {
                save_checkpoint(
                    path,
                    &model,
                    &params,
                    &CheckpointMeta {
                        seed: cfg.seed,
                        epoch,
                    },
                )?;
            }
        }
    }

    Ok(TrainResult {
        model,
        params,
        curve,
    })
}

/// Reusable deployment-path evaluator: parameters are registered once and
/// the graph is truncated back after every prediction.
pub struct Predictor<'m> {
    model: &'m Model,
    graph: Graph,
    vars: crate::model::ModelVars,
    base_len: usize,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m Model, params: &ModelParams) -> Self {
        let mut graph = Graph::new();
        let vars = model.register_frozen(&mut graph, params);
        let base_len = graph.len();
        Predictor {
            model,
            graph,
            vars,
            base_len,
        }
    }

    /// Predicted ranging error for a normalized waveform, reading the
    /// estimator off the range posterior mean.
    pub fn predict(&mut self, waveform: &[f64]) -> Result<f64> {
        self.graph.truncate(self.base_len);
        let x = self
            .graph
            .constant(Tensor::new(vec![WAVEFORM_LEN], waveform.to_vec())?);
        let (mean, _) = self.model.encode_y(&mut self.graph, &self.vars, x)?;
        let est = self
            .model
            .estimate_error(&mut self.graph, &self.vars, mean)?;
        self.graph.value(est).item()
    }
}

/// One row of a metrics table. Literature rows carry only the columns the
/// published table reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tag: String,
    pub eta: Option<f64>,
    pub rmse_m: Option<f64>,
    pub mae_m: Option<f64>,
    pub time_ms: Option<f64>,
    pub n: Option<usize>,
}

/// Published reference results (Table I of the source evaluation):
/// unmitigated plus SVM/REMNet baselines and the semi-supervised method at
/// each supervision rate. These are literature constants for context, never
/// recomputed here; REMNet rows were themselves quoted from its paper.
pub fn reference_results() -> Vec<MetricsReport> {
    let row = |tag: &str, eta, rmse, mae, time| MetricsReport {
        tag: format!("{tag}_lit"),
        eta,
        rmse_m: rmse,
        mae_m: mae,
        time_ms: time,
        n: None,
    };
    vec![
        row("unmitigated", None, Some(0.1244), Some(0.1244), None),
        row("svm", None, Some(0.1537), Some(0.0889), Some(0.837)),
        row("remnet_los", None, None, Some(0.0445), None),
        row("remnet_nlos", None, None, Some(0.0687), None),
        row("semi_vl", Some(0.1), Some(0.0663), Some(0.0176), Some(0.242)),
        row("semi_vl", Some(0.2), Some(0.0603), Some(0.0164), Some(0.252)),
        row("semi_vl", Some(0.4), Some(0.0603), Some(0.0166), Some(0.311)),
        row("semi_vl", Some(0.6), Some(0.0580), Some(0.0163), Some(0.210)),
        row("semi_vl", Some(0.8), Some(0.0567), Some(0.0151), Some(0.239)),
        row("semi_vl", Some(1.0), Some(0.0558), Some(0.0157), Some(0.285)),
    ]
}

fn rmse_mae(residuals: &[f64]) -> (f64, f64) {
    let n = residuals.len() as f64;
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let mae = residuals.iter().map(|r| r.abs()).sum::<f64>() / n;
    (rmse, mae)
}

/// Evaluate the deployment path on a labeled test set: residuals are
/// predicted minus actual ranging error; inference time is the wall-clock
/// per-sample mean over the full pass (encoder plus estimator only).
/// Read-only with respect to the parameters.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    testset: &[WaveformSample],
    tag: &str,
    eta: Option<f64>,
) -> Result<MetricsReport> {
    if testset.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let normalized: Vec<Vec<f64>> = testset
        .iter()
        .map(|s| normalize_waveform(&s.waveform).0)
        .collect();
    let labels: Vec<f64> = testset
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.range_error_m.ok_or(Error::Data {
                row: Some(i + 1),
                msg: "unlabeled sample in evaluation set".into(),
            })
        })
        .collect::<Result<_>>()?;

    let mut predictor = Predictor::new(model, params);
    let start = Instant::now();
    let mut residuals = Vec::with_capacity(testset.len());
    for (w, dd) in normalized.iter().zip(&labels) {
        residuals.push(predictor.predict(w)? - dd);
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3 / testset.len() as f64;

    let (rmse, mae) = rmse_mae(&residuals);
    // power-mean inequality; also catches NaN metrics
    if !(rmse + 1e-12 >= mae && rmse >= 0.0 && mae >= 0.0) {
        return Err(Error::Numeric(format!(
            "metrics violate rmse >= mae >= 0: rmse {rmse}, mae {mae}"
        )));
    }
    Ok(MetricsReport {
        tag: tag.to_string(),
        eta,
        rmse_m: Some(rmse),
        mae_m: Some(mae),
        time_ms: Some(elapsed),
        n: Some(testset.len()),
    })
}

/// Metrics of the raw measurements (predict zero error everywhere).
pub fn evaluate_unmitigated(testset: &[WaveformSample]) -> Result<MetricsReport> {
    if testset.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let residuals: Vec<f64> = testset
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.range_error_m.map(|d| -d).ok_or(Error::Data {
                row: Some(i + 1),
                msg: "unlabeled sample in evaluation set".into(),
            })
        })
        .collect::<Result<_>>()?;
    let (rmse, mae) = rmse_mae(&residuals);
    Ok(MetricsReport {
        tag: "unmitigated".into(),
        eta: None,
        rmse_m: Some(rmse),
        mae_m: Some(mae),
        time_ms: None,
        n: Some(testset.len()),
    })
}

/// Corrected distance estimate: measured minus the predicted ranging error.
/// The waveform is normalized through the same path training used.
pub fn mitigate(
    model: &Model,
    params: &ModelParams,
    waveform: &[f64],
    measured_dist_m: f64,
) -> Result<f64> {
    if waveform.len() != WAVEFORM_LEN {
        return Err(Error::Shape(format!(
            "mitigate: waveform length {} != {WAVEFORM_LEN}",
            waveform.len()
        )));
    }
    let (normalized, _) = normalize_waveform(waveform);
    let mut predictor = Predictor::new(model, params);
    Ok(measured_dist_m - predictor.predict(&normalized)?)
}

/// Train once per supervision rate and evaluate each model on the shared
/// test set. The emitted table starts with the live unmitigated row and the
/// literature reference block.
pub fn sweep(
    train_set: &[WaveformSample],
    test_set: &[WaveformSample],
    etas: &[f64],
    base: &TrainConfig,
) -> Result<(Vec<MetricsReport>, Vec<LearningCurve>)> {
    let mut rows = vec![evaluate_unmitigated(test_set)?];
    rows.extend(reference_results());
    let mut curves = Vec::new();
    for &eta in etas {
        let cfg = TrainConfig {
            eta,
            ..base.clone()
        };
        let result = train(train_set, &cfg, None, None)?;
        rows.push(evaluate(
            &result.model,
            &result.params,
            test_set,
            "semivae",
            Some(eta),
        )?);
        curves.push(result.curve);
    }
    Ok((rows, curves))
}

/// The supervision rates of the published sweep.
pub const DEFAULT_ETAS: [f64; 6] = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Layer-form ablation at full supervision: vary one module group at a
/// time (the autoencoder, then the estimator head) over the three forms,
/// keeping everything else at the base configuration.
pub fn ablation(
    train_set: &[WaveformSample],
    test_set: &[WaveformSample],
    base: &TrainConfig,
) -> Result<Vec<MetricsReport>> {
    let forms = [LayerForm::Linear, LayerForm::Conv1d, LayerForm::Conv2d];
    let mut rows = Vec::new();
    for (group, form) in forms
        .iter()
        .map(|f| ("ae", *f))
        .chain(forms.iter().map(|f| ("est", *f)))
    {
        let mut cfg = TrainConfig {
            eta: 1.0,
            ..base.clone()
        };
        match group {
            "ae" => cfg.arch.ae_form = form,
            _ => cfg.arch.est_form = form,
        }
        let result = train(train_set, &cfg, None, None)?;
        rows.push(evaluate(
            &result.model,
            &result.params,
            test_set,
            &format!("{group}_{form}"),
            Some(1.0),
        )?);
    }
    Ok(rows)
}

// ---- artifact files ---------------------------------------------------------

/// Write a learning curve as `epoch,total,unsup,sup,lr`.
pub fn save_curve<P: AsRef<Path>>(path: P, curve: &LearningCurve) -> Result<()> {
    let mut out = String::from("epoch,total,unsup,sup,lr\n");
    for r in &curve.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.total, r.unsup, r.sup, r.lr
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a learning curve back.
pub fn load_curve<P: AsRef<Path>>(path: P) -> Result<LearningCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "epoch,total,unsup,sup,lr" {
                return Err(Error::Data {
                    row: Some(1),
                    msg: "not a learning-curve file".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Data {
                row: Some(i + 1),
                msg: format!("expected 5 columns, got {}", f.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Data {
                row: Some(i + 1),
                msg: format!("non-numeric value {s:?}"),
            })
        };
        rows.push(CurveRow {
            epoch: f[0].parse().map_err(|_| Error::Data {
                row: Some(i + 1),
                msg: format!("non-numeric epoch {:?}", f[0]),
            })?,
            total: parse(f[1])?,
            unsup: parse(f[2])?,
            sup: parse(f[3])?,
            lr: parse(f[4])?,
        });
    }
    Ok(LearningCurve { rows })
}

/// Write a metrics table as `tag,eta,rmse_m,mae_m,time_ms,n`; absent
/// columns stay empty.
pub fn save_metrics_table<P: AsRef<Path>>(path: P, rows: &[MetricsReport]) -> Result<()> {
    std::fs::write(path, format_metrics_table(rows))?;
    Ok(())
}

/// Render the table (also used for standard output).
pub fn format_metrics_table(rows: &[MetricsReport]) -> String {
    let mut out = String::from("tag,eta,rmse_m,mae_m,time_ms,n\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.tag,
            opt(r.eta),
            opt(r.rmse_m),
            opt(r.mae_m),
            opt(r.time_ms),
            r.n.map(|x| x.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// Hold out one environment class entirely as the test set.
pub fn holdout_split(
    samples: &[WaveformSample],
    class: usize,
) -> (Vec<WaveformSample>, Vec<WaveformSample>) {
    let (test, train): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .partition(|s| s.env_label == Some(class));
    (train, test)
}

/// First `n - n_test` samples train, the final `n_test` test.
pub fn tail_split(
    samples: &[WaveformSample],
    n_test: usize,
) -> Result<(Vec<WaveformSample>, Vec<WaveformSample>)> {
    if n_test == 0 || n_test >= samples.len() {
        return Err(Error::Config(format!(
            "test count {n_test} must lie strictly inside the dataset size {}",
            samples.len()
        )));
    }
    let cut = samples.len() - n_test;
    Ok((samples[..cut].to_vec(), samples[cut..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::load_checkpoint;

    fn tiny_train_config(epochs: u32) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            seed: 3,
            arch: ArchConfig::tiny(),
            lr: LrSchedule {
                base: 1e-3,
                half_period: 40,
            },
            loss: LossConfig {
                obs_var: 0.05,
                ..LossConfig::default()
            },
            eta: 0.5,
            checkpoint_every: 0,
        }
    }

    fn small_dataset(n: usize, seed: u64) -> Vec<WaveformSample> {
        synth_generate(&SynthConfig {
            count: n,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn train_smoke_and_curve_contract() {
        let samples = small_dataset(48, 41);
        let cfg = tiny_train_config(2);
        let result = train(&samples, &cfg, None, None).unwrap();
        assert_eq!(result.curve.rows.len(), 2);
        for (i, r) in result.curve.rows.iter().enumerate() {
            assert_eq!(r.epoch, i as u32 + 1);
            assert!(r.total.is_finite() && r.unsup.is_finite() && r.sup.is_finite());
            assert_eq!(r.lr, lr_at(r.epoch - 1, &cfg.lr));
        }
        assert!(result.params.is_finite());
    }

    #[test]
    fn train_is_bitwise_deterministic() {
        let samples = small_dataset(40, 43);
        let cfg = tiny_train_config(2);
        let a = train(&samples, &cfg, None, None).unwrap();
        let b = train(&samples, &cfg, None, None).unwrap();
        let rows = |c: &LearningCurve| -> Vec<(u32, u64, u64, u64, u64)> {
            c.rows
                .iter()
                .map(|r| {
                    (
                        r.epoch,
                        r.total.to_bits(),
                        r.unsup.to_bits(),
                        r.sup.to_bits(),
                        r.lr.to_bits(),
                    )
                })
                .collect()
        };
        assert_eq!(rows(&a.curve), rows(&b.curve));
        for ((na, ta), (nb, tb)) in a
            .params
            .named_leaves()
            .iter()
            .zip(b.params.named_leaves().iter())
        {
            assert_eq!(na, nb);
            let ba: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn resume_continues_epoch_numbering() {
        let samples = small_dataset(32, 47);
        let dir = std::env::temp_dir().join("semivae_resume");
        std::fs::create_dir_all(&dir).unwrap();
        let ckpt = dir.join("resume.ckpt");

        let cfg2 = tiny_train_config(2);
        let first = train(&samples, &cfg2, Some(&ckpt), None).unwrap();
        let (_, params, meta) = load_checkpoint(&ckpt).unwrap();
        assert_eq!(meta.epoch, 2);

        let cfg4 = tiny_train_config(4);
        let resumed = train(&samples, &cfg4, None, Some((params, meta.epoch))).unwrap();
        let epochs: Vec<u32> = resumed.curve.rows.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![3, 4]);

        // concatenation is contiguous from 1
        let mut all = first.curve.rows.clone();
        all.extend(resumed.curve.rows.clone());
        for (i, r) in all.iter().enumerate() {
            assert_eq!(r.epoch as usize, i + 1);
        }

        // resuming at or past the target epoch count is rejected
        let (_, params2, _) = load_checkpoint(&ckpt).unwrap();
        assert!(train(&samples, &cfg2, None, Some((params2, 2))).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let samples = small_dataset(32, 53);
        let mut cfg = tiny_train_config(3);
        cfg.lr = LrSchedule {
            base: 1e280,
            half_period: 100,
        };
        let err = train(&samples, &cfg, None, None).unwrap_err().to_string();
        assert!(
            err.contains("non-finite"),
            "expected a non-finite diagnostic, got: {err}"
        );
    }

    fn constant_prediction_setup(c: f64, deltas: &[f64]) -> (Model, ModelParams, Vec<WaveformSample>) {
        let model = Model::new(ArchConfig::tiny()).unwrap();
        let mut params = model.init_params(1);
        let zero = |t: &mut Tensor| t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        match &mut params.phi_e.body {
            crate::model::HeadBody::Linear { l1, l2 } => {
                zero(&mut l1.w);
                zero(&mut l1.b);
                zero(&mut l2.w);
                zero(&mut l2.b);
            }
            _ => unreachable!(),
        }
        zero(&mut params.phi_e.out.w);
        params.phi_e.out.b = Tensor::from_vec(vec![c]);
        let mut samples = small_dataset(deltas.len(), 59);
        for (s, &d) in samples.iter_mut().zip(deltas) {
            s.range_error_m = Some(d);
        }
        (model, params, samples)
    }

    #[test]
    fn evaluate_hand_computed_metrics() {
        // residuals [0.1, -0.1]: rmse = mae = 0.1
        let (model, params, samples) = constant_prediction_setup(0.5, &[0.4, 0.6]);
        let rep = evaluate(&model, &params, &samples, "t", None).unwrap();
        assert!((rep.rmse_m.unwrap() - 0.1).abs() < 1e-12);
        assert!((rep.mae_m.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(rep.n, Some(2));
        assert!(rep.time_ms.unwrap() >= 0.0);

        // residuals [0.3, 0.4]: rmse = 0.35355..., mae = 0.35
        let (model, params, samples) = constant_prediction_setup(0.5, &[0.2, 0.1]);
        let rep = evaluate(&model, &params, &samples, "t", None).unwrap();
        assert!((rep.rmse_m.unwrap() - 0.3535533905932738).abs() < 1e-12);
        assert!((rep.mae_m.unwrap() - 0.35).abs() < 1e-12);
        assert!(rep.rmse_m.unwrap() >= rep.mae_m.unwrap());
    }

    #[test]
    fn evaluate_is_read_only_and_rejects_unlabeled() {
        let (model, params, mut samples) = constant_prediction_setup(0.0, &[0.1, 0.2, 0.3]);
        let before: Vec<u64> = params
            .named_leaves()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect();
        evaluate(&model, &params, &samples, "t", None).unwrap();
        let after: Vec<u64> = params
            .named_leaves()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect();
        assert_eq!(before, after);

        samples[1].range_error_m = None;
        samples[1].env_label = None;
        let err = evaluate(&model, &params, &samples, "t", None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn mitigate_subtracts_predicted_error() {
        let (model, params, samples) = constant_prediction_setup(0.12, &[0.0]);
        let corrected = mitigate(&model, &params, &samples[0].waveform, 5.0).unwrap();
        assert!((corrected - 4.88).abs() < 1e-12);

        let (model0, params0, _) = constant_prediction_setup(0.0, &[0.0]);
        let same = mitigate(&model0, &params0, &samples[0].waveform, 5.0).unwrap();
        assert_eq!(same, 5.0);

        assert!(mitigate(&model, &params, &[0.0; 3], 5.0).is_err());
    }

    #[test]
    fn sweep_singleton_and_determinism() {
        let samples = small_dataset(60, 61);
        let (train_set, test_set) = tail_split(&samples, 20).unwrap();
        let cfg = tiny_train_config(1);
        let (rows, curves) = sweep(&train_set, &test_set, &[1.0], &cfg).unwrap();
        // unmitigated + 10 literature rows + 1 trained row
        assert_eq!(rows.len(), 12);
        assert_eq!(curves.len(), 1);
        assert_eq!(rows.last().unwrap().eta, Some(1.0));

        let (rows2, _) = sweep(&train_set, &test_set, &[1.0], &cfg).unwrap();
        for (a, b) in rows.iter().zip(&rows2) {
            assert_eq!(a.tag, b.tag);
            assert_eq!(
                a.rmse_m.map(f64::to_bits),
                b.rmse_m.map(f64::to_bits),
                "{}",
                a.tag
            );
            assert_eq!(a.mae_m.map(f64::to_bits), b.mae_m.map(f64::to_bits));
        }
    }

    #[test]
    fn ablation_emits_six_rows() {
        let samples = small_dataset(40, 67);
        let (train_set, test_set) = tail_split(&samples, 12).unwrap();
        let cfg = tiny_train_config(1);
        let rows = ablation(&train_set, &test_set, &cfg).unwrap();
        let tags: Vec<&str> = rows.iter().map(|r| r.tag.as_str()).collect();
        assert_eq!(
            tags,
            vec![
                "ae_linear",
                "ae_conv1d",
                "ae_conv2d",
                "est_linear",
                "est_conv1d",
                "est_conv2d"
            ]
        );
        for r in &rows {
            assert!(r.rmse_m.unwrap().is_finite() && r.mae_m.unwrap().is_finite());
            assert_eq!(r.eta, Some(1.0));
        }
    }

    #[test]
    fn curve_and_table_files_round_trip() {
        let dir = std::env::temp_dir().join("semivae_harness_io");
        std::fs::create_dir_all(&dir).unwrap();
        let curve = LearningCurve {
            rows: vec![
                CurveRow {
                    epoch: 1,
                    total: 10.5,
                    unsup: 1.0,
                    sup: 0.5,
                    lr: 1e-3,
                },
                CurveRow {
                    epoch: 2,
                    total: -3.25,
                    unsup: -0.4,
                    sup: 0.75,
                    lr: 1e-3,
                },
            ],
        };
        let cp = dir.join("curve.csv");
        save_curve(&cp, &curve).unwrap();
        assert_eq!(load_curve(&cp).unwrap(), curve);

        let rows = reference_results();
        let tp = dir.join("table.csv");
        save_metrics_table(&tp, &rows).unwrap();
        let text = std::fs::read_to_string(&tp).unwrap();
        assert!(text.starts_with("tag,eta,rmse_m,mae_m,time_ms,n\n"));
        assert!(text.contains("unmitigated_lit,,0.1244,0.1244,,"));
        assert!(text.contains("semi_vl_lit,1,0.0558,0.0157,0.285,"));
    }

    #[test]
    fn split_helpers() {
        let samples = small_dataset(50, 71);
        let (tr, te) = tail_split(&samples, 10).unwrap();
        assert_eq!(tr.len(), 40);
        assert_eq!(te.len(), 10);
        assert!(tail_split(&samples, 0).is_err());
        assert!(tail_split(&samples, 50).is_err());

        let (tr2, te2) = holdout_split(&samples, 1);
        assert_eq!(tr2.len() + te2.len(), 50);
        assert!(te2.iter().all(|s| s.env_label == Some(1)));
        assert!(tr2.iter().all(|s| s.env_label != Some(1)));
    }

    #[test]
    fn sweep_rows_monotone_in_labeled_count() {
        // larger eta never uses fewer labeled samples
        let samples = small_dataset(30, 73);
        let mut last = 0;
        for eta in [0.1, 0.4, 0.8, 1.0] {
            let split = crate::data::split_supervision(&samples, eta, 5).unwrap();
            assert!(split.n_labeled() >= last);
            last = split.n_labeled();
        }
    }
}
