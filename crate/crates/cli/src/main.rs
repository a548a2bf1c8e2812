//! Command-line entry point: dataset generation, training, evaluation,
//! supervision-rate sweeps, layer-form ablation, and gradient checking,
//! all reproducible from one seed.
//!
//! Every run writes a `manifest.txt` plus a `resolved.cfg` snapshot of the
//! effective configuration; re-running with `--config resolved.cfg`
//! reproduces the outputs (timestamps and wall-clock timings excepted).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use semivae_core::config::{
    resolve_arch, resolve_synth, resolve_train, synth_to_kv, train_to_kv, KvConfig, Resolver,
};
use semivae_core::data::{load_dataset, save_dataset, synth_generate, WaveformSample};
use semivae_core::gradcheck::run_gradcheck;
use semivae_core::harness::{
    ablation, evaluate, evaluate_unmitigated, format_metrics_table, holdout_split, save_curve,
    save_metrics_table, sweep, tail_split, train, TrainConfig, DEFAULT_ETAS,
};
use semivae_core::model::load_checkpoint;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "semivae", version, about = "Semi-supervised VAE for UWB ranging error mitigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Generate(Common),
    /// Train a model; writes a checkpoint and a learning curve.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and evaluate across supervision rates.
    Sweep(Common),
    /// Layer-form ablation at full supervision.
    Ablation(Common),
    /// Finite-difference verification of all gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Relative-error tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(c) => cmd_generate(&c),
        Command::Train { common, resume } => cmd_train(&common, resume.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            data,
        } => cmd_eval(&common, &checkpoint, &data),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Ablation(c) => cmd_ablation(&c),
        Command::Gradcheck { common, tol } => cmd_gradcheck(&common, tol),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn load_config(common: &Common) -> Result<KvConfig> {
    let mut cfg = match &common.config {
        Some(path) => KvConfig::from_file(path)?,
        None => KvConfig::empty(),
    };
    for kv in &common.sets {
        cfg.set(kv)?;
    }
    if let Some(seed) = common.seed {
        cfg.insert("seed", seed.to_string());
    }
    Ok(cfg)
}

struct Manifest {
    command: &'static str,
    config_path: Option<PathBuf>,
    seed: u64,
    started: u64,
    outputs: Vec<(String, String)>,
}

impl Manifest {
    fn new(command: &'static str, common: &Common, seed: u64) -> Self {
        Manifest {
            command,
            config_path: common.config.clone(),
            seed,
            started: unix_now(),
            outputs: Vec::new(),
        }
    }

    fn output(&mut self, kind: &str, name: &str) {
        self.outputs.push((kind.to_string(), name.to_string()));
    }

    fn write(&self, out_dir: &Path, snapshot: &KvConfig) -> Result<()> {
        let mut text = String::new();
        text.push_str(&format!("command={}\n", self.command));
        text.push_str(&format!(
            "config={}\n",
            self.config_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "(none)".into())
        ));
        text.push_str(&format!("seed={}\n", self.seed));
        text.push_str(&format!("started_unix={}\n", self.started));
        text.push_str(&format!("ended_unix={}\n", unix_now()));
        text.push_str("config_snapshot=resolved.cfg\n");
        for (kind, name) in &self.outputs {
            text.push_str(&format!("output.{kind}={name}\n"));
        }
        std::fs::write(out_dir.join("manifest.txt"), text)?;
        std::fs::write(out_dir.join("resolved.cfg"), snapshot.snapshot())?;
        Ok(())
    }
}

fn ensure_out(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(common.out.as_path())
}

fn load_rows(path: &Path) -> Result<Vec<WaveformSample>> {
    if !path.exists() {
        bail!("dataset file {} does not exist", path.display());
    }
    Ok(load_dataset(path)?)
}

/// Resolve the `data.path` plus train/test split keys shared by the
/// training-style commands.
fn resolve_split(
    r: &mut Resolver,
    need_test: bool,
) -> Result<(PathBuf, String, usize, usize)> {
    let data_path = r.string("data.path", "")?;
    if data_path.is_empty() {
        bail!("missing config key data.path (the dataset file to use)");
    }
    let default_mode = if need_test { "tail" } else { "none" };
    let mode = r.string("split.mode", default_mode)?;
    let test_count = r.usize("split.test_count", 0)?;
    let holdout_class = r.usize("split.holdout_class", 0)?;
    Ok((PathBuf::from(data_path), mode, test_count, holdout_class))
}

fn apply_split(
    samples: Vec<WaveformSample>,
    mode: &str,
    test_count: usize,
    holdout_class: usize,
) -> Result<(Vec<WaveformSample>, Vec<WaveformSample>)> {
    match mode {
        "none" => Ok((samples, Vec::new())),
        "tail" => {
            let n = if test_count == 0 {
                (samples.len() / 6).max(1)
            } else {
                test_count
            };
            Ok(tail_split(&samples, n)?)
        }
        "holdout" => {
            let (tr, te) = holdout_split(&samples, holdout_class);
            if tr.is_empty() || te.is_empty() {
                bail!(
                    "holdout split on class {holdout_class} left an empty side \
                     (train {}, test {})",
                    tr.len(),
                    te.len()
                );
            }
            Ok((tr, te))
        }
        other => bail!("unknown split.mode {other:?} (expected none, tail, or holdout)"),
    }
}

fn cmd_generate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut r = Resolver::new(&cfg);
    let synth = resolve_synth(&mut r)?;
    r.finish()?;

    let out = ensure_out(common)?;
    let mut manifest = Manifest::new("generate", common, synth.seed);
    let samples = synth_generate(&synth)?;
    let path = out.join("dataset.csv");
    save_dataset(&path, &samples)?;
    manifest.output("dataset", "dataset.csv");

    let mut snap = KvConfig::empty();
    synth_to_kv(&synth, &mut snap);
    manifest.write(out, &snap)?;
    println!(
        "wrote {} samples across {} classes to {}",
        samples.len(),
        synth.n_classes(),
        path.display()
    );
    Ok(())
}

fn train_snapshot(tc: &TrainConfig, data_path: &Path, mode: &str, extra: &[(&str, String)]) -> KvConfig {
    let mut snap = KvConfig::empty();
    train_to_kv(tc, &mut snap);
    snap.insert("data.path", data_path.display().to_string());
    snap.insert("split.mode", mode.to_string());
    for (k, v) in extra {
        snap.insert(k, v.clone());
    }
    snap
}

fn cmd_train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let mut r = Resolver::new(&cfg);
    let tc = resolve_train(&mut r)?;
    let (data_path, mode, test_count, holdout_class) = resolve_split(&mut r, false)?;
    r.finish()?;

    let samples = load_rows(&data_path)?;
    let (train_set, test_set) = apply_split(samples, &mode, test_count, holdout_class)?;

    let resume_state = match resume {
        Some(path) => {
            let (model, params, meta) = load_checkpoint(path)?;
            if model.cfg() != &tc.arch {
                bail!(
                    "architecture in checkpoint {} differs from the configured one",
                    path.display()
                );
            }
            Some((params, meta.epoch))
        }
        None => None,
    };

    let out = ensure_out(common)?;
    let mut manifest = Manifest::new("train", common, tc.seed);
    let ckpt = out.join("checkpoint.ckpt");
    let result = train(&train_set, &tc, Some(&ckpt), resume_state)?;
    manifest.output("checkpoint", "checkpoint.ckpt");
    save_curve(out.join("curve.csv"), &result.curve)?;
    manifest.output("curve", "curve.csv");

    if !test_set.is_empty() {
        let report = evaluate(&result.model, &result.params, &test_set, "semivae", Some(tc.eta))?;
        let mut rows = vec![evaluate_unmitigated(&test_set)?];
        rows.push(report);
        save_metrics_table(out.join("metrics.csv"), &rows)?;
        manifest.output("metrics", "metrics.csv");
        print!("{}", format_metrics_table(&rows));
    }

    let last = result.curve.rows.last().unwrap();
    println!(
        "trained {} epochs on {} samples (eta {}); final per-sample loss {:.4}",
        last.epoch,
        train_set.len(),
        tc.eta,
        last.total
    );
    let snap = train_snapshot(&tc, &data_path, &mode, &[]);
    manifest.write(out, &snap)?;
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let (model, params, meta) = load_checkpoint(checkpoint)?;

    // reject configs that contradict the checkpoint architecture
    let mut r = Resolver::new(&cfg);
    let requested = resolve_arch(&mut r, model.cfg().clone())?;
    let _ = r.u64("seed", meta.seed)?;
    r.finish()?;
    if &requested != model.cfg() {
        bail!(
            "architecture mismatch: checkpoint {} was trained with a different architecture \
             than the one configured",
            checkpoint.display()
        );
    }

    let samples = load_rows(data)?;
    let out = ensure_out(common)?;
    let mut manifest = Manifest::new("eval", common, meta.seed);
    let mut rows = vec![evaluate_unmitigated(&samples)?];
    rows.push(evaluate(&model, &params, &samples, "semivae", None)?);
    save_metrics_table(out.join("metrics.csv"), &rows)?;
    manifest.output("metrics", "metrics.csv");
    print!("{}", format_metrics_table(&rows));

    let mut snap = KvConfig::empty();
    for (k, v) in semivae_core::model::arch_to_kv(model.cfg()) {
        snap.insert(&k, v);
    }
    snap.insert("seed", meta.seed.to_string());
    manifest.write(out, &snap)?;
    Ok(())
}

fn parse_eta_list(r: &mut Resolver) -> Result<Vec<f64>> {
    let default = DEFAULT_ETAS
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let listed = r.string("sweep.etas", &default)?;
    listed
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad supervision rate {s:?} in sweep.etas"))
        })
        .collect()
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut r = Resolver::new(&cfg);
    let tc = resolve_train(&mut r)?;
    let etas = parse_eta_list(&mut r)?;
    let (data_path, mode, test_count, holdout_class) = resolve_split(&mut r, true)?;
    r.finish()?;

    let samples = load_rows(&data_path)?;
    let (train_set, test_set) = apply_split(samples, &mode, test_count, holdout_class)?;
    if test_set.is_empty() {
        bail!("sweep needs a test split (split.mode tail or holdout)");
    }

    let out = ensure_out(common)?;
    let mut manifest = Manifest::new("sweep", common, tc.seed);
    let (rows, curves) = sweep(&train_set, &test_set, &etas, &tc)?;
    save_metrics_table(out.join("sweep.csv"), &rows)?;
    manifest.output("table", "sweep.csv");
    for (eta, curve) in etas.iter().zip(&curves) {
        let name = format!("curve_eta_{eta}.csv");
        save_curve(out.join(&name), curve)?;
        manifest.output("curve", &name);
    }
    print!("{}", format_metrics_table(&rows));

    let etas_str = etas
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let snap = train_snapshot(&tc, &data_path, &mode, &[("sweep.etas", etas_str)]);
    manifest.write(out, &snap)?;
    Ok(())
}

fn cmd_ablation(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut r = Resolver::new(&cfg);
    let tc = resolve_train(&mut r)?;
    let (data_path, mode, test_count, holdout_class) = resolve_split(&mut r, true)?;
    r.finish()?;

    let samples = load_rows(&data_path)?;
    let (train_set, test_set) = apply_split(samples, &mode, test_count, holdout_class)?;
    if test_set.is_empty() {
        bail!("ablation needs a test split (split.mode tail or holdout)");
    }

    let out = ensure_out(common)?;
    let mut manifest = Manifest::new("ablation", common, tc.seed);
    let rows = ablation(&train_set, &test_set, &tc)?;
    save_metrics_table(out.join("ablation.csv"), &rows)?;
    manifest.output("table", "ablation.csv");
    print!("{}", format_metrics_table(&rows));

    let snap = train_snapshot(&tc, &data_path, &mode, &[]);
    manifest.write(out, &snap)?;
    Ok(())
}

fn cmd_gradcheck(common: &Common, tol: f64) -> Result<()> {
    let cfg = load_config(common)?;
    let mut r = Resolver::new(&cfg);
    let seed = r.u64("seed", 12)?;
    r.finish()?;

    let report = run_gradcheck(tol, seed)?;
    for c in &report.checks {
        println!(
            "{} {} rel_err {:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.rel_err
        );
    }
    println!(
        "gradcheck: {} checks, max rel err {:.3e}, tolerance {:.1e}",
        report.checks.len(),
        report.max_rel_err(),
        tol
    );

    if let Ok(out) = ensure_out(common) {
        let mut manifest = Manifest::new("gradcheck", common, seed);
        manifest.output("stdout", "(none)");
        let mut snap = KvConfig::empty();
        snap.insert("seed", seed.to_string());
        snap.insert("gradcheck.tol", tol.to_string());
        manifest.write(out, &snap)?;
    }

    if !report.passed() {
        bail!("gradient check failed at tolerance {tol}");
    }
    Ok(())
}
