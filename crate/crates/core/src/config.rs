//! Flat key=value run configuration.
//!
//! Files hold one `key=value` per line; `#` starts a comment. A `--set`
//! override is the same syntax. Typed resolution consumes keys and rejects
//! anything left over, so misspelled keys fail loudly. Every resolved run
//! can be serialized back to an equivalent snapshot file.

use crate::data::{EnvClass, SynthConfig};
use crate::error::{Error, Result};
use crate::harness::TrainConfig;
use crate::loss::LossConfig;
use crate::model::ArchConfig;
use crate::optim::LrSchedule;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Parsed key=value map, ordered for reproducible snapshots.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvConfig { map })
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        self.map.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// Re-emittable file contents.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

/// Key-consuming view over a [`KvConfig`]; call [`Resolver::finish`] after
/// resolving everything to reject unknown keys.
pub struct Resolver<'a> {
    cfg: &'a KvConfig,
    used: BTreeSet<String>,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: &'a KvConfig) -> Self {
        Resolver {
            cfg,
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let v = self.cfg.get(key);
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub fn has(&mut self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {s:?}"))),
        }
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.parsed(key, default)
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default)
    }

    pub fn u32(&mut self, key: &str, default: u32) -> Result<u32> {
        self.parsed(key, default)
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        self.parsed(key, default)
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String> {
        Ok(self
            .raw(key)
            .map(|s| s.to_string())
            .unwrap_or_else(|| default.to_string()))
    }

    pub fn usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad value for {key}: {s:?}")))
                })
                .collect(),
        }
    }

    pub fn f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad value for {key}: {s:?}")))
                })
                .collect(),
        }
    }

    /// Reject unknown keys, naming them all.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self
            .cfg
            .map
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

/// Resolve `arch.*` keys against profile defaults.
pub fn resolve_arch(r: &mut Resolver, d: ArchConfig) -> Result<ArchConfig> {
    Ok(ArchConfig {
        d_y: r.usize("arch.d_y", d.d_y)?,
        d_z: r.usize("arch.d_z", d.d_z)?,
        channels: r.usize_list("arch.channels", &d.channels)?,
        kernel: r.usize("arch.kernel", d.kernel)?,
        stride: r.usize("arch.stride", d.stride)?,
        res_blocks: r.usize("arch.res_blocks", d.res_blocks)?,
        res_kernel: r.usize("arch.res_kernel", d.res_kernel)?,
        decoder_len: r.usize("arch.decoder_len", d.decoder_len)?,
        linear_widths: r.usize_list("arch.linear_widths", &d.linear_widths)?,
        head_hidden: r.usize("arch.head_hidden", d.head_hidden)?,
        head_channels: r.usize("arch.head_channels", d.head_channels)?,
        adain_hidden: r.usize("arch.adain_hidden", d.adain_hidden)?,
        ae_form: r.string("arch.ae_form", &d.ae_form.to_string())?.parse()?,
        est_form: r.string("arch.est_form", &d.est_form.to_string())?.parse()?,
        cls_form: r.string("arch.cls_form", &d.cls_form.to_string())?.parse()?,
        k_env: r.usize("arch.k_env", d.k_env)?,
        use_material: r.bool("arch.use_material", d.use_material)?,
        k_mat: r.usize("arch.k_mat", d.k_mat)?,
    })
}

/// Resolve `loss.*` keys against profile defaults.
pub fn resolve_loss(r: &mut Resolver, d: LossConfig) -> Result<LossConfig> {
    Ok(LossConfig {
        lambda_unsup: r.f64("loss.lambda_unsup", d.lambda_unsup)?,
        lambda_sup: r.f64("loss.lambda_sup", d.lambda_sup)?,
        mc_draws: r.usize("loss.mc_draws", d.mc_draws)?,
        obs_var: r.f64("loss.obs_var", d.obs_var)?,
        prior: crate::dist::PriorConfig {
            eps_y: r.f64("loss.prior_eps_y", d.prior.eps_y)?,
            eps_z: r.f64("loss.prior_eps_z", d.prior.eps_z)?,
        },
        heads_use_samples: r.bool("loss.heads_use_samples", d.heads_use_samples)?,
    })
}

/// Resolve a full training configuration. The `profile` key (desk or
/// paper) picks the default set; explicit keys override it.
pub fn resolve_train(r: &mut Resolver) -> Result<TrainConfig> {
    let profile = r.string("profile", "desk")?;
    let base = match profile.as_str() {
        "desk" => TrainConfig::desk(),
        "paper" => TrainConfig::default(),
        other => {
            return Err(Error::Config(format!(
                "unknown profile {other:?} (expected desk or paper)"
            )))
        }
    };
    Ok(TrainConfig {
        epochs: r.u32("train.epochs", base.epochs)?,
        batch_size: r.usize("train.batch_size", base.batch_size)?,
        seed: r.u64("seed", base.seed)?,
        lr: LrSchedule {
            base: r.f64("train.lr_base", base.lr.base)?,
            half_period: r.u32("train.lr_half_period", base.lr.half_period)?,
        },
        loss: resolve_loss(r, base.loss)?,
        arch: resolve_arch(r, base.arch)?,
        eta: r.f64("train.eta", base.eta)?,
        checkpoint_every: r.u32("train.checkpoint_every", base.checkpoint_every)?,
    })
}

/// Resolve `synth.*` keys. `synth.preset` picks the class block
/// (`default` or `five_rooms`); explicit `synth.class_*` lists override it
/// and must share one length.
pub fn resolve_synth(r: &mut Resolver) -> Result<SynthConfig> {
    let preset = r.string("synth.preset", "default")?;
    let seed = r.u64("seed", 7)?;
    let base = match preset.as_str() {
        "default" => SynthConfig::default(),
        "five_rooms" => SynthConfig::five_rooms(1000, seed),
        other => {
            return Err(Error::Config(format!(
                "unknown synth.preset {other:?} (expected default or five_rooms)"
            )))
        }
    };

    let d_weights: Vec<f64> = base.classes.iter().map(|c| c.weight).collect();
    let d_nlos: Vec<usize> = base.classes.iter().map(|c| c.nlos as usize).collect();
    let d_widths: Vec<f64> = base.classes.iter().map(|c| c.pulse_width).collect();
    let d_decays: Vec<f64> = base.classes.iter().map(|c| c.cluster_decay).collect();
    let d_means: Vec<f64> = base.classes.iter().map(|c| c.bias_mean_m).collect();
    let d_spreads: Vec<f64> = base.classes.iter().map(|c| c.bias_spread_m).collect();

    let weights = r.f64_list("synth.class_weights", &d_weights)?;
    let nlos = r.usize_list("synth.class_nlos", &d_nlos)?;
    let widths = r.f64_list("synth.class_pulse_widths", &d_widths)?;
    let decays = r.f64_list("synth.class_cluster_decays", &d_decays)?;
    let means = r.f64_list("synth.class_bias_means", &d_means)?;
    let spreads = r.f64_list("synth.class_bias_spreads", &d_spreads)?;
    let n = weights.len();
    if [nlos.len(), widths.len(), decays.len(), means.len(), spreads.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::Config(
            "synth.class_* lists must all have the same length".into(),
        ));
    }
    let classes = (0..n)
        .map(|i| EnvClass {
            weight: weights[i],
            nlos: nlos[i] != 0,
            pulse_width: widths[i],
            cluster_decay: decays[i],
            bias_mean_m: means[i],
            bias_spread_m: spreads[i],
        })
        .collect();

    let cfg = SynthConfig {
        count: r.usize("synth.count", base.count)?,
        classes,
        noise_std_m: r.f64("synth.noise_std_m", base.noise_std_m)?,
        waveform_noise_std: r.f64("synth.waveform_noise_std", base.waveform_noise_std)?,
        dist_min_m: r.f64("synth.dist_min_m", base.dist_min_m)?,
        dist_max_m: r.f64("synth.dist_max_m", base.dist_max_m)?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a training configuration to snapshot keys.
pub fn train_to_kv(cfg: &TrainConfig, out: &mut KvConfig) {
    out.insert("train.epochs", cfg.epochs.to_string());
    out.insert("train.batch_size", cfg.batch_size.to_string());
    out.insert("seed", cfg.seed.to_string());
    out.insert("train.lr_base", cfg.lr.base.to_string());
    out.insert("train.lr_half_period", cfg.lr.half_period.to_string());
    out.insert("train.eta", cfg.eta.to_string());
    out.insert("train.checkpoint_every", cfg.checkpoint_every.to_string());
    out.insert("loss.lambda_unsup", cfg.loss.lambda_unsup.to_string());
    out.insert("loss.lambda_sup", cfg.loss.lambda_sup.to_string());
    out.insert("loss.mc_draws", cfg.loss.mc_draws.to_string());
    out.insert("loss.obs_var", cfg.loss.obs_var.to_string());
    out.insert("loss.prior_eps_y", cfg.loss.prior.eps_y.to_string());
    out.insert("loss.prior_eps_z", cfg.loss.prior.eps_z.to_string());
    out.insert(
        "loss.heads_use_samples",
        cfg.loss.heads_use_samples.to_string(),
    );
    for (k, v) in crate::model::arch_to_kv(&cfg.arch) {
        out.insert(&k, v);
    }
}

/// Serialize a synthetic-data configuration to snapshot keys.
pub fn synth_to_kv(cfg: &SynthConfig, out: &mut KvConfig) {
    let join_f = |f: &dyn Fn(&EnvClass) -> f64| {
        cfg.classes
            .iter()
            .map(|c| f(c).to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    out.insert("synth.count", cfg.count.to_string());
    out.insert(
        "synth.class_weights",
        join_f(&|c| c.weight),
    );
    out.insert(
        "synth.class_nlos",
        cfg.classes
            .iter()
            .map(|c| (c.nlos as usize).to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    out.insert("synth.class_pulse_widths", join_f(&|c| c.pulse_width));
    out.insert("synth.class_cluster_decays", join_f(&|c| c.cluster_decay));
    out.insert("synth.class_bias_means", join_f(&|c| c.bias_mean_m));
    out.insert("synth.class_bias_spreads", join_f(&|c| c.bias_spread_m));
    out.insert("synth.noise_std_m", cfg.noise_std_m.to_string());
    out.insert(
        "synth.waveform_noise_std",
        cfg.waveform_noise_std.to_string(),
    );
    out.insert("synth.dist_min_m", cfg.dist_min_m.to_string());
    out.insert("synth.dist_max_m", cfg.dist_max_m.to_string());
    out.insert("seed", cfg.seed.to_string());
}
