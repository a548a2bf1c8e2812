//! Checkpoint file: a key=value text manifest (architecture, seed, epoch,
//! parameter count) followed by `---` and one binary blob of all parameter
//! tensors in declared order, little-endian f64. The loader validates the
//! total byte count against both the manifest and the architecture.

use super::{ArchConfig, LayerForm, Model, ModelParams};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &str = "semivae-checkpoint-v1";

/// Run metadata stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: u32,
}

/// Serialize the architecture as `arch.*` key=value pairs.
pub fn arch_to_kv(cfg: &ArchConfig) -> Vec<(String, String)> {
    let list = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    vec![
        ("arch.d_y".into(), cfg.d_y.to_string()),
        ("arch.d_z".into(), cfg.d_z.to_string()),
        ("arch.channels".into(), list(&cfg.channels)),
        ("arch.kernel".into(), cfg.kernel.to_string()),
        ("arch.stride".into(), cfg.stride.to_string()),
        ("arch.res_blocks".into(), cfg.res_blocks.to_string()),
        ("arch.res_kernel".into(), cfg.res_kernel.to_string()),
        ("arch.decoder_len".into(), cfg.decoder_len.to_string()),
        ("arch.linear_widths".into(), list(&cfg.linear_widths)),
        ("arch.head_hidden".into(), cfg.head_hidden.to_string()),
        ("arch.head_channels".into(), cfg.head_channels.to_string()),
        ("arch.adain_hidden".into(), cfg.adain_hidden.to_string()),
        ("arch.ae_form".into(), cfg.ae_form.to_string()),
        ("arch.est_form".into(), cfg.est_form.to_string()),
        ("arch.cls_form".into(), cfg.cls_form.to_string()),
        ("arch.k_env".into(), cfg.k_env.to_string()),
        ("arch.use_material".into(), cfg.use_material.to_string()),
        ("arch.k_mat".into(), cfg.k_mat.to_string()),
    ]
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Config(format!("missing key {key}")))
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    get(map, key)?
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {:?}", map.get(key))))
}

fn parse_list(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<usize>> {
    get(map, key)?
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}")))
        })
        .collect()
}

/// Rebuild an architecture from `arch.*` keys.
pub fn arch_from_kv(map: &BTreeMap<String, String>) -> Result<ArchConfig> {
    Ok(ArchConfig {
        d_y: parse(map, "arch.d_y")?,
        d_z: parse(map, "arch.d_z")?,
        channels: parse_list(map, "arch.channels")?,
        kernel: parse(map, "arch.kernel")?,
        stride: parse(map, "arch.stride")?,
        res_blocks: parse(map, "arch.res_blocks")?,
        res_kernel: parse(map, "arch.res_kernel")?,
        decoder_len: parse(map, "arch.decoder_len")?,
        linear_widths: parse_list(map, "arch.linear_widths")?,
        head_hidden: parse(map, "arch.head_hidden")?,
        head_channels: parse(map, "arch.head_channels")?,
        adain_hidden: parse(map, "arch.adain_hidden")?,
        ae_form: parse::<LayerForm>(map, "arch.ae_form")?,
        est_form: parse::<LayerForm>(map, "arch.est_form")?,
        cls_form: parse::<LayerForm>(map, "arch.cls_form")?,
        k_env: parse(map, "arch.k_env")?,
        use_material: parse(map, "arch.use_material")?,
        k_mat: parse(map, "arch.k_mat")?,
    })
}

/// Write a checkpoint.
pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    model: &Model,
    params: &ModelParams,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("seed={}\n", meta.seed));
    header.push_str(&format!("epoch={}\n", meta.epoch));
    for (k, v) in arch_to_kv(model.cfg()) {
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str(&format!("param_count={}\n", params.numel()));
    header.push_str("---\n");

    let mut bytes = header.into_bytes();
    params.visit(&mut |_, t| {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a checkpoint back; validates the magic line, the parameter count
/// declared in the manifest, and the blob byte count implied by the
/// architecture.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(Model, ModelParams, CheckpointMeta)> {
    let bytes = std::fs::read(&path).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    let sep = b"\n---\n";
    let pos = bytes
        .windows(sep.len())
        .position(|w| w == sep)
        .ok_or_else(|| Error::Checkpoint("missing header separator".into()))?;
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let blob = &bytes[pos + sep.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut map = BTreeMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let meta = CheckpointMeta {
        seed: parse(&map, "seed")?,
        epoch: parse(&map, "epoch")?,
    };
    let declared: usize = parse(&map, "param_count")?;
    let cfg = arch_from_kv(&map)?;
    let model = Model::new(cfg)?;
    let mut params = model.init_params(0);
    let expected = params.numel();
    if declared != expected {
        return Err(Error::Checkpoint(format!(
            "manifest declares {declared} parameters, architecture implies {expected}"
        )));
    }
    if blob.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, expected {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut off = 0;
    params.for_each_leaf_mut(|t| {
        for v in t.data_mut() {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&blob[off..off + 8]);
            *v = f64::from_le_bytes(buf);
            off += 8;
        }
    });
    Ok((model, params, meta))
}
