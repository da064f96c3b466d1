//! Self-describing checkpoint container: magic + format version, a JSON
//! metadata record, then named `f32` arrays in declared order (little
//! endian). Optimizer state rides along under an `opt::` prefix, which makes
//! resumed runs bit-identical to uninterrupted ones.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffusion::schedule::ScheduleKind;
use crate::diffusion::unet::{DenoiserConfig, UNet};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"TGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: DenoiserConfig,
    pub schedule_kind: ScheduleKind,
    pub t_count: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub iteration: u64,
    pub balance_mode: String,
    pub seed: u64,
    /// Tokenizer words; UNK is implicit id 0.
    pub token_words: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
    #[serde(default)]
    arrays: Vec<ArrayDesc>,
}

impl CheckpointMeta {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: DenoiserConfig,
        schedule_kind: ScheduleKind,
        t_count: usize,
        beta_start: f64,
        beta_end: f64,
        balance_mode: String,
        seed: u64,
        token_words: Vec<String>,
    ) -> Self {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            config,
            schedule_kind,
            t_count,
            beta_start,
            beta_end,
            iteration: 0,
            balance_mode,
            seed,
            token_words,
            extra: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ArrayDesc {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(
    path: &Path,
    unet: &mut UNet<f32>,
    meta: &CheckpointMeta,
    opt_state: &[(String, Tensor<f32>)],
) -> Result<()> {
    let mut arrays: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    unet.visit_params(&mut |name, p| {
        arrays.push((name, p.value.shape.clone(), p.value.data.clone()));
    });
    for (name, t) in opt_state {
        arrays.push((format!("opt::{name}"), t.shape.clone(), t.data.clone()));
    }
    let mut meta = meta.clone();
    meta.format_version = FORMAT_VERSION;
    meta.arrays = arrays
        .iter()
        .map(|(name, shape, _)| ArrayDesc { name: name.clone(), shape: shape.clone() })
        .collect();
    let meta_json = serde_json::to_vec(&meta).expect("meta serializable");

    let mut out = Vec::with_capacity(meta_json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    for (_, _, data) in &arrays {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub unet: UNet<f32>,
    pub meta: CheckpointMeta,
    pub opt_state: Vec<(String, Tensor<f32>)>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fail(format!(
            "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + meta_len {
        return Err(fail("truncated metadata".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..16 + meta_len])
        .map_err(|e| fail(format!("bad metadata: {e}")))?;

    let mut cursor = 16 + meta_len;
    let mut arrays: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for desc in &meta.arrays {
        let numel: usize = desc.shape.iter().product();
        let end = cursor + numel * 4;
        if bytes.len() < end {
            return Err(fail(format!("truncated array {}", desc.name)));
        }
        let data: Vec<f32> = bytes[cursor..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.insert(desc.name.clone(), Tensor::from_vec(data, &desc.shape));
        cursor = end;
    }

    let mut unet = UNet::<f32>::new(meta.config.clone(), 0)?;
    let mut missing = Vec::new();
    unet.visit_params(&mut |name, p| match arrays.remove(&name) {
        Some(t) if t.shape == p.value.shape => p.value = t,
        Some(t) => missing.push(format!("{name}: shape {:?} vs {:?}", t.shape, p.value.shape)),
        None => missing.push(format!("{name}: absent")),
    });
    if !missing.is_empty() {
        return Err(fail(format!("parameter mismatch: {}", missing.join("; "))));
    }
    let opt_state: Vec<(String, Tensor<f32>)> = arrays
        .into_iter()
        .filter_map(|(name, t)| name.strip_prefix("opt::").map(|n| (n.to_string(), t)))
        .collect();
    Ok(LoadedCheckpoint { unet, meta, opt_state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::unet::DenoiserVariant;

    fn meta_for(cfg: &DenoiserConfig) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            config: cfg.clone(),
            schedule_kind: ScheduleKind::Cosine,
            t_count: 10,
            beta_start: 1e-4,
            beta_end: 0.02,
            iteration: 123,
            balance_mode: "uniform".into(),
            seed: 42,
            token_words: vec!["hook".into(), "liver".into()],
            extra: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    #[test]
    fn round_trip_preserves_params_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DenoiserConfig {
            variant: DenoiserVariant::Base,
            image_size: 8,
            base_channels: 8,
            channel_mults: vec![1, 1],
            blocks_per_level: 1,
            attention_levels: vec![1],
            text_dim: 8,
            time_dim: 8,
            l_max: 4,
            vocab_size: 4,
            text_conditioned: true,
        };
        let mut unet = UNet::<f32>::new(cfg.clone(), 77).unwrap();
        let path = dir.path().join("m.ckpt");
        let opt_state =
            vec![("adam.t".to_string(), Tensor::from_vec(vec![3.0f32], &[1]))];
        save_checkpoint(&path, &mut unet, &meta_for(&cfg), &opt_state).unwrap();
        let mut loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta.iteration, 123);
        assert_eq!(loaded.meta.token_words.len(), 2);
        assert_eq!(loaded.opt_state.len(), 1);
        // parameters identical
        let mut a = Vec::new();
        unet.visit_params(&mut |_, p| a.push(p.value.data.clone()));
        let mut b = Vec::new();
        loaded.unet.visit_params(&mut |_, p| b.push(p.value.data.clone()));
        assert_eq!(a, b);
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = match load_checkpoint(&path) {
            Err(e) => e,
            Ok(_) => panic!("version mismatch accepted"),
        };
        assert!(err.to_string().contains("version 99"));
    }
}
