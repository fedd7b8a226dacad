//! Model checkpoints on disk.
//!
//! A classifier or encoder checkpoint is a directory with `weights.bin`
//! (magic, format version, parameter count, little-endian f64 values),
//! `vocab.txt` (one token per line, in id order) and `manifest.json`.
//! A baseline checkpoint holds `model.bin` (magic, version, bincode body)
//! next to its `manifest.json`.

use std::fs;
use std::path::Path;

use depkit_core::baselines::{BaselineConfig, BaselineKind, BaselineModel};
use depkit_core::corpus::LabelSchema;
use depkit_core::encoder::network::NetworkConfig;
use depkit_core::encoder::tokenizer::Vocab;
use depkit_core::encoder::{ClassifierModel, Encoder, EncoderRef, TrainingStage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};

const WEIGHTS_MAGIC: &[u8; 8] = b"DPKWGHT\0";
const BASELINE_MAGIC: &[u8; 8] = b"DPKBASE\0";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer description recorded in classifier manifests.
pub const OPTIMIZER: &str = "adam(beta1=0.9, beta2=0.999, eps=1e-8), linear decay to 0, no warmup, unweighted cross-entropy, no dropout";

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn encode_weights(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * values.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<f64>, String> {
    let body = check_header(bytes, WEIGHTS_MAGIC)?;
    let (count, body) = body.split_at_checked(8).ok_or("truncated parameter count")?;
    let count = u64::from_le_bytes(count.try_into().expect("8 bytes")) as usize;
    if body.len() != count.checked_mul(8).ok_or("parameter count overflows")? {
        return Err(format!("expected {count} parameters, found {} bytes", body.len()));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn check_header<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<&'a [u8], String> {
    let (head, rest) = bytes.split_at_checked(8).ok_or("file too short")?;
    if head != magic {
        return Err("bad magic number".into());
    }
    let (version, rest) = rest.split_at_checked(4).ok_or("truncated version")?;
    let version = u32::from_le_bytes(version.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    Ok(rest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_error(path, e.to_string()))?;
    write_atomic(path, text + "\n")
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| format_error(path, e.to_string()))
}

fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    write_atomic(path, text)
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let tokens = read_text(path)?.lines().map(str::to_string).collect();
    Vocab::from_tokens(tokens).ok_or_else(|| format_error(path, "vocabulary must start with the special tokens and be duplicate-free"))
}

fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_weights(&bytes).map_err(|reason| format_error(path, reason))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub format_version: u32,
    pub encoder: EncoderRef,
    pub network: NetworkConfig,
    pub schema: LabelSchema,
    pub lineage: Vec<String>,
    pub stages: Vec<TrainingStage>,
    pub seeds: Vec<u64>,
    pub optimizer: String,
}

pub fn save_classifier(dir: &Path, model: &ClassifierModel, seeds: &[u64]) -> Result<()> {
    write_atomic(&dir.join("weights.bin"), encode_weights(model.params()))?;
    write_vocab(&dir.join("vocab.txt"), model.vocab())?;
    let manifest = ClassifierManifest {
        format_version: FORMAT_VERSION,
        encoder: model.encoder().clone(),
        network: model.config().clone(),
        schema: model.schema().clone(),
        lineage: model.lineage(),
        stages: model.stages().to_vec(),
        seeds: seeds.to_vec(),
        optimizer: OPTIMIZER.into(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_classifier(dir: &Path) -> Result<ClassifierModel> {
    let manifest: ClassifierManifest = read_json(&dir.join("manifest.json"))?;
    let vocab = read_vocab(&dir.join("vocab.txt"))?;
    let params = read_weights(&dir.join("weights.bin"))?;
    ClassifierModel::from_parts(manifest.encoder, manifest.network, vocab, manifest.schema, params, manifest.stages)
        .map_err(|e| format_error(dir, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderManifest {
    pub format_version: u32,
    pub encoder: EncoderRef,
    pub network: NetworkConfig,
}

/// Saves pretrained encoder weights (no head), the form in which local
/// checkpoints are looked up.
pub fn save_encoder(dir: &Path, encoder: &Encoder) -> Result<()> {
    write_atomic(&dir.join("weights.bin"), encode_weights(encoder.weights()))?;
    write_vocab(&dir.join("vocab.txt"), encoder.vocab())?;
    let manifest = EncoderManifest { format_version: FORMAT_VERSION, encoder: encoder.reference().clone(), network: encoder.config().clone() };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_encoder(dir: &Path) -> Result<Encoder> {
    let manifest: EncoderManifest = read_json(&dir.join("manifest.json"))?;
    let vocab = read_vocab(&dir.join("vocab.txt"))?;
    let weights = read_weights(&dir.join("weights.bin"))?;
    Encoder::from_parts(manifest.encoder, manifest.network, vocab, weights).map_err(|e| format_error(dir, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineManifest {
    pub format_version: u32,
    pub kind: BaselineKind,
    pub schema: LabelSchema,
    pub config: BaselineConfig,
    pub seed: u64,
}

pub fn save_baseline(dir: &Path, model: &BaselineModel) -> Result<()> {
    let body = bincode::serialize(model).map_err(|e| format_error(dir, e.to_string()))?;
    let mut blob = Vec::with_capacity(12 + body.len());
    blob.extend_from_slice(BASELINE_MAGIC);
    blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    blob.extend_from_slice(&body);
    write_atomic(&dir.join("model.bin"), blob)?;
    let manifest = BaselineManifest {
        format_version: FORMAT_VERSION,
        kind: model.kind,
        schema: model.schema.clone(),
        config: model.config.clone(),
        seed: model.seed,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_baseline(dir: &Path) -> Result<BaselineModel> {
    let path = dir.join("model.bin");
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    let body = check_header(&bytes, BASELINE_MAGIC).map_err(|r| format_error(&path, r))?;
    bincode::deserialize(body).map_err(|e| format_error(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_and_reject_corruption() {
        let values = vec![0.0, -1.5, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        let bytes = encode_weights(&values);
        assert_eq!(decode_weights(&bytes).unwrap(), values);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
        let mut future = bytes;
        future[8] = 9;
        assert!(decode_weights(&future).unwrap_err().contains("version"));
    }
}
