//! Weight/checkpoint files (`.htw`).
//!
//! Layout:
//!   bytes 0..4   magic "HTRC"
//!   u32 LE       format version (1)
//!   u64 LE       header length in bytes
//!   header       UTF-8 key=value lines: full model config, then a tensor
//!                manifest (name, shape, byte offset into payload, dtype)
//!   payload      raw little-endian f32 values, row-major, manifest order
//!
//! Checkpoints of a training run are written as `step-NNNNNN.htw` next to a
//! `run-manifest.tsv` listing `step<TAB>filename` per line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::config::{ConfigError, ModelConfig};
use super::weights::{layout, Parameter, TransformerWeights};
use crate::num::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HTRC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightIoError {
    #[error("bad magic bytes (not a weight file)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated weight file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("tensor manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("malformed header: {0}")]
    HeaderParse(String),
    #[error("invalid stored config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn header_text<F: Scalar>(cfg: &ModelConfig, weights: &TransformerWeights<F>) -> String {
    let mut s = String::new();
    s.push_str(&format!("config.n_layers={}\n", cfg.n_layers));
    s.push_str(&format!("config.d_model={}\n", cfg.d_model));
    s.push_str(&format!("config.n_heads={}\n", cfg.n_heads));
    s.push_str(&format!("config.vocab_size={}\n", cfg.vocab_size));
    s.push_str(&format!("config.max_seq_len={}\n", cfg.max_seq_len));
    s.push_str(&format!("config.mlp_hidden={}\n", cfg.mlp_hidden));
    s.push_str(&format!("config.layer_norm_eps={}\n", cfg.layer_norm_eps));
    s.push_str(&format!("config.seed={}\n", cfg.seed));
    s.push_str(&format!("tensor_count={}\n", weights.params().len()));
    let mut offset = 0usize;
    for (i, p) in weights.params().iter().enumerate() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("tensor.{i}.name={}\n", p.name));
        s.push_str(&format!("tensor.{i}.shape={}\n", shape.join(",")));
        s.push_str(&format!("tensor.{i}.offset={offset}\n"));
        s.push_str(&format!("tensor.{i}.dtype=f32\n"));
        offset += p.value.len() * 4;
    }
    s
}

pub fn save_weights<F: Scalar>(
    path: &Path,
    cfg: &ModelConfig,
    weights: &TransformerWeights<F>,
) -> Result<(), WeightIoError> {
    let header = header_text(cfg, weights);
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    for p in weights.params() {
        for &v in p.value.data() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct HeaderMap(Vec<(String, String)>);

impl HeaderMap {
    fn get(&self, key: &str) -> Result<&str, WeightIoError> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| WeightIoError::HeaderParse(format!("missing key {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, WeightIoError> {
        self.get(key)?
            .parse()
            .map_err(|_| WeightIoError::HeaderParse(format!("bad value for {key}")))
    }
}

pub fn load_weights<F: Scalar>(
    path: &Path,
) -> Result<(ModelConfig, TransformerWeights<F>), WeightIoError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(WeightIoError::Truncated {
            expected: 16,
            actual: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(WeightIoError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(WeightIoError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16 + header_len;
    if bytes.len() < payload_start {
        return Err(WeightIoError::Truncated {
            expected: payload_start,
            actual: bytes.len(),
        });
    }
    let header = std::str::from_utf8(&bytes[16..payload_start])
        .map_err(|e| WeightIoError::HeaderParse(e.to_string()))?;
    let kv = HeaderMap(
        header
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| WeightIoError::HeaderParse(format!("bad line {l:?}")))
            })
            .collect::<Result<_, _>>()?,
    );

    let mut cfg = ModelConfig {
        n_layers: kv.parse("config.n_layers")?,
        d_model: kv.parse("config.d_model")?,
        n_heads: kv.parse("config.n_heads")?,
        vocab_size: kv.parse("config.vocab_size")?,
        max_seq_len: kv.parse("config.max_seq_len")?,
        mlp_hidden: kv.parse("config.mlp_hidden")?,
        layer_norm_eps: kv.parse("config.layer_norm_eps")?,
        seed: kv.parse("config.seed")?,
    };
    cfg.validate()?;

    let tensor_count: usize = kv.parse("tensor_count")?;
    let expected = layout(&cfg);
    if tensor_count != expected.len() {
        return Err(WeightIoError::ManifestMismatch(format!(
            "manifest lists {tensor_count} tensors, config implies {}",
            expected.len()
        )));
    }

    let payload = &bytes[payload_start..];
    let mut params = Vec::with_capacity(tensor_count);
    for (i, (want_name, want_shape)) in expected.iter().enumerate() {
        let name = kv.get(&format!("tensor.{i}.name"))?;
        if name != want_name {
            return Err(WeightIoError::ManifestMismatch(format!(
                "tensor {i} is {name:?}, expected {want_name:?}"
            )));
        }
        let shape: Vec<usize> = kv
            .get(&format!("tensor.{i}.shape"))?
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| WeightIoError::HeaderParse(format!("bad shape for tensor {i}")))
            })
            .collect::<Result<_, _>>()?;
        if &shape != want_shape {
            return Err(WeightIoError::ManifestMismatch(format!(
                "tensor {name} has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        let dtype = kv.get(&format!("tensor.{i}.dtype"))?;
        if dtype != "f32" {
            return Err(WeightIoError::ManifestMismatch(format!(
                "tensor {name} has dtype {dtype}, only f32 is supported"
            )));
        }
        let offset: usize = kv.parse(&format!("tensor.{i}.offset"))?;
        let n: usize = shape.iter().product();
        let end = offset + n * 4;
        if payload.len() < end {
            return Err(WeightIoError::Truncated {
                expected: payload_start + end,
                actual: bytes.len(),
            });
        }
        let data: Vec<F> = payload[offset..end]
            .chunks_exact(4)
            .map(|c| F::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        params.push(Parameter::new(name.to_string(), Tensor::from_parts(shape, data)));
    }
    Ok((cfg, TransformerWeights::from_params(params)))
}

/// `step-NNNNNN.htw` file name for a training step.
pub fn checkpoint_file_name(step: u64) -> String {
    format!("step-{step:06}.htw")
}

/// Write a checkpoint and rewrite the run manifest with all steps so far.
pub fn save_checkpoint<F: Scalar>(
    run_dir: &Path,
    steps_so_far: &[u64],
    cfg: &ModelConfig,
    weights: &TransformerWeights<F>,
) -> Result<PathBuf, WeightIoError> {
    fs::create_dir_all(run_dir)?;
    let step = *steps_so_far.last().expect("at least the current step");
    let file = run_dir.join(checkpoint_file_name(step));
    save_weights(&file, cfg, weights)?;
    let mut manifest = String::new();
    for &s in steps_so_far {
        manifest.push_str(&format!("{s}\t{}\n", checkpoint_file_name(s)));
    }
    fs::write(run_dir.join("run-manifest.tsv"), manifest)?;
    Ok(file)
}

/// Read the checkpoint list of a run directory, ascending by step.
pub fn read_run_manifest(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>, WeightIoError> {
    let text = fs::read_to_string(run_dir.join("run-manifest.tsv"))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (step, file) = line
            .split_once('\t')
            .ok_or_else(|| WeightIoError::HeaderParse(format!("bad manifest line {line:?}")))?;
        let step: u64 = step
            .parse()
            .map_err(|_| WeightIoError::HeaderParse(format!("bad step in {line:?}")))?;
        out.push((step, run_dir.join(file)));
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}
