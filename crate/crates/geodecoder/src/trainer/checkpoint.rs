//! Checkpoint container: one JSON header line, then raw little-endian f32
//! tensor data in registry order. Optimizer state lives in a sibling file
//! (`<checkpoint>.opt`) using the same container.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{GeoDecoderConfig, GeoDecoderParams, NamedTensor};

use super::adamw::OptimizerState;
use super::TrainerError;

pub const CKPT_FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    ckpt_format: u32,
    step: usize,
    config: GeoDecoderConfig,
    tensors: Vec<TensorEntry>,
}

/// `offset` is the byte offset into the binary section that follows the
/// header line; `len` is the scalar count.
#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainerError {
    TrainerError::Io { path: path.to_path_buf(), source }
}

fn bad(path: &Path, detail: impl Into<String>) -> TrainerError {
    TrainerError::BadCheckpoint { path: path.to_path_buf(), detail: detail.into() }
}

/// Sibling path holding optimizer state for a checkpoint.
pub fn optimizer_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".opt");
    checkpoint.with_file_name(name)
}

fn write_container(
    path: &Path,
    step: usize,
    config: &GeoDecoderConfig,
    tensors: &[(String, Vec<usize>, &[f32])],
) -> Result<(), TrainerError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len(),
        });
        offset += 4 * data.len() as u64;
    }
    let header = Header {
        ckpt_format: CKPT_FORMAT,
        step,
        config: config.clone(),
        tensors: entries,
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header).map_err(|e| bad(path, format!("header: {e}")))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    let mut buf = Vec::new();
    for (_, _, data) in tensors {
        buf.clear();
        buf.reserve(4 * data.len());
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_container(path: &Path) -> Result<(Header, Vec<Vec<f32>>), TrainerError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| io_err(path, e))?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| bad(path, format!("header: {e}")))?;
    if header.ckpt_format != CKPT_FORMAT {
        return Err(bad(path, format!("unsupported ckpt_format {}", header.ckpt_format)));
    }
    let mut expected_offset = 0u64;
    let mut arrays = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        if entry.offset != expected_offset {
            return Err(bad(
                path,
                format!("tensor {} at offset {}, expected {expected_offset}", entry.name, entry.offset),
            ));
        }
        let n_elems: usize = entry.shape.iter().product();
        if n_elems != entry.len {
            return Err(bad(
                path,
                format!("tensor {} len {} does not match shape {:?}", entry.name, entry.len, entry.shape),
            ));
        }
        let mut bytes = vec![0u8; 4 * entry.len];
        r.read_exact(&mut bytes).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                TrainerError::TruncatedCheckpoint {
                    path: path.to_path_buf(),
                    tensor: entry.name.clone(),
                    offset: entry.offset,
                }
            } else {
                io_err(path, e)
            }
        })?;
        arrays.push(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        expected_offset += 4 * entry.len as u64;
    }
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => return Err(bad(path, "trailing bytes after last tensor")),
        Err(e) => return Err(io_err(path, e)),
    }
    Ok((header, arrays))
}

pub fn save_checkpoint(
    path: &Path,
    params: &GeoDecoderParams<f32>,
    step: usize,
) -> Result<(), TrainerError> {
    let tensors: Vec<(String, Vec<usize>, &[f32])> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone(), t.data.as_slice()))
        .collect();
    write_container(path, step, params.config(), &tensors)
}

/// Loads a checkpoint; the tensor list must match the registry of the stored
/// config exactly (names, shapes, order).
pub fn load_checkpoint(path: &Path) -> Result<(GeoDecoderParams<f32>, usize), TrainerError> {
    let (header, arrays) = read_container(path)?;
    header.config.validate().map_err(|e| bad(path, format!("config: {e}")))?;
    let specs = header.config.tensor_specs();
    if specs.len() != header.tensors.len() {
        return Err(bad(
            path,
            format!("{} tensors, config registry has {}", header.tensors.len(), specs.len()),
        ));
    }
    for (spec, entry) in specs.iter().zip(&header.tensors) {
        if spec.name != entry.name || spec.shape != entry.shape {
            return Err(bad(
                path,
                format!(
                    "tensor {} {:?} does not match registry entry {} {:?}",
                    entry.name, entry.shape, spec.name, spec.shape
                ),
            ));
        }
    }
    let params = GeoDecoderParams::from_arrays(&header.config, arrays)
        .map_err(|e| bad(path, e.to_string()))?;
    Ok((params, header.step))
}

pub fn save_optimizer(
    path: &Path,
    state: &OptimizerState<f32>,
    params: &GeoDecoderParams<f32>,
) -> Result<(), TrainerError> {
    let mut tensors: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
    for (prefix, moments) in [("m", &state.m), ("v", &state.v)] {
        for (t, arr) in params.tensors().iter().zip(moments) {
            tensors.push((format!("{prefix}.{}", t.name), t.shape.clone(), arr.as_slice()));
        }
    }
    write_container(path, state.step, params.config(), &tensors)
}

pub fn load_optimizer(
    path: &Path,
    params: &GeoDecoderParams<f32>,
) -> Result<OptimizerState<f32>, TrainerError> {
    let (header, mut arrays) = read_container(path)?;
    let n = params.tensors().len();
    if header.tensors.len() != 2 * n {
        return Err(bad(
            path,
            format!("{} tensors, expected {} moment arrays", header.tensors.len(), 2 * n),
        ));
    }
    for (i, t) in params.tensors().iter().enumerate() {
        for (block, prefix) in [(0, "m"), (n, "v")] {
            let entry = &header.tensors[block + i];
            if entry.name != format!("{prefix}.{}", t.name) || entry.shape != t.shape {
                return Err(bad(
                    path,
                    format!("moment {} {:?} does not match {}.{}", entry.name, entry.shape, prefix, t.name),
                ));
            }
        }
    }
    let v = arrays.split_off(n);
    Ok(OptimizerState { step: header.step, m: arrays, v })
}

/// Registry tensors stored in a checkpoint, as (name, shape, data) triples.
/// Exposed for tools that inspect checkpoints without building a model.
pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor<f32>>, TrainerError> {
    let (header, arrays) = read_container(path)?;
    Ok(header
        .tensors
        .into_iter()
        .zip(arrays)
        .map(|(e, data)| NamedTensor { name: e.name, shape: e.shape, data: Arc::new(data) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tiny_config() -> GeoDecoderConfig {
        GeoDecoderConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            vocab_size: 16,
            image_size: 16,
            patch_size: 16,
            max_text_in: 8,
            max_text_out: 8,
            dropout: 0.0,
            temperature: 1.0,
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = GeoDecoderParams::<f32>::init(&tiny_config(), 11).unwrap();
        save_checkpoint(&path, &params, 42).unwrap();
        let (loaded, step) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 42);
        assert_eq!(loaded.config(), params.config());
        for (a, b) in loaded.tensors().iter().zip(params.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{}", a.name);
        }
    }

    #[test]
    fn header_line_counts_every_scalar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = tiny_config();
        let params = GeoDecoderParams::<f32>::init(&cfg, 3).unwrap();
        save_checkpoint(&path, &params, 0).unwrap();
        let bytes = fs::read(&path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["ckpt_format"], 1);
        let total: u64 = header["tensors"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["len"].as_u64().unwrap())
            .sum();
        assert_eq!(total, cfg.count_params() as u64);
        assert_eq!(bytes.len() - nl - 1, 4 * total as usize);
    }

    #[test]
    fn truncated_file_reports_tensor_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = GeoDecoderParams::<f32>::init(&tiny_config(), 1).unwrap();
        save_checkpoint(&path, &params, 7).unwrap();
        let bytes = fs::read(&path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        // Keep the header, the first tensor, and half of the second.
        let first = params.tensors()[0].data.len() * 4;
        let keep = nl + 1 + first + params.tensors()[1].data.len() * 2;
        fs::write(&path, &bytes[..keep]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        match err {
            TrainerError::TruncatedCheckpoint { tensor, offset, .. } => {
                assert_eq!(tensor, params.tensors()[1].name);
                assert_eq!(offset, first as u64);
            }
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn unknown_format_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = GeoDecoderParams::<f32>::init(&tiny_config(), 1).unwrap();
        save_checkpoint(&path, &params, 0).unwrap();
        let text = fs::read(&path).unwrap();
        let patched = String::from_utf8_lossy(&text).replacen("\"ckpt_format\":1", "\"ckpt_format\":9", 1);
        fs::write(&path, patched.as_bytes()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, TrainerError::BadCheckpoint { .. }), "{err:?}");
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("model.ckpt");
        let params = GeoDecoderParams::<f32>::init(&tiny_config(), 2).unwrap();
        let mut state = OptimizerState::new(&params);
        state.step = 9;
        for arr in state.m.iter_mut().chain(state.v.iter_mut()) {
            for (i, v) in arr.iter_mut().enumerate() {
                *v = (i as f32).sin();
            }
        }
        let opt = optimizer_path(&ckpt);
        assert_eq!(opt.file_name().unwrap(), "model.ckpt.opt");
        save_optimizer(&opt, &state, &params).unwrap();
        let loaded = load_optimizer(&opt, &params).unwrap();
        assert_eq!(loaded.step, 9);
        assert_eq!(loaded.m, state.m);
        assert_eq!(loaded.v, state.v);
    }

    #[test]
    fn checkpoint_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let params = GeoDecoderParams::<f32>::init(&tiny_config(), 5).unwrap();
        save_checkpoint(&a, &params, 3).unwrap();
        save_checkpoint(&b, &params, 3).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
