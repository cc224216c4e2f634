//! Model checkpoints: same container layout as the dataset format with a
//! different magic, parameters serialized in their canonical block order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::nn::model::{ModelConfig, ModelParams};
use crate::nn::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"MSNN01\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: u64,
    cols: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
}

pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(name, t)| TensorInfo {
                name: name.clone(),
                rows: t.rows as u64,
                cols: t.cols as u64,
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serialization");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for t in &params.tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), NnError> {
    let bytes = checkpoint_to_bytes(params);
    let mut file = fs::File::create(path).map_err(|e| NnError::Io(path.to_path_buf(), e))?;
    file.write_all(&bytes).map_err(|e| NnError::Io(path.to_path_buf(), e))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelParams, NnError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
    {
        return Err(NnError::BadCheckpoint("bad magic bytes".into()));
    }
    let mut off = CHECKPOINT_MAGIC.len();
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[off..off + 8]);
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    off += 8;
    if bytes.len() < off + header_len {
        return Err(NnError::BadCheckpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[off..off + header_len])
        .map_err(|e| NnError::BadCheckpoint(format!("malformed header: {e}")))?;
    off += header_len;

    // Rebuild the registry from the config, then fill values from the file.
    let mut params = ModelParams::init(&header.config, 0)?;
    if header.tensors.len() != params.tensors.len() {
        return Err(NnError::BadCheckpoint(format!(
            "checkpoint has {} tensors, config implies {}",
            header.tensors.len(),
            params.tensors.len()
        )));
    }
    let expected_payload: usize = header
        .tensors
        .iter()
        .map(|t| 8 * (t.rows * t.cols) as usize)
        .sum();
    if bytes.len() - off != expected_payload {
        return Err(NnError::BadCheckpoint(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - off,
            expected_payload
        )));
    }
    for (i, info) in header.tensors.iter().enumerate() {
        if info.name != params.names[i]
            || info.rows as usize != params.tensors[i].rows
            || info.cols as usize != params.tensors[i].cols
        {
            return Err(NnError::BadCheckpoint(format!(
                "tensor {} mismatch: file has {} ({}x{}), config implies {} ({}x{})",
                i, info.name, info.rows, info.cols,
                params.names[i], params.tensors[i].rows, params.tensors[i].cols
            )));
        }
        let count = (info.rows * info.cols) as usize;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[off..off + 8]);
            data.push(f64::from_le_bytes(b));
            off += 8;
        }
        params.tensors[i] = Arc::new(Mat::from_flat(info.rows as usize, info.cols as usize, data));
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Io(path.to_path_buf(), e))?;
    checkpoint_from_bytes(&bytes)
}
