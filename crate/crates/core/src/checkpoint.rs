//! Model checkpoints: a text header carrying the model config and tensor
//! names, followed by one MAFT blob per parameter in canonical order.
//!
//! ```text
//! MAF-CHECKPOINT 1
//! image_height=48
//! ...
//! tensor=backbone.0.w
//! ...
//! end
//! <MAFT blobs>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config_file::{apply_model_key, key_values, render_model_config};
use crate::error::{MafError, Result};
use crate::model::{init_params, MafConfig, MafParams};
use crate::params::{flatten, ParamTree};
use crate::tensor_file::{decode, encode, write_atomic};

pub const CHECKPOINT_MAGIC: &str = "MAF-CHECKPOINT 1";
const HEADER_END: &str = "end\n";

pub fn encode_checkpoint(config: &MafConfig, params: &MafParams) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut header = format!("{CHECKPOINT_MAGIC}\n");
    header.push_str(&render_model_config(config));
    for name in params.leaf_names() {
        let _ = writeln!(header, "tensor={name}");
    }
    header.push_str(HEADER_END);
    let mut bytes = header.into_bytes();
    for t in flatten(params) {
        bytes.extend(encode(&t)?);
    }
    Ok(bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MafConfig, MafParams)> {
    let magic = format!("{CHECKPOINT_MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(MafError::Format(format!("bad checkpoint magic, expected `{CHECKPOINT_MAGIC}`")));
    }
    let marker = format!("\n{HEADER_END}");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| MafError::Format("checkpoint header is not terminated".into()))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[magic.len()..end - HEADER_END.len()])
        .map_err(|_| MafError::Format("checkpoint header is not UTF-8".into()))?;

    let mut config = MafConfig::paper_analog();
    let mut names = Vec::new();
    for (line, k, v) in key_values(header)? {
        if k == "tensor" {
            names.push(v);
        } else if !apply_model_key(&mut config, line, &k, &v)? {
            return Err(MafError::Format(format!("checkpoint header line {line}: unknown key `{k}`")));
        }
    }
    let template = init_params(&config, 0)?;
    if names != template.leaf_names() {
        return Err(MafError::Format(format!(
            "checkpoint lists {} tensors that do not match the {} the config implies",
            names.len(),
            template.leaf_count()
        )));
    }

    let mut offset = end;
    let mut tensors = Vec::with_capacity(names.len());
    for name in &names {
        let (t, used) =
            decode(&bytes[offset..]).map_err(|e| MafError::Format(format!("tensor {name}: {e}")))?;
        tensors.push(t);
        offset += used;
    }
    if offset != bytes.len() {
        return Err(MafError::Format(format!("{} trailing bytes in checkpoint", bytes.len() - offset)));
    }
    let params = template.rebuild(tensors);
    params.check_shapes(&config)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &MafConfig, params: &MafParams) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(config, params)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MafConfig, MafParams)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MafError::io(path, e))?;
    decode_checkpoint(&bytes)
}
