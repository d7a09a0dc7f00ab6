//! Versioned checkpoint container. A fixed magic and version, a JSON header
//! describing the config, parameter names/shapes, optimizer state, iteration
//! and rng, then the raw little-endian `f32` payload: parameter tensors in
//! header order followed by Adam moment pairs. Tied tensors are stored once
//! under their first name; rebuilding the networks restores the tying, and
//! the stored shared-name list is validated against it on load.

use super::{Adam, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::nn::{Param, Scalar};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    name: String,
    shape: Vec<usize>,
    has_moments: bool,
}

#[derive(Serialize, Deserialize)]
struct AdamGroup {
    group: String,
    t: u64,
    entries: Vec<AdamEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    rng: ChaCha8Rng,
    shared_names: Vec<String>,
    params: Vec<TensorEntry>,
    adam: Vec<AdamGroup>,
}

fn write_tensor<S: Scalar>(out: &mut Vec<u8>, value: &ArrayD<S>) {
    for &v in value.iter() {
        out.extend_from_slice(&(v.to_f() as f32).to_le_bytes());
    }
}

fn read_tensor<S: Scalar>(
    bytes: &[u8],
    offset: &mut usize,
    shape: &[usize],
) -> Result<ArrayD<S>> {
    let len: usize = shape.iter().product();
    let need = len * 4;
    if *offset + need > bytes.len() {
        return Err(Error::CheckpointFormat("payload truncated".into()));
    }
    let mut data = Vec::with_capacity(len);
    for i in 0..len {
        let o = *offset + i * 4;
        let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        data.push(S::from_f(v as f64));
    }
    *offset += need;
    ArrayD::from_shape_vec(shape.to_vec(), data)
        .map_err(|e| Error::CheckpointFormat(format!("bad tensor shape: {e}")))
}

/// Parameter groups in a stable order, each name prefixed by its network.
fn param_groups<S: Scalar>(state: &TrainState<S>) -> Vec<(&'static str, Vec<(String, Param<S>)>)> {
    use crate::networks::Network;
    let prefix = |pfx: &str, list: Vec<(String, Param<S>)>| -> Vec<(String, Param<S>)> {
        list.into_iter()
            .map(|(n, p)| (format!("{pfx}.{n}"), p))
            .collect()
    };
    vec![
        ("ga", prefix("ga", state.wnet.ga.named_params())),
        ("gs", prefix("gs", state.wnet.gs.named_params())),
        ("da", prefix("da", state.d_a.named_params())),
        ("ds", prefix("ds", state.d_s.named_params())),
    ]
}

/// Unique parameters across all groups, first name wins for tied tensors.
fn unique_params<S: Scalar>(state: &TrainState<S>) -> Vec<(String, Param<S>)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, group) in param_groups(state) {
        for (name, p) in group {
            if seen.insert(p.id()) {
                out.push((name, p));
            }
        }
    }
    out
}

fn adam_group_params<S: Scalar>(
    state: &TrainState<S>,
    group: &str,
) -> Vec<(String, Param<S>)> {
    use crate::networks::Network;
    let prefix = |pfx: &str, list: Vec<(String, Param<S>)>| -> Vec<(String, Param<S>)> {
        list.into_iter()
            .map(|(n, p)| (format!("{pfx}.{n}"), p))
            .collect()
    };
    let source: Vec<(String, Param<S>)> = match group {
        "g" => state.generator_params(),
        "da" => prefix("da", state.d_a.named_params()),
        _ => prefix("ds", state.d_s.named_params()),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (name, p) in source {
        if seen.insert(p.id()) {
            out.push((name, p));
        }
    }
    out
}

pub fn checkpoint_save<S: Scalar>(state: &TrainState<S>, path: &Path) -> Result<()> {
    let params = unique_params(state);
    let mut payload = Vec::new();
    let param_entries: Vec<TensorEntry> = params
        .iter()
        .map(|(name, p)| {
            write_tensor(&mut payload, &p.value());
            TensorEntry {
                name: name.clone(),
                shape: p.shape(),
            }
        })
        .collect();

    let mut adam_groups = Vec::new();
    for (group, adam) in [
        ("g", &state.adam_g),
        ("da", &state.adam_da),
        ("ds", &state.adam_ds),
    ] {
        let group_params = adam_group_params(state, group);
        let entries: Vec<AdamEntry> = group_params
            .iter()
            .map(|(name, p)| {
                let moments = adam.moments_for(p);
                if let Some((m, v)) = moments {
                    write_tensor(&mut payload, m);
                    write_tensor(&mut payload, v);
                }
                AdamEntry {
                    name: name.clone(),
                    shape: p.shape(),
                    has_moments: moments.is_some(),
                }
            })
            .collect();
        adam_groups.push(AdamGroup {
            group: group.into(),
            t: adam.t,
            entries,
        });
    }

    let header = Header {
        config: state.config.clone(),
        iteration: state.iteration,
        rng: state.rng.clone(),
        shared_names: state.wnet.shared_names.clone(),
        params: param_entries,
        adam: adam_groups,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::CheckpointFormat(e.to_string()))?;

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(CHECKPOINT_MAGIC).map_err(|e| Error::io(path, e))?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    file.write_all(&payload).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn checkpoint_load<S: Scalar>(path: &Path) -> Result<TrainState<S>> {
    let mut file = std::fs::File::open(path).map_err(|_| Error::NotFound {
        path: path.to_path_buf(),
    })?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let mut version = [0u8; 4];
    file.read_exact(&mut version).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(version);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut len = [0u8; 8];
    file.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;

    let mut state = TrainState::<S>::new(header.config.clone())?;
    if state.wnet.shared_names != header.shared_names {
        return Err(Error::CheckpointFormat(
            "shared-name list does not match the rebuilt networks".into(),
        ));
    }

    let mut offset = 0usize;
    let built = unique_params(&state);
    if built.len() != header.params.len() {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint has {} parameters, networks have {}",
            header.params.len(),
            built.len()
        )));
    }
    for ((name, param), entry) in built.iter().zip(header.params.iter()) {
        if name != &entry.name || param.shape() != entry.shape {
            return Err(Error::CheckpointFormat(format!(
                "parameter mismatch: built `{name}` {:?}, stored `{}` {:?}",
                param.shape(),
                entry.name,
                entry.shape
            )));
        }
        param.set_value(read_tensor(&payload, &mut offset, &entry.shape)?);
    }

    for group in &header.adam {
        let group_params = adam_group_params(&state, &group.group);
        if group_params.len() != group.entries.len() {
            return Err(Error::CheckpointFormat(format!(
                "optimizer group `{}` entry count mismatch",
                group.group
            )));
        }
        let mut moments = Vec::new();
        for ((name, param), entry) in group_params.iter().zip(group.entries.iter()) {
            if name != &entry.name {
                return Err(Error::CheckpointFormat(format!(
                    "optimizer entry mismatch: built `{name}`, stored `{}`",
                    entry.name
                )));
            }
            if entry.has_moments {
                let m = read_tensor(&payload, &mut offset, &entry.shape)?;
                let v = read_tensor(&payload, &mut offset, &entry.shape)?;
                moments.push((param.clone(), m, v));
            }
        }
        let adam: &mut Adam<S> = match group.group.as_str() {
            "g" => &mut state.adam_g,
            "da" => &mut state.adam_da,
            "ds" => &mut state.adam_ds,
            other => {
                return Err(Error::CheckpointFormat(format!(
                    "unknown optimizer group `{other}`"
                )))
            }
        };
        adam.t = group.t;
        for (param, m, v) in moments {
            adam.set_moments(&param, m, v);
        }
    }
    if offset != payload.len() {
        return Err(Error::CheckpointFormat(format!(
            "trailing payload: read {offset} of {} bytes",
            payload.len()
        )));
    }

    state.iteration = header.iteration;
    state.rng = header.rng;
    Ok(state)
}
