//! `RDCK` checkpoints: magic, `u32` format version, length-prefixed JSON
//! header (architecture, optimizer scalars, step), then named `RDT1` blocks.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{read_rdt, write_rdt, AdamState, ParamSet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_HEADER: u32 = 1 << 24;
const MAX_NAME: u32 = 1 << 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub optimizer: Option<AdamState>,
    /// Optimizer steps completed when the checkpoint was written.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    optimizer: Option<AdamState>,
    step: u64,
}

fn write_block<W: Write>(w: &mut W, name: &str, t: &crate::tensor::Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    write_rdt(w, t)
}

fn encode<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<()> {
    let header = Header {
        architecture: ck.model.arch.clone(),
        optimizer: ck.optimizer.clone(),
        step: ck.step,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e| Error::Format(format!("checkpoint write failed: {e}"));
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;

    let params = &ck.model.params;
    let moments = ck.optimizer.as_ref().map_or(0, |_| 2);
    let blocks = params.len() * (1 + moments);
    w.write_all(&(blocks as u32).to_le_bytes()).map_err(io)?;
    for p in params.iter() {
        write_block(w, &p.name, &p.value).map_err(io)?;
    }
    if let Some(opt) = &ck.optimizer {
        if opt.first_moment.len() != params.len() {
            return Err(Error::State("optimizer state does not match parameters".into()));
        }
        for (kind, moments) in [("m", &opt.first_moment), ("v", &opt.second_moment)] {
            for (p, m) in params.iter().zip(moments) {
                let t = crate::tensor::Tensor::new(p.value.shape().to_vec(), m.clone())?;
                write_block(w, &format!("adam.{kind}/{}", p.name), &t).map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelParams,
    optimizer: Option<&AdamState>,
    step: u64,
) -> Result<()> {
    let path = path.as_ref();
    let ck = Checkpoint {
        model: model.clone(),
        optimizer: optimizer.cloned(),
        step,
    };
    let tmp = path.with_extension("rdck.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        encode(&mut w, &ck)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint ({what}): {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn decode<R: Read>(r: &mut R, expected: Option<&Architecture>) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint magic: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("not a checkpoint (magic {magic:?})")));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = read_u32(r, "header length")?;
    if len > MAX_HEADER {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)
        .map_err(|e| Error::Format(format!("truncated checkpoint header: {e}")))?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if let Some(want) = expected {
        if want != &header.architecture {
            return Err(Error::Format(format!(
                "checkpoint architecture {} does not match expected {}",
                serde_json::to_string(&header.architecture).unwrap_or_default(),
                serde_json::to_string(want).unwrap_or_default()
            )));
        }
    }
    header
        .architecture
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint architecture invalid: {e}")))?;

    let blocks = read_u32(r, "block count")? as usize;
    let mut named = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let nlen = read_u32(r, "block name")?;
        if nlen > MAX_NAME {
            return Err(Error::Format(format!("implausible block name length {nlen}")));
        }
        let mut name = vec![0u8; nlen as usize];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated block name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        named.push((name, read_rdt(r)?));
    }

    let shapes = header.architecture.param_shapes();
    let n = shapes.len();
    let expected_blocks = n * if header.optimizer.is_some() { 3 } else { 1 };
    if named.len() != expected_blocks {
        return Err(Error::Format(format!(
            "checkpoint holds {} blocks, architecture needs {expected_blocks}",
            named.len()
        )));
    }
    let mut params = ParamSet::new();
    for ((name, tensor), (want_name, want_shape)) in named.iter().zip(&shapes) {
        if name != want_name || tensor.shape() != want_shape.as_slice() {
            return Err(Error::Format(format!(
                "block `{name}` {:?} where `{want_name}` {want_shape:?} was expected",
                tensor.shape()
            )));
        }
        params
            .insert(name.clone(), tensor.clone())
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    let optimizer = match header.optimizer {
        Some(mut opt) => {
            let take = |offset: usize, kind: &str| -> Result<Vec<Vec<f64>>> {
                named[offset..offset + n]
                    .iter()
                    .zip(&shapes)
                    .map(|((name, t), (pname, shape))| {
                        if name != &format!("adam.{kind}/{pname}") || t.shape() != shape.as_slice() {
                            return Err(Error::Format(format!("unexpected optimizer block `{name}`")));
                        }
                        Ok(t.data().to_vec())
                    })
                    .collect()
            };
            opt.first_moment = take(n, "m")?;
            opt.second_moment = take(2 * n, "v")?;
            opt.validate().map_err(|e| Error::Format(e.to_string()))?;
            Some(opt)
        }
        None => None,
    };
    Ok(Checkpoint {
        model: ModelParams {
            arch: header.architecture,
            params,
        },
        optimizer,
        step: header.step,
    })
}

/// Loads a checkpoint, optionally insisting on a specific architecture.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&Architecture>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(&mut BufReader::new(file), expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            c_repr: 4,
            encoder_widths: vec![4, 4, 4, 4],
            blocks: 1,
            degrader_width: 4,
            generator_width: 4,
            mlp_width: 4,
            ..Architecture::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelParams::init(small_arch(), 5).unwrap();
        let mut opt = AdamState::new(&model.params, 1e-3).unwrap();
        opt.step_count = 7;
        opt.first_moment[0][0] = 0.125;
        opt.second_moment[1][0] = 1.0 / 3.0;
        let path = dir.path().join("a.rdck");
        save_checkpoint(&path, &model, Some(&opt), 42).unwrap();
        let ck = load_checkpoint(&path, Some(&model.arch)).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        assert_eq!(ck.step, 42);
        for (a, b) in ck.model.params.iter().zip(model.params.iter()) {
            let bits = |t: &crate::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn mismatched_architecture_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelParams::init(small_arch(), 5).unwrap();
        let path = dir.path().join("a.rdck");
        save_checkpoint(&path, &model, None, 0).unwrap();
        let mut other = small_arch();
        other.c_repr = 8;
        match load_checkpoint(&path, Some(&other)) {
            Err(Error::Format(msg)) => assert!(msg.contains("\"c_repr\":4") && msg.contains("\"c_repr\":8")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn version_and_corruption_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelParams::init(small_arch(), 1).unwrap();
        let path = dir.path().join("a.rdck");
        save_checkpoint(&path, &model, None, 0).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        let err = decode(&mut bytes.as_slice(), None).unwrap_err();
        assert!(err.to_string().contains("version 9") && err.to_string().contains("version 1"));

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(matches!(decode(&mut bytes.as_slice(), None), Err(Error::Format(_))));
    }
}
