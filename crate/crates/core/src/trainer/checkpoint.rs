//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, a JSON header,
//! then little-endian element blobs in parameter declaration order: all
//! parameters, then all first moments, then all second moments. Blobs use the
//! element width named by the header's precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainState};
use crate::encoder::{Encoder, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMBRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    precision: Precision,
    step: u64,
    seed: u64,
    adam_t: u64,
    model: ModelConfig,
    train: TrainConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<T: Scalar>(state: &TrainState<T>) -> Vec<u8> {
    let params = state.encoder.params();
    let header = Header {
        precision: T::PRECISION,
        step: state.step,
        seed: state.seed,
        adam_t: state.adam.t,
        model: state.encoder.config().clone(),
        train: state.config.clone(),
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + 3 * params.numel() * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for group in [params.tensors(), &state.adam.m, &state.adam.v] {
        for t in group {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<TrainState<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.pos -= 4;
        return Err(r.fail(format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = r.u32("header length")? as usize;
    let header_at = r.pos;
    let header: Header = serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::Format {
        offset: header_at as u64,
        message: format!("header: {e}"),
    })?;
    if header.precision != T::PRECISION {
        return Err(Error::Format {
            offset: header_at as u64,
            message: format!("checkpoint holds {:?} values, reader expects {:?}", header.precision, T::PRECISION),
        });
    }
    let read_group = |r: &mut Reader| -> Result<Vec<Tensor<T>>> {
        header
            .tensors
            .iter()
            .map(|e| {
                let n: usize = e.shape.iter().product();
                let at = r.pos;
                let raw = r.take(n * T::BYTES, &format!("tensor {}", e.name))?;
                let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
                Tensor::new(e.shape.clone(), data).map_err(|err| Error::Format {
                    offset: at as u64,
                    message: format!("tensor {}: {err}", e.name),
                })
            })
            .collect()
    };
    let params = read_group(&mut r)?;
    let m = read_group(&mut r)?;
    let v = read_group(&mut r)?;
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let encoder = Encoder::from_tensors(header.model, params).map_err(|e| Error::Format {
        offset: header_at as u64,
        message: e.to_string(),
    })?;
    if encoder.params().names().iter().ne(header.tensors.iter().map(|e| &e.name)) {
        return Err(Error::Format {
            offset: header_at as u64,
            message: "parameter names do not match the model layout".into(),
        });
    }
    Ok(TrainState {
        encoder,
        adam: AdamState { m, v, t: header.adam_t },
        config: header.train,
        seed: header.seed,
        step: header.step,
    })
}

/// Element precision recorded in a checkpoint file, read from the header only.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = read_file(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.pos -= 4;
        return Err(r.fail(format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = r.u32("header length")? as usize;
    let at = r.pos;
    #[derive(Deserialize)]
    struct Peek {
        precision: Precision,
    }
    let peek: Peek = serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::Format {
        offset: at as u64,
        message: format!("header: {e}"),
    })?;
    Ok(peek.precision)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!("missing checkpoint {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, write_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    read_checkpoint(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state() -> TrainState<f32> {
        let cfg = ModelConfig {
            vocab_size: 12,
            layers: 1,
            heads: 2,
            hidden: 8,
            ffn_dim: 16,
            max_positions: 10,
            ..Default::default()
        };
        let enc = Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut s = TrainState::new(enc, TrainConfig::default(), 9).unwrap();
        s.step = 17;
        s.adam.t = 17;
        s.adam.m[0].data_mut()[0] = 0.25;
        s
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = state();
        let back: TrainState<f32> = read_checkpoint(&write_checkpoint(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn corruption_names_offset() {
        let bytes = write_checkpoint(&state());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = read_checkpoint::<f32>(&bad).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

        let mut bad = bytes.clone();
        bad[8] = 99;
        assert!(matches!(read_checkpoint::<f32>(&bad), Err(Error::Format { offset: 8, .. })));

        let cut = bytes.len() - 3;
        match read_checkpoint::<f32>(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 16 && (offset as usize) < cut),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_checkpoint::<f64>(&bytes), Err(Error::Format { .. })));
    }
}
