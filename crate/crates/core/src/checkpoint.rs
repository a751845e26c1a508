//! Binary training checkpoints.
//!
//! All integers are little-endian `u64` unless noted, floats are
//! little-endian IEEE-754 of the width given in the header.
//!
//! ```text
//! magic            8 bytes   "EDGLBCKP"
//! version          u32       1
//! float_bytes      u32       8 (f64) or 4 (f32)
//! config_sha256    32 bytes  SHA-256 of config_json
//! config_json      u64 length + UTF-8 bytes
//! node ids         u64 count, then per id: u64 length + UTF-8 bytes
//! dim              u64
//! center           count * dim floats, row-major
//! context          count * dim floats, row-major
//! layers           u64 count, then per layer:
//!                    rows, cols, rows*cols weight floats, rows bias floats
//! adam_t           u64
//! adam constants   4 x f64: learning_rate, beta1, beta2, epsilon
//! moments          center m, center v, context m, context v (floats),
//!                  then u64 tensor count and per tensor:
//!                    u64 length, m floats, v floats
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{AdamConfig, AdamState, EmbeddingTables, Moments};
use crate::relational::{DenseLayer, MlpParams};
use crate::trainer::{TrainConfig, TrainState};
use crate::Real;

pub const MAGIC: &[u8; 8] = b"EDGLBCKP";
pub const VERSION: u32 = 1;
const FLOAT_BYTES: u32 = std::mem::size_of::<Real>() as u32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub node_ids: Vec<String>,
    pub state: TrainState,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b)?;
        Ok(())
    }
    fn u32(&mut self, x: u32) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn u64(&mut self, x: u64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn len(&mut self, x: usize) -> Result<()> {
        self.u64(x as u64)
    }
    fn f64(&mut self, x: f64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn floats(&mut self, xs: &[Real]) -> Result<()> {
        let mut buf = Vec::with_capacity(xs.len() * FLOAT_BYTES as usize);
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.bytes(&buf)
    }
    fn string(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.bytes(s.as_bytes())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n < (1 << 40))
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<Real>> {
        let mut raw = vec![0u8; n * FLOAT_BYTES as usize];
        self.0
            .read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(raw
            .chunks_exact(FLOAT_BYTES as usize)
            .map(|c| Real::from_le_bytes(c.try_into().expect("chunk width")))
            .collect())
    }
    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut raw = vec![0u8; n];
        self.0
            .read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        String::from_utf8(raw).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

impl Checkpoint {
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer(out);
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(FLOAT_BYTES)?;
        w.bytes(&Sha256::digest(&json))?;
        w.len(json.len())?;
        w.bytes(&json)?;
        w.len(self.node_ids.len())?;
        for id in &self.node_ids {
            w.string(id)?;
        }
        let tables = &self.state.tables;
        w.len(tables.dim())?;
        w.floats(tables.center.as_slice())?;
        w.floats(tables.context.as_slice())?;
        w.len(self.state.classifier.layers.len())?;
        for layer in &self.state.classifier.layers {
            w.len(layer.weights.rows())?;
            w.len(layer.weights.cols())?;
            w.floats(layer.weights.as_slice())?;
            w.floats(&layer.bias)?;
        }
        let adam = &self.state.adam;
        w.u64(adam.t)?;
        for c in [
            adam.config.learning_rate,
            adam.config.beta1,
            adam.config.beta2,
            adam.config.epsilon,
        ] {
            w.f64(c)?;
        }
        for m in [&adam.center, &adam.context] {
            w.floats(&m.m)?;
            w.floats(&m.v)?;
        }
        w.len(adam.classifier.len())?;
        for m in &adam.classifier {
            w.len(m.m.len())?;
            w.floats(&m.m)?;
            w.floats(&m.v)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader(input);
        if &r.array::<8>()? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let float_bytes = r.u32()?;
        if float_bytes != FLOAT_BYTES {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {float_bytes}-byte floats, this build uses {FLOAT_BYTES}"
            )));
        }
        let digest = r.array::<32>()?;
        let json_len = r.len()?;
        let mut json = vec![0u8; json_len];
        r.0.read_exact(&mut json)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        if Sha256::digest(&json).as_slice() != digest {
            return Err(Error::Checkpoint("configuration digest mismatch".into()));
        }
        let config: TrainConfig = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("configuration: {e}")))?;
        let count = r.len()?;
        let node_ids = (0..count).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let dim = r.len()?;
        let center = Matrix::from_vec(count, dim, r.floats(count * dim)?);
        let context = Matrix::from_vec(count, dim, r.floats(count * dim)?);
        let layer_count = r.len()?;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let rows = r.len()?;
            let cols = r.len()?;
            let weights = Matrix::from_vec(rows, cols, r.floats(rows * cols)?);
            let bias = r.floats(rows)?;
            layers.push(DenseLayer { weights, bias });
        }
        let t = r.u64()?;
        let adam_config = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let mut moments = || -> Result<Moments> {
            Ok(Moments {
                m: r.floats(count * dim)?,
                v: r.floats(count * dim)?,
            })
        };
        let center_m = moments()?;
        let context_m = moments()?;
        let tensors = r.len()?;
        let mut classifier_m = Vec::with_capacity(tensors);
        for _ in 0..tensors {
            let n = r.len()?;
            classifier_m.push(Moments {
                m: r.floats(n)?,
                v: r.floats(n)?,
            });
        }
        let classifier = MlpParams { layers };
        if classifier.tensors().len() != classifier_m.len() {
            return Err(Error::Checkpoint("optimizer moments do not match the classifier".into()));
        }
        Ok(Checkpoint {
            config,
            node_ids,
            state: TrainState {
                tables: EmbeddingTables { center, context },
                classifier,
                adam: AdamState {
                    config: adam_config,
                    t,
                    center: center_m,
                    context: context_m,
                    classifier: classifier_m,
                },
            },
        })
    }
}
