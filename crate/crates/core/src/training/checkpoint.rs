//! Versioned binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HSSAS"                      magic, 5 bytes
//! u32                          format version
//! u32 len, bytes               JSON header (model/train config, epoch, config echo)
//! u32 count, (u32 len, bytes)* vocabulary words in id order
//! u32 count, record*           tensors
//!
//! record := u32 name len, name bytes, u32 rank, u64 extent * rank, f64 * Π extents
//! ```
//!
//! Model parameters are stored under their own names, optimizer state under
//! `adadelta.sq_grad/<name>` and `adadelta.sq_update/<name>`. The file must
//! end exactly after the last record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{HssasModel, ModelConfig};
use crate::numerics::Tensor;

use super::{Adadelta, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"HSSAS";
pub const CHECKPOINT_VERSION: u32 = 1;

const SQ_GRAD: &str = "adadelta.sq_grad/";
const SQ_UPDATE: &str = "adadelta.sq_update/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: HssasModel,
    pub vocab: Vocabulary,
    pub optimizer: Option<Adadelta>,
    pub train: TrainConfig,
    pub epoch: usize,
    /// Verbatim run configuration the checkpoint was produced with.
    pub config_echo: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    vocab_size: usize,
    epoch: usize,
    config_echo: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = Header {
            model: self.model.config.clone(),
            train: self.train.clone(),
            vocab_size: self.vocab.len(),
            epoch: self.epoch,
            config_echo: self.config_echo.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        put_bytes(&mut out, &json)?;

        put_u32(&mut out, self.vocab.len())?;
        for w in self.vocab.words() {
            put_bytes(&mut out, w.as_bytes())?;
        }

        let store = &self.model.store;
        let mut records: Vec<(String, &Tensor)> = store.iter().map(|p| (p.name.clone(), &p.value)).collect();
        if let Some(opt) = &self.optimizer {
            for (p, (g, u)) in store.iter().zip(opt.sq_grad.iter().zip(&opt.sq_update)) {
                records.push((format!("{SQ_GRAD}{}", p.name), g));
                records.push((format!("{SQ_UPDATE}{}", p.name), u));
            }
        }
        put_u32(&mut out, records.len())?;
        for (name, t) in records {
            put_bytes(&mut out, name.as_bytes())?;
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, None)
    }

    /// Loads and checks every tensor against `expected` rather than the
    /// configuration stored in the file.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, Some(expected))
    }

    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let header: Header = serde_json::from_slice(r.bytes_field("header")?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

        let n_words = r.u32("vocabulary size")? as usize;
        let mut words = Vec::with_capacity(n_words.min(1 << 20));
        for _ in 0..n_words {
            let w = std::str::from_utf8(r.bytes_field("vocabulary word")?)
                .map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
            words.push(w.to_string());
        }
        if n_words != header.vocab_size || n_words < 2 {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {n_words} words, header says {}",
                header.vocab_size
            )));
        }
        let vocab = Vocabulary::from_words(words.into_iter().skip(2));
        if vocab.len() != n_words {
            return Err(Error::Checkpoint("vocabulary contains duplicates".into()));
        }

        let config = expected.cloned().unwrap_or(header.model);
        let mut model = HssasModel::new(config, vocab.len(), None, 0)?;
        let mut seen = vec![false; model.store.len()];
        let mut sq_grad: Vec<Option<Tensor>> = vec![None; model.store.len()];
        let mut sq_update: Vec<Option<Tensor>> = vec![None; model.store.len()];

        let n_records = r.u32("tensor count")? as usize;
        for _ in 0..n_records {
            let name = std::str::from_utf8(r.bytes_field("tensor name")?)
                .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u64("tensor extent").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;

            let (base, slot) = if let Some(b) = name.strip_prefix(SQ_GRAD) {
                (b, Some(&mut sq_grad))
            } else if let Some(b) = name.strip_prefix(SQ_UPDATE) {
                (b, Some(&mut sq_update))
            } else {
                (name.as_str(), None)
            };
            let id = model
                .store
                .find(base)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            let want = model.store.value(id).shape().to_vec();
            if tensor.shape() != want.as_slice() {
                return Err(Error::shape("checkpoint tensor", tensor.shape(), &want));
            }
            match slot {
                Some(s) => s[id.index()] = Some(tensor),
                None => {
                    model.store.get_mut(id).value = tensor;
                    seen[id.index()] = true;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected trailing bytes",
                bytes.len() - r.pos
            )));
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = &model.store.iter().nth(i).expect("index in range").name;
            return Err(Error::Checkpoint(format!("missing tensor {name}")));
        }

        let optimizer = if sq_grad.iter().all(Option::is_none) && sq_update.iter().all(Option::is_none) {
            None
        } else {
            let mut opt = Adadelta::new(&model.store, header.train.rho, header.train.epsilon)?;
            for (i, (g, u)) in sq_grad.into_iter().zip(sq_update).enumerate() {
                match (g, u) {
                    (Some(g), Some(u)) => {
                        opt.sq_grad[i] = g;
                        opt.sq_update[i] = u;
                    }
                    _ => return Err(Error::Checkpoint("incomplete optimizer state".into())),
                }
            }
            if !model.embedding.trainable {
                opt.freeze(model.embedding.table);
            }
            Some(opt)
        };
        Ok(Checkpoint {
            model,
            vocab,
            optimizer,
            train: header.train,
            epoch: header.epoch,
            config_echo: header.config_echo,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn bytes_field(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }
}
