//! Word embedding table and learned positional tables.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::corpus::{position_indices, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

pub const INIT_RANGE: f64 = 0.1;

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// `|V| × d_w` word vectors. Row [`PAD`] is zero and never receives gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn register(store: &mut ParamStore, init: Tensor, trainable: bool) -> Self {
        let mut init = init;
        let cols = init.cols();
        init.data_mut()[..cols].iter_mut().for_each(|x| *x = 0.0);
        EmbeddingTable {
            table: store.add("embedding", init),
            trainable,
        }
    }

    pub fn random(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
        let mut t = uniform(rng, &[vocab_size, dim]);
        t.data_mut()[..dim].iter_mut().for_each(|x| *x = 0.0);
        t
    }

    /// `[len × d_w]` rows for `ids`.
    pub fn embed_sentence(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.gather(t, ids, Some(PAD))
    }
}

/// Reads word2vec text format (`count dim` header, then `word v1 … vdim`).
/// Vocabulary words found in the file take its vectors, the rest are drawn
/// uniformly from `[−0.1, 0.1]`. Returns the table and the number of matched
/// vocabulary words.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, usize)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let fmt = |line: usize, message: String| Error::Format {
        path: display.clone(),
        line,
        message,
    };

    let header = lines
        .next()
        .ok_or_else(|| fmt(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [_, file_dim] = fields[..] else {
        return Err(fmt(1, format!("expected `count dim`, got {header:?}")));
    };
    let file_dim: usize = file_dim
        .parse()
        .map_err(|_| fmt(1, format!("bad dimension {file_dim:?}")))?;
    if file_dim != dim {
        return Err(Error::InvalidArgument(format!(
            "embedding file has dimension {file_dim}, model expects {dim}"
        )));
    }

    let mut table = EmbeddingTable::random(vocab.len(), dim, rng);
    let mut seen = vec![false; vocab.len()];
    let mut matched = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-blank line");
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt(i + 2, e.to_string()))?;
        if values.len() != dim {
            return Err(fmt(i + 2, format!("expected {dim} values, got {}", values.len())));
        }
        if let Some(id) = vocab.get(word) {
            if id == PAD {
                continue;
            }
            table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            if !seen[id] {
                seen[id] = true;
                matched += 1;
            }
        }
    }
    Ok((table, matched))
}

/// Forward and backward `max_pos × d_p` tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionTables {
    pub forward: ParamId,
    pub backward: ParamId,
    pub max_pos: usize,
    pub dim: usize,
}

impl PositionTables {
    pub fn register(store: &mut ParamStore, max_pos: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let forward = store.add("position.forward", uniform(rng, &[max_pos, dim]));
        let backward = store.add("position.backward", uniform(rng, &[max_pos, dim]));
        PositionTables {
            forward,
            backward,
            max_pos,
            dim,
        }
    }

    /// `p_j = [P_f[fwd]; P_b[bwd]]`, length `2·d_p`.
    pub fn position_embed(&self, tape: &mut Tape, j: usize, n: usize) -> Result<Var> {
        let (fwd, bwd) = position_indices(j, n, self.max_pos)?;
        let f = tape.param(self.forward);
        let b = tape.param(self.backward);
        let fr = tape.row(f, fwd - 1)?;
        let br = tape.row(b, bwd - 1)?;
        tape.concat(&[fr, br])
    }
}
