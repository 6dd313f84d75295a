//! BiLSTM encoders and the structured self-attention pooling unit, used at
//! word level (sentence vectors) and at sentence level (document vector).

use rand::Rng;

use crate::corpus::PAD;
use crate::embeddings::{uniform, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

pub const FORGET_BIAS: f64 = 1.0;

/// One LSTM direction. The four gates are stacked row-wise in the order
/// input, forget, output, candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_input = store.add(format!("{prefix}.w_input"), uniform(rng, &[4 * hidden, input_dim]));
        let w_hidden = store.add(format!("{prefix}.w_hidden"), uniform(rng, &[4 * hidden, hidden]));
        let mut b = uniform(rng, &[4 * hidden]);
        b.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|x| *x = FORGET_BIAS);
        let bias = store.add(format!("{prefix}.bias"), b);
        LstmParams {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        }
    }

    /// One recurrence step; returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let u = self.hidden;
        let wi = tape.param(self.w_input);
        let wh = tape.param(self.w_hidden);
        let b = tape.param(self.bias);
        let zx = tape.matvec(wi, x)?;
        let zh = tape.matvec(wh, h_prev)?;
        let z = tape.add_n(&[zx, zh, b])?;
        let gi = tape.slice(z, 0, u)?;
        let gf = tape.slice(z, u, u)?;
        let go = tape.slice(z, 2 * u, u)?;
        let gg = tape.slice(z, 3 * u, u)?;
        let i = tape.sigmoid(gi)?;
        let f = tape.sigmoid(gf)?;
        let o = tape.sigmoid(go)?;
        let g = tape.tanh(gg)?;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstm {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        BiLstm {
            forward: LstmParams::register(store, &format!("{prefix}.forward"), input_dim, hidden, rng),
            backward: LstmParams::register(store, &format!("{prefix}.backward"), input_dim, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }
}

/// `H`: `[T × 2u]` hidden states; masked rows are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub states: Var,
    pub mask: Vec<bool>,
}

/// Runs both directions over the unmasked rows of `inputs` (`[T × in]`),
/// from zero initial states, and concatenates `[→h_t; ←h_t]` per row.
pub fn bilstm_encode(tape: &mut Tape, inputs: Var, mask: &[bool], params: &BiLstm) -> Result<EncodedSequence> {
    let shape = tape.value(inputs).shape().to_vec();
    if shape.len() != 2 || shape[0] != mask.len() || shape[1] != params.forward.input_dim {
        return Err(Error::shape("bilstm_encode", &shape, &[mask.len(), params.forward.input_dim]));
    }
    let live: Vec<usize> = (0..mask.len()).filter(|&t| mask[t]).collect();
    if live.is_empty() {
        return Err(Error::EmptyAttention);
    }
    let u = params.forward.hidden;
    let rows: Vec<Var> = live
        .iter()
        .map(|&t| tape.row(inputs, t))
        .collect::<Result<_>>()?;

    let run = |tape: &mut Tape, p: &LstmParams, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Var)>> {
        let mut h = tape.constant(Tensor::zeros(&[u]));
        let mut c = tape.constant(Tensor::zeros(&[u]));
        let mut out = Vec::with_capacity(rows.len());
        for k in order {
            (h, c) = p.step(tape, rows[k], h, c)?;
            out.push((k, h));
        }
        Ok(out)
    };
    let fwd = run(tape, &params.forward, &mut (0..live.len()))?;
    let mut bwd = run(tape, &params.backward, &mut (0..live.len()).rev())?;
    bwd.reverse();

    let zero = tape.constant(Tensor::zeros(&[2 * u]));
    let mut states = vec![zero; mask.len()];
    for ((k, hf), (_, hb)) in fwd.into_iter().zip(bwd) {
        states[live[k]] = tape.concat(&[hf, hb])?;
    }
    Ok(EncodedSequence {
        states: tape.stack(&states)?,
        mask: mask.to_vec(),
    })
}

/// `W_s1`: `k × 2u`, `w_s2`: `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionUnit {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl AttentionUnit {
    pub fn register(store: &mut ParamStore, prefix: &str, input_dim: usize, context: usize, rng: &mut impl Rng) -> Self {
        AttentionUnit {
            w1: store.add(format!("{prefix}.w1"), uniform(rng, &[context, input_dim])),
            w2: store.add(format!("{prefix}.w2"), uniform(rng, &[context])),
        }
    }
}

/// `a = softmax(w_s2 · tanh(W_s1 · Hᵀ))` over unmasked rows, `pooled = a·H`.
/// Returns `(a, pooled)`.
pub fn self_attend(tape: &mut Tape, seq: &EncodedSequence, unit: &AttentionUnit) -> Result<(Var, Var)> {
    let w1 = tape.param(unit.w1);
    let w2 = tape.param(unit.w2);
    let ht = tape.transpose(seq.states)?;
    let proj = tape.matmul(w1, ht)?;
    let proj = tape.tanh(proj)?;
    let proj_t = tape.transpose(proj)?;
    let scores = tape.matvec(proj_t, w2)?;
    let weights = tape.softmax(scores, Some(&seq.mask))?;
    let pooled = tape.matvec(ht, weights)?;
    Ok((weights, pooled))
}

/// Output of the word-level encoder for one sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentenceEncoding {
    /// `s_i`, length `2u`.
    pub vector: Var,
    /// Word attention weights, one per token.
    pub attention: Var,
}

/// Embeds a sentence, runs the word BiLSTM (fresh state per sentence) and
/// pools with word attention. `PAD` ids are masked out.
pub fn encode_words(
    tape: &mut Tape,
    ids: &[usize],
    table: &EmbeddingTable,
    bilstm: &BiLstm,
    attention: &AttentionUnit,
) -> Result<SentenceEncoding> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty sentence".into()));
    }
    let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let x = table.embed_sentence(tape, ids)?;
    let seq = bilstm_encode(tape, x, &mask, bilstm)?;
    let (attention, vector) = self_attend(tape, &seq, attention)?;
    Ok(SentenceEncoding { vector, attention })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentEncoding {
    /// `H_d`: `[n × 2u]`.
    pub states: Var,
    /// `d`, length `2u`.
    pub vector: Var,
    /// Sentence attention weights.
    pub attention: Var,
}

/// Sentence-level BiLSTM over `[s_1 … s_n]` followed by sentence attention.
/// `mask` marks padding sentence slots (all live when `None`).
pub fn encode_sentences(
    tape: &mut Tape,
    sentences: &[Var],
    mask: Option<&[bool]>,
    bilstm: &BiLstm,
    attention: &AttentionUnit,
) -> Result<DocumentEncoding> {
    if sentences.is_empty() {
        return Err(Error::InvalidArgument("document has no sentences".into()));
    }
    let all = vec![true; sentences.len()];
    let mask = mask.unwrap_or(&all);
    let width = tape.value(sentences[0]).len();
    let zero = tape.constant(Tensor::zeros(&[width]));
    let rows: Vec<Var> = sentences
        .iter()
        .zip(mask)
        .map(|(&s, &live)| if live { s } else { zero })
        .collect();
    let inputs = tape.stack(&rows)?;
    let seq = bilstm_encode(tape, inputs, mask, bilstm)?;
    let (weights, vector) = self_attend(tape, &seq, attention)?;
    Ok(DocumentEncoding {
        states: seq.states,
        vector,
        attention: weights,
    })
}
