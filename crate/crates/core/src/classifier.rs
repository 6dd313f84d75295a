//! Sequential logistic layer: content, salience, novelty and position scores
//! combined into a per-sentence membership probability, with a running
//! summary representation feeding the novelty term.

use rand::Rng;

use crate::embeddings::uniform;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    /// `1 × 2u`
    pub content: ParamId,
    /// `2u × 2u`
    pub salience: ParamId,
    /// `2u × 2u`
    pub novelty: ParamId,
    /// `1 × 2·d_p`
    pub position: ParamId,
    /// scalar, initialized to 0
    pub bias: ParamId,
}

impl ClassifierParams {
    pub fn register(store: &mut ParamStore, state_dim: usize, position_dim: usize, rng: &mut impl Rng) -> Self {
        ClassifierParams {
            content: store.add("classifier.content", uniform(rng, &[1, state_dim])),
            salience: store.add("classifier.salience", uniform(rng, &[state_dim, state_dim])),
            novelty: store.add("classifier.novelty", uniform(rng, &[state_dim, state_dim])),
            position: store.add("classifier.position", uniform(rng, &[1, position_dim])),
            bias: store.add("classifier.bias", Tensor::scalar(0.0)),
        }
    }

    /// `C_j = W_c s_j`
    pub fn content_score(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        let w = tape.param(self.content);
        tape.matvec(w, s)
    }

    /// `M_j = s_jᵀ W_s d`
    pub fn salience_score(&self, tape: &mut Tape, s: Var, d: Var) -> Result<Var> {
        let w = tape.param(self.salience);
        let wd = tape.matvec(w, d)?;
        tape.dot(s, wd)
    }

    /// `N_j = s_jᵀ W_r tanh(o_j)`
    pub fn novelty_score(&self, tape: &mut Tape, s: Var, o: Var) -> Result<Var> {
        let w = tape.param(self.novelty);
        let to = tape.tanh(o)?;
        let wo = tape.matvec(w, to)?;
        tape.dot(s, wo)
    }

    /// `P_j = W_p p_j`
    pub fn position_score(&self, tape: &mut Tape, p: Var) -> Result<Var> {
        let w = tape.param(self.position);
        tape.matvec(w, p)
    }

    /// `σ(C + M − N + P + b)`
    pub fn sentence_prob(&self, tape: &mut Tape, f: &Features) -> Result<Var> {
        let b = tape.param(self.bias);
        let pos = tape.add_n(&[f.content, f.salience, f.position, b])?;
        let logit = tape.sub(pos, f.novelty)?;
        tape.sigmoid(logit)
    }

    /// Scores sentences left to right. The summary state starts at zero and
    /// absorbs each sentence weighted by its predicted probability, or by its
    /// gold label when `teacher` is given.
    pub fn score_document(
        &self,
        tape: &mut Tape,
        sentences: &[Var],
        positions: &[Var],
        doc: Var,
        teacher: Option<&[u8]>,
    ) -> Result<DocumentScores> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("document has no sentences".into()));
        }
        if positions.len() != sentences.len() || teacher.is_some_and(|t| t.len() != sentences.len()) {
            return Err(Error::shape(
                "score_document",
                &[sentences.len()],
                &[positions.len(), teacher.map_or(0, <[u8]>::len)],
            ));
        }
        let width = tape.value(sentences[0]).len();
        let mut state = SummaryState::new(tape, width);
        let mut features = Vec::with_capacity(sentences.len());
        for (j, (&s, &p)) in sentences.iter().zip(positions).enumerate() {
            let f = Features {
                content: self.content_score(tape, s)?,
                salience: self.salience_score(tape, s, doc)?,
                novelty: self.novelty_score(tape, s, state.summary)?,
                position: self.position_score(tape, p)?,
            };
            let prob = self.sentence_prob(tape, &f)?;
            let weight = match teacher {
                Some(labels) => tape.constant(Tensor::scalar(f64::from(labels[j]))),
                None => prob,
            };
            state = state.update(tape, s, weight, prob)?;
            features.push(f);
        }
        Ok(DocumentScores {
            probs: state.probs,
            features,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Features {
    pub content: Var,
    pub salience: Var,
    pub novelty: Var,
    pub position: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentScores {
    pub probs: Vec<Var>,
    pub features: Vec<Features>,
}

/// Running summary representation `o` and the probabilities emitted so far.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryState {
    pub summary: Var,
    pub probs: Vec<Var>,
}

impl SummaryState {
    pub fn new(tape: &mut Tape, width: usize) -> Self {
        SummaryState {
            summary: tape.constant(Tensor::zeros(&[width])),
            probs: Vec::new(),
        }
    }

    /// `o ← o + weight · s`; records `prob`.
    pub fn update(mut self, tape: &mut Tape, s: Var, weight: Var, prob: Var) -> Result<Self> {
        let w = tape.value(weight).item()?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidArgument(format!("summary weight {w} outside [0, 1]")));
        }
        let scaled = tape.scale_by(s, weight)?;
        self.summary = tape.add(self.summary, scaled)?;
        self.probs.push(prob);
        Ok(self)
    }
}

/// Scalar form of the decision function.
pub fn sentence_prob(content: f64, salience: f64, novelty: f64, position: f64, bias: f64) -> f64 {
    sigmoid(content + salience - novelty + position + bias)
}
