//! The assembled summarizer: word encoder → sentence encoder → classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierParams;
use crate::corpus::{Document, DEFAULT_MAX_POSITION};
use crate::embeddings::{EmbeddingTable, PositionTables};
use crate::encoder::{encode_sentences, encode_words, AttentionUnit, BiLstm};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Word embedding width `d_w`.
    pub word_dim: usize,
    /// Hidden units per LSTM direction `u`.
    pub hidden: usize,
    /// Attention context size `k`.
    pub attention_dim: usize,
    /// Positional embedding width per direction `d_p`.
    pub position_dim: usize,
    pub max_position: usize,
    pub fine_tune_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 100,
            hidden: 200,
            attention_dim: 400,
            position_dim: 50,
            max_position: DEFAULT_MAX_POSITION,
            fine_tune_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("position_dim", self.position_dim),
            ("max_position", self.max_position),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HssasModel {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub embedding: EmbeddingTable,
    pub word_encoder: BiLstm,
    pub word_attention: AttentionUnit,
    pub sentence_encoder: BiLstm,
    pub sentence_attention: AttentionUnit,
    pub positions: PositionTables,
    pub classifier: ClassifierParams,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub probs: Vec<Var>,
    pub word_attention: Vec<Var>,
    pub sentence_attention: Var,
}

/// Plain values for inference and inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub word_attention: Vec<Vec<f64>>,
    pub sentence_attention: Vec<f64>,
}

impl HssasModel {
    /// Fresh model with uniform [−0.1, 0.1] weights (forget biases 1, output
    /// bias 0). `embeddings` replaces the random word table when given.
    pub fn new(config: ModelConfig, vocab_size: usize, embeddings: Option<Tensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::InvalidArgument("vocabulary must hold PAD and UNK".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let table = match embeddings {
            Some(t) => {
                if t.shape() != [vocab_size, config.word_dim] {
                    return Err(Error::shape("embeddings", t.shape(), &[vocab_size, config.word_dim]));
                }
                t
            }
            None => EmbeddingTable::random(vocab_size, config.word_dim, &mut rng),
        };
        let embedding = EmbeddingTable::register(&mut store, table, config.fine_tune_embeddings);
        let state = 2 * config.hidden;
        let word_encoder = BiLstm::register(&mut store, "word_encoder", config.word_dim, config.hidden, &mut rng);
        let word_attention = AttentionUnit::register(&mut store, "word_attention", state, config.attention_dim, &mut rng);
        let sentence_encoder = BiLstm::register(&mut store, "sentence_encoder", state, config.hidden, &mut rng);
        let sentence_attention =
            AttentionUnit::register(&mut store, "sentence_attention", state, config.attention_dim, &mut rng);
        let positions = PositionTables::register(&mut store, config.max_position, config.position_dim, &mut rng);
        let classifier = ClassifierParams::register(&mut store, state, 2 * config.position_dim, &mut rng);
        Ok(HssasModel {
            config,
            vocab_size,
            store,
            embedding,
            word_encoder,
            word_attention,
            sentence_encoder,
            sentence_attention,
            positions,
            classifier,
        })
    }

    /// Runs the network over the sentences of one document on `tape`, which
    /// must have been created over `self.store` (or a copy of it).
    pub fn forward(&self, tape: &mut Tape, sentences: &[Vec<usize>], teacher: Option<&[u8]>) -> Result<ForwardPass> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("document has no sentences".into()));
        }
        let mut vectors = Vec::with_capacity(sentences.len());
        let mut word_attention = Vec::with_capacity(sentences.len());
        for ids in sentences {
            let enc = encode_words(tape, ids, &self.embedding, &self.word_encoder, &self.word_attention)?;
            vectors.push(enc.vector);
            word_attention.push(enc.attention);
        }
        let doc = encode_sentences(tape, &vectors, None, &self.sentence_encoder, &self.sentence_attention)?;
        let n = sentences.len();
        let positions = (1..=n)
            .map(|j| self.positions.position_embed(tape, j, n))
            .collect::<Result<Vec<_>>>()?;
        let scores = self
            .classifier
            .score_document(tape, &vectors, &positions, doc.vector, teacher)?;
        Ok(ForwardPass {
            probs: scores.probs,
            word_attention,
            sentence_attention: doc.attention,
        })
    }

    /// Summed negative log-likelihood of the document's labels.
    pub fn loss(&self, tape: &mut Tape, doc: &Document, teacher_forcing: bool) -> Result<Var> {
        let labels = doc.labels.as_deref().ok_or_else(|| Error::Document {
            id: doc.id.clone(),
            message: "document has no labels".into(),
        })?;
        let pass = self.forward(tape, &doc.sentences, teacher_forcing.then_some(labels))?;
        let terms = pass
            .probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| tape.bce(p, f64::from(y)))
            .collect::<Result<Vec<_>>>()?;
        tape.add_n(&terms)
    }

    pub fn predict(&self, sentences: &[Vec<usize>]) -> Result<Prediction> {
        let mut tape = Tape::new(&self.store);
        let pass = self.forward(&mut tape, sentences, None)?;
        let probs = pass
            .probs
            .iter()
            .map(|&p| tape.scalar(p))
            .collect::<Result<_>>()?;
        Ok(Prediction {
            probs,
            word_attention: pass
                .word_attention
                .iter()
                .map(|&a| tape.value(a).data().to_vec())
                .collect(),
            sentence_attention: tape.value(pass.sentence_attention).data().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            hidden: 3,
            attention_dim: 5,
            position_dim: 2,
            max_position: 10,
            fine_tune_embeddings: true,
        }
    }

    #[test]
    fn deterministic_construction_and_prediction() {
        let a = HssasModel::new(tiny(), 12, None, 5).unwrap();
        let b = HssasModel::new(tiny(), 12, None, 5).unwrap();
        assert_eq!(a.store, b.store);
        let sents = vec![vec![2, 3, 4], vec![5, 1], vec![7]];
        let pa = a.predict(&sents).unwrap();
        let pb = b.predict(&sents).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(pa.probs.len(), 3);
        assert_eq!(pa.word_attention[1].len(), 2);
        assert_eq!(pa.sentence_attention.len(), 3);
    }

    #[test]
    fn shapes_follow_config() {
        let m = HssasModel::new(tiny(), 12, None, 1).unwrap();
        assert_eq!(m.store.value(m.embedding.table).shape(), &[12, 4]);
        assert_eq!(m.store.value(m.word_encoder.forward.w_input).shape(), &[12, 4]);
        assert_eq!(m.store.value(m.sentence_encoder.forward.w_input).shape(), &[12, 6]);
        assert_eq!(m.store.value(m.word_attention.w1).shape(), &[5, 6]);
        assert_eq!(m.store.value(m.classifier.salience).shape(), &[6, 6]);
        assert_eq!(m.store.value(m.classifier.position).shape(), &[1, 4]);
        assert_eq!(m.store.value(m.positions.forward).shape(), &[10, 2]);
        assert!(m.store.value(m.embedding.table).row(0).iter().all(|&x| x == 0.0));
        let fb = &m.store.value(m.word_encoder.forward.bias).data()[3..6];
        assert_eq!(fb, &[1.0; 3]);
        assert_eq!(m.store.value(m.classifier.bias).data(), &[0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(HssasModel::new(ModelConfig { hidden: 0, ..tiny() }, 12, None, 1).is_err());
        assert!(HssasModel::new(tiny(), 12, Some(Tensor::zeros(&[12, 5])), 1).is_err());
        let m = HssasModel::new(tiny(), 12, None, 1).unwrap();
        assert!(m.predict(&[]).is_err());
        assert!(m.predict(&[vec![]]).is_err());
        assert!(m.predict(&[vec![12]]).is_err());
    }
}
