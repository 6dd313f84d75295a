//! Sentence selection from membership probabilities, and the LEAD-3 baseline.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::HssasModel;

/// Output-size limit for a summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "limit", rename_all = "snake_case")]
pub enum Budget {
    SentenceCount(usize),
    WordCount(usize),
}

impl Default for Budget {
    fn default() -> Self {
        Budget::SentenceCount(3)
    }
}

impl Budget {
    pub fn limit(self) -> usize {
        match self {
            Budget::SentenceCount(n) | Budget::WordCount(n) => n,
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.limit() == 0 {
            return Err(Error::InvalidArgument("budget limit must be at least 1".into()));
        }
        Ok(self)
    }
}

/// Ranks sentences by probability (ties → earlier index) and takes them
/// greedily while the budget allows; the first pick is always taken. The
/// result is in document order.
pub fn select_sentences(probs: &[f64], lengths: &[usize], budget: Budget) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("cannot select from an empty document".into()));
    }
    if lengths.len() != probs.len() {
        return Err(Error::shape("select_sentences", &[probs.len()], &[lengths.len()]));
    }
    budget.validate()?;
    let mut ranked: Vec<usize> = (0..probs.len()).collect();
    ranked.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let mut chosen = Vec::new();
    match budget {
        Budget::SentenceCount(n) => chosen.extend(ranked.into_iter().take(n)),
        Budget::WordCount(limit) => {
            let mut words = 0;
            for idx in ranked {
                if !chosen.is_empty() && words + lengths[idx] > limit {
                    break;
                }
                words += lengths[idx];
                chosen.push(idx);
            }
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// First three sentence indices that exist.
pub fn lead3(sentence_count: usize) -> Vec<usize> {
    (0..sentence_count.min(3)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    /// One weight vector per sentence, aligned with its tokens.
    pub words: Vec<Vec<f64>>,
    pub sentences: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub selected: Vec<usize>,
    pub text: String,
    pub probs: Vec<f64>,
    pub attention: Attention,
}

pub fn join_sentences(doc: &Document, selected: &[usize]) -> String {
    selected
        .iter()
        .map(|&i| doc.text[i].trim())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scores the document and extracts the summary.
pub fn summarize(doc: &Document, model: &HssasModel, budget: Budget) -> Result<Summary> {
    if doc.is_empty() {
        return Err(Error::Document {
            id: doc.id.clone(),
            message: "document has no sentences".into(),
        });
    }
    let pred = model.predict(&doc.sentences)?;
    let lengths: Vec<usize> = doc
        .text
        .iter()
        .map(|t| t.split_whitespace().count())
        .collect();
    let selected = select_sentences(&pred.probs, &lengths, budget)?;
    Ok(Summary {
        text: join_sentences(doc, &selected),
        selected,
        probs: pred.probs,
        attention: Attention {
            words: pred.word_attention,
            sentences: pred.sentence_attention,
        },
    })
}
