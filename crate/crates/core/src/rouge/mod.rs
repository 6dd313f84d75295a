//! ROUGE-1/2/L scoring with optional truncation and stemming.

mod stem;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use stem::stem;

/// Word limit applied to candidates in recall mode.
pub const RECALL_WORD_LIMIT: usize = 75;

/// Lowercases, turns every non-alphanumeric character into a separator and
/// splits.
pub fn tokenize(text: &str, stemming: bool) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| if stemming { stem(t) } else { t.to_string() })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NGramMultiset {
    counts: HashMap<Vec<String>, usize>,
    total: usize,
}

impl NGramMultiset {
    pub fn count(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<String>, usize)> {
        self.counts.iter().map(|(g, &c)| (g, c))
    }

    /// `Σ_g min(self[g], other[g])`.
    pub fn clipped_overlap(&self, other: &NGramMultiset) -> usize {
        let (small, large) = if self.distinct() <= other.distinct() { (self, other) } else { (other, self) };
        small.iter().map(|(g, c)| c.min(large.count(g))).sum()
    }
}

pub fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Result<NGramMultiset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    let mut set = NGramMultiset::default();
    if tokens.len() < n {
        return Ok(set);
    }
    for w in tokens.windows(n) {
        let gram = w.iter().map(|t| t.as_ref().to_string()).collect();
        *set.counts.entry(gram).or_insert(0) += 1;
        set.total += 1;
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn new(recall: f64, precision: f64) -> Self {
        let f1 = if recall + precision > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { recall, precision, f1 }
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }
}

fn require_references<T>(refs: &[T]) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("at least one reference is required".into()));
    }
    Ok(())
}

/// Clipped n-gram overlap summed over references. Recall divides by all
/// reference n-grams, precision by candidate n-grams times the reference
/// count.
pub fn rouge_n<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R], n: usize) -> Result<RougeScore> {
    require_references(references)?;
    let cand = ngrams(candidate, n)?;
    let mut matched = 0;
    let mut ref_total = 0;
    for r in references {
        let grams = ngrams(r.as_ref(), n)?;
        matched += cand.clipped_overlap(&grams);
        ref_total += grams.total();
    }
    Ok(RougeScore::new(
        RougeScore::ratio(matched, ref_total),
        RougeScore::ratio(matched, cand.total() * references.len()),
    ))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Whole-sequence LCS score against each reference; the reference with the
/// highest F1 wins, ties to the earlier one.
pub fn rouge_l<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> Result<RougeScore> {
    require_references(references)?;
    if candidate.is_empty() {
        return Ok(RougeScore::default());
    }
    let mut best: Option<RougeScore> = None;
    for r in references {
        let r = r.as_ref();
        let l = lcs_len(candidate, r);
        let score = RougeScore::new(RougeScore::ratio(l, r.len()), RougeScore::ratio(l, candidate.len()));
        if best.is_none_or(|b| score.f1 > b.f1) {
            best = Some(score);
        }
    }
    Ok(best.unwrap_or_default())
}

pub fn truncate_candidate<S: Clone>(tokens: &[S], word_limit: usize) -> Vec<S> {
    tokens[..tokens.len().min(word_limit)].to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Candidates cut to 75 words, recall reported.
    RecallTruncated,
    /// Untruncated candidates, F1 reported.
    FulllengthF1,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "recall75" | "recall_truncated" => Ok(EvalMode::RecallTruncated),
            "f1" | "fulllength_f1" => Ok(EvalMode::FulllengthF1),
            other => Err(Error::InvalidArgument(format!(
                "unknown ROUGE mode {other:?}, expected recall75 or f1"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::RecallTruncated => "recall75",
            EvalMode::FulllengthF1 => "f1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub id: String,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub id: String,
    pub references: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub mode: EvalMode,
    pub documents: usize,
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

impl CorpusScores {
    /// The figure each mode reports for a metric.
    pub fn headline(&self, score: &RougeScore) -> f64 {
        match self.mode {
            EvalMode::RecallTruncated => score.recall,
            EvalMode::FulllengthF1 => score.f1,
        }
    }

    pub fn table(&self) -> String {
        let mut out = "metric\trecall\tprecision\tf1\n".to_string();
        for (name, s) in [("ROUGE-1", &self.rouge_1), ("ROUGE-2", &self.rouge_2), ("ROUGE-L", &self.rouge_l)] {
            let _ = writeln!(out, "{name}\t{:.4}\t{:.4}\t{:.4}", s.recall, s.precision, s.f1);
        }
        out
    }
}

pub fn score_document(summary: &str, references: &[String], mode: EvalMode, stemming: bool) -> Result<DocumentScores> {
    let mut cand = tokenize(summary, stemming);
    if mode == EvalMode::RecallTruncated {
        cand = truncate_candidate(&cand, RECALL_WORD_LIMIT);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r, stemming)).collect();
    Ok(DocumentScores {
        rouge_1: rouge_n(&cand, &refs, 1)?,
        rouge_2: rouge_n(&cand, &refs, 2)?,
        rouge_l: rouge_l(&cand, &refs)?,
    })
}

/// Per-document scores averaged over documents, sorted by id.
pub fn evaluate_corpus(
    system: &[SystemSummary],
    references: &[ReferenceSet],
    mode: EvalMode,
    stemming: bool,
) -> Result<CorpusScores> {
    let mut sys: BTreeMap<&str, &str> = BTreeMap::new();
    for s in system {
        if sys.insert(&s.id, &s.summary).is_some() {
            return Err(Error::IdMismatch(format!("duplicate system id {:?}", s.id)));
        }
    }
    let mut refs: BTreeMap<&str, &[String]> = BTreeMap::new();
    for r in references {
        if refs.insert(&r.id, &r.references).is_some() {
            return Err(Error::IdMismatch(format!("duplicate reference id {:?}", r.id)));
        }
    }
    if let Some(id) = sys.keys().find(|k| !refs.contains_key(*k)) {
        return Err(Error::IdMismatch(format!("system id {id:?} has no reference")));
    }
    if let Some(id) = refs.keys().find(|k| !sys.contains_key(*k)) {
        return Err(Error::IdMismatch(format!("reference id {id:?} has no system summary")));
    }
    if sys.is_empty() {
        return Err(Error::InvalidArgument("no documents to score".into()));
    }
    for (id, r) in &refs {
        if r.is_empty() {
            return Err(Error::Document {
                id: id.to_string(),
                message: "no reference summaries".into(),
            });
        }
    }

    let pairs: Vec<(&str, &[String])> = sys.iter().map(|(id, s)| (*s, refs[id])).collect();
    let per_doc: Vec<DocumentScores> = pairs
        .par_iter()
        .map(|(s, r)| score_document(s, r, mode, stemming))
        .collect::<Result<_>>()?;

    let n = per_doc.len() as f64;
    let mean = |pick: fn(&DocumentScores) -> RougeScore| {
        let (mut r, mut p, mut f) = (0.0, 0.0, 0.0);
        for d in &per_doc {
            let s = pick(d);
            r += s.recall;
            p += s.precision;
            f += s.f1;
        }
        RougeScore {
            recall: r / n,
            precision: p / n,
            f1: f / n,
        }
    };
    Ok(CorpusScores {
        mode,
        documents: per_doc.len(),
        rouge_1: mean(|d| d.rouge_1),
        rouge_2: mean(|d| d.rouge_2),
        rouge_l: mean(|d| d.rouge_l),
    })
}
