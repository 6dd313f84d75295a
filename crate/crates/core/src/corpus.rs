//! Tokenization, vocabulary, JSONL ingestion and truncation.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_VOCAB_CAP: usize = 150_000;
pub const DEFAULT_MAX_SENT_LEN: usize = 50;
pub const DEFAULT_MAX_SENTS: usize = 100;
pub const DEFAULT_MAX_POSITION: usize = 100;

const PEEL: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')', '[', ']'];

/// Lowercases, splits on whitespace and peels leading/trailing punctuation
/// into single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        while start < chars.len() && PEEL.contains(&chars[start]) {
            out.push(chars[start].to_string());
            start += 1;
        }
        let mut end = chars.len();
        while end > start && PEEL.contains(&chars[end - 1]) {
            end -= 1;
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_words(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Vocabulary with PAD/UNK followed by `words` in the given order.
    /// Duplicates and reserved tokens are skipped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            index: HashMap::new(),
            words: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        };
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        for w in words {
            let w = w.into();
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    /// Total number of ids including the two reserved ones.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

/// One corpus record as it appears on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit {
    pub role: SplitRole,
    pub documents: Vec<RawDocument>,
}

impl CorpusSplit {
    pub fn new(role: SplitRole, documents: Vec<RawDocument>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Document {
                    id: d.id.clone(),
                    message: "duplicate id in split".into(),
                });
            }
            validate_labels(d)?;
        }
        Ok(CorpusSplit { role, documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

fn validate_labels(d: &RawDocument) -> Result<()> {
    if let Some(labels) = &d.labels {
        if labels.len() != d.sentences.len() {
            return Err(Error::Document {
                id: d.id.clone(),
                message: format!(
                    "{} labels for {} sentences",
                    labels.len(),
                    d.sentences.len()
                ),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Document {
                id: d.id.clone(),
                message: "labels must be 0 or 1".into(),
            });
        }
    }
    Ok(())
}

/// Reads a corpus file: one JSON object per line, blank lines skipped.
pub fn load_jsonl(path: impl AsRef<Path>, role: SplitRole) -> Result<CorpusSplit> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| Error::Format {
            path: display.clone(),
            line: i + 1,
            message,
        };
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
        validate_labels(&doc).map_err(|e| format_err(e.to_string()))?;
        if !seen.insert(doc.id.clone()) {
            return Err(format_err(format!("duplicate id {:?}", doc.id)));
        }
        documents.push(doc);
    }
    Ok(CorpusSplit { role, documents })
}

/// Keeps the `cap` most frequent words; equal counts are ordered
/// lexicographically.
pub fn build_vocab(split: &CorpusSplit, cap: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in &split.documents {
        for s in &doc.sentences {
            for tok in tokenize(s) {
                if tok != PAD_TOKEN && tok != UNK_TOKEN {
                    *counts.entry(tok).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(ranked.into_iter().take(cap).map(|(w, _)| w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_sent_len: usize,
    pub max_sents: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_sent_len: DEFAULT_MAX_SENT_LEN,
            max_sents: DEFAULT_MAX_SENTS,
        }
    }
}

/// An encoded document ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    /// Token ids per sentence; never empty.
    pub sentences: Vec<Vec<usize>>,
    /// Original sentence text aligned with `sentences`.
    pub text: Vec<String>,
    pub labels: Option<Vec<u8>>,
    pub references: Option<Vec<String>>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentences as space-joined vocabulary words (OOV tokens become `<unk>`).
    pub fn decode(&self, vocab: &Vocabulary) -> Vec<String> {
        self.sentences
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|&i| vocab.word(i).unwrap_or(UNK_TOKEN))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }
}

/// Maps tokens to ids, drops sentences with no tokens, then truncates
/// sentences and the document to `limits` (labels follow in lockstep).
pub fn encode_document(raw: &RawDocument, vocab: &Vocabulary, limits: Limits) -> Result<Document> {
    if limits.max_sent_len == 0 || limits.max_sents == 0 {
        return Err(Error::InvalidArgument("truncation limits must be at least 1".into()));
    }
    validate_labels(raw)?;
    let mut sentences = Vec::new();
    let mut text = Vec::new();
    let mut labels = raw.labels.as_ref().map(|_| Vec::new());
    for (j, s) in raw.sentences.iter().enumerate() {
        let tokens = tokenize(s);
        if tokens.is_empty() {
            continue;
        }
        if sentences.len() == limits.max_sents {
            break;
        }
        sentences.push(
            tokens
                .iter()
                .take(limits.max_sent_len)
                .map(|t| vocab.id(t))
                .collect(),
        );
        text.push(s.clone());
        if let (Some(out), Some(src)) = (labels.as_mut(), raw.labels.as_ref()) {
            out.push(src[j]);
        }
    }
    Ok(Document {
        id: raw.id.clone(),
        sentences,
        text,
        labels,
        references: raw.references.clone(),
    })
}

pub fn encode_split(split: &CorpusSplit, vocab: &Vocabulary, limits: Limits) -> Result<Vec<Document>> {
    split
        .documents
        .iter()
        .map(|d| encode_document(d, vocab, limits))
        .collect()
}

/// 1-based forward and backward position of sentence `j` among `n`, each
/// clamped to `capacity`.
pub fn position_indices(j: usize, n: usize, capacity: usize) -> Result<(usize, usize)> {
    if j == 0 || j > n {
        return Err(Error::InvalidArgument(format!(
            "sentence index {j} outside 1..={n}"
        )));
    }
    if capacity == 0 {
        return Err(Error::InvalidArgument("position capacity must be at least 1".into()));
    }
    Ok((j.min(capacity), (n - j + 1).min(capacity)))
}
