//! Annotated documents: data model, DocRED-format I/O, marker tokenization
//! and a synthetic corpus generator.

mod docred;
mod schema;
mod synth;
mod tokenize;

use std::collections::BTreeSet;

use thiserror::Error;

pub use docred::{parse_docred, serialize_docred};
pub use schema::{RelationId, RelationSchema};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpora};
pub use tokenize::{tokenize_with_markers, TokenKind, TokenizeOptions, TokenizedDocument, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed JSON{}: {source}", .doc_index.map(|i| format!(" in document {i}")).unwrap_or_default())]
    Json {
        doc_index: Option<usize>,
        #[source]
        source: serde_json::Error,
    },
    #[error("document `{doc_id}`: {msg}")]
    Validation { doc_id: String, msg: String },
    #[error("document `{doc_id}`: unknown relation `{name}`")]
    UnknownRelation { doc_id: String, name: String },
    #[error("relation schema: {0}")]
    Schema(String),
    #[error("synthetic corpus configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub sent_id: usize,
    /// Token offset within the sentence.
    pub start: usize,
    /// Exclusive end offset.
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub mentions: Vec<Mention>,
    pub type_tag: String,
}

impl Entity {
    /// Distinct surface names of the entity's mentions.
    pub fn names(&self) -> BTreeSet<&str> {
        self.mentions.iter().map(|m| m.surface.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInstance {
    pub head: usize,
    pub tail: usize,
    pub relation: RelationId,
    /// Supporting sentence indices; may be empty.
    pub evidence: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub labels: Vec<RelationInstance>,
}

impl Document {
    fn invalid(&self, msg: impl Into<String>) -> CorpusError {
        CorpusError::Validation {
            doc_id: self.doc_id.clone(),
            msg: msg.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if let Some(i) = self.sentences.iter().position(Vec::is_empty) {
            return Err(self.invalid(format!("sentence {i} is empty")));
        }
        for (ei, e) in self.entities.iter().enumerate() {
            if e.mentions.is_empty() {
                return Err(self.invalid(format!("entity {ei} has no mentions")));
            }
            for m in &e.mentions {
                let Some(sent) = self.sentences.get(m.sent_id) else {
                    return Err(self.invalid(format!(
                        "entity {ei}: mention sentence {} out of range ({} sentences)",
                        m.sent_id,
                        self.sentences.len()
                    )));
                };
                if m.start >= m.end {
                    return Err(self.invalid(format!(
                        "entity {ei}: empty mention span [{}, {})",
                        m.start, m.end
                    )));
                }
                if m.end > sent.len() {
                    return Err(self.invalid(format!(
                        "entity {ei}: mention span [{}, {}) crosses the end of sentence {} ({} tokens)",
                        m.start,
                        m.end,
                        m.sent_id,
                        sent.len()
                    )));
                }
            }
        }
        for (li, l) in self.labels.iter().enumerate() {
            if l.head >= self.entities.len() || l.tail >= self.entities.len() {
                return Err(self.invalid(format!("label {li}: entity index out of range")));
            }
            if l.head == l.tail {
                return Err(self.invalid(format!("label {li}: head equals tail")));
            }
            if l.relation == RelationId::NONE {
                return Err(self.invalid(format!("label {li}: no-relation used as a label")));
            }
            if let Some(&s) = l.evidence.iter().next_back() {
                if s >= self.sentences.len() {
                    return Err(self.invalid(format!("label {li}: evidence sentence {s} out of range")));
                }
            }
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn num_mentions(&self) -> usize {
        self.entities.iter().map(|e| e.mentions.len()).sum()
    }

    /// Labels for the ordered pair `(head, tail)`.
    pub fn labels_for(&self, head: usize, tail: usize) -> impl Iterator<Item = &RelationInstance> {
        self.labels
            .iter()
            .filter(move |l| l.head == head && l.tail == tail)
    }

    /// All ordered entity pairs `(s, o)` with `s != o`, in lexicographic order.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.entities.len();
        (0..n)
            .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Self { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        self.documents.iter().try_for_each(Document::validate)
    }

    pub fn num_labels(&self) -> usize {
        self.documents.iter().map(|d| d.labels.len()).sum()
    }
}
