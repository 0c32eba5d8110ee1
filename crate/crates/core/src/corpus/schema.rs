use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};

use super::CorpusError;

/// Relation identifier. Id 0 is reserved for no-relation; real relations
/// are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub usize);

impl RelationId {
    pub const NONE: RelationId = RelationId(0);
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Relation names. Line 0 of the text form names the no-relation class.
///
/// The classifier adds a threshold class at score column 0, which shares the
/// reserved id with no-relation and never appears in data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

pub const DEFAULT_NONE_NAME: &str = "Na";

impl RelationSchema {
    pub fn new<S: Into<String>>(relations: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let mut names = vec![DEFAULT_NONE_NAME.to_string()];
        names.extend(relations.into_iter().map(Into::into));
        Self::from_names(names)
    }

    fn from_names(names: Vec<String>) -> Result<Self, CorpusError> {
        if names.len() < 2 {
            return Err(CorpusError::Schema("at least one real relation required".into()));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(CorpusError::Schema(format!("invalid relation name {n:?}")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(CorpusError::Schema(format!("duplicate relation name {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// Parses the one-name-per-line text form; blank lines are ignored.
    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let names = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::from_names(names)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Number of real relations (excluding no-relation).
    pub fn num_relations(&self) -> usize {
        self.names.len() - 1
    }

    /// Classifier width: the real relations plus the threshold class.
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn id_of(&self, name: &str) -> Option<RelationId> {
        self.index.get(name).map(|&i| RelationId(i))
    }

    pub fn name(&self, id: RelationId) -> &str {
        &self.names[id.0]
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (1..self.names.len()).map(RelationId)
    }
}
