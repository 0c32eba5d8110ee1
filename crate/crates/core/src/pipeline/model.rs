use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_with_markers, Document, RelationSchema, TokenizeOptions, TokenizedDocument, Vocabulary};
use crate::encoder::{self, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::evidence::sentence_importance;
use crate::numerics::{seeded_rng, Graph, ParamSet, Tensor};
use crate::rexmodel::{self, ClassifierConfig, RelationScores};

/// Architecture hyperparameters that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub average_last_k: usize,
    pub groups: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            heads: 4,
            ff_dim: 64,
            max_len: 192,
            average_last_k: 3,
            groups: 4,
        }
    }
}

impl ModelSpec {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_len: self.max_len,
            average_last_k: self.average_last_k,
        }
    }

    pub fn classifier_config(&self, schema: &RelationSchema) -> ClassifierConfig {
        ClassifierConfig {
            dim: self.dim,
            num_classes: schema.num_classes(),
            groups: self.groups,
        }
    }

    /// Trainable scalars of a model over this vocabulary size and schema.
    pub fn parameter_count(&self, vocab_size: usize, schema: &RelationSchema) -> usize {
        encoder::parameter_count(&self.encoder_config(vocab_size))
            + rexmodel::parameter_count(&self.classifier_config(schema))
    }
}

/// Encoder and classifier weights together with the vocabulary and relation
/// schema they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub vocab: Vocabulary,
    pub schema: RelationSchema,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: ModelSpec,
    vocabulary: Vec<String>,
    schema: String,
    schema_hash: String,
}

/// Scores and pooling weights for every ordered entity pair of a document.
#[derive(Debug, Clone)]
pub struct DocScores {
    pub tok: TokenizedDocument,
    pub pairs: Vec<(usize, usize)>,
    /// `pairs x |T|`
    pub q: Tensor,
    /// `pairs x classes`
    pub logits: Tensor,
}

impl DocScores {
    pub fn scores(&self, pair: usize) -> RelationScores {
        RelationScores { y: self.logits.row(pair).to_vec() }
    }

    pub fn sentence_importance(&self, pair: usize) -> Vec<f64> {
        sentence_importance(self.q.row(pair), &self.tok).expect("q matches its tokenization")
    }

    pub fn pair_row(&self, s: usize, o: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (s, o))
    }
}

impl Model {
    /// Fresh weights drawn from `seed`.
    pub fn init(spec: ModelSpec, vocab: Vocabulary, schema: RelationSchema, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        encoder::init_params(&spec.encoder_config(vocab.len()), &mut rng, &mut params)?;
        rexmodel::init_params(&spec.classifier_config(&schema), &mut rng, &mut params)?;
        Ok(Self { spec, vocab, schema, params })
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.spec.encoder_config(self.vocab.len())
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        self.spec.classifier_config(&self.schema)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    pub fn tokenize(&self, doc: &Document) -> TokenizedDocument {
        tokenize_with_markers(doc, &self.vocab, TokenizeOptions::default())
    }

    pub fn fits(&self, tok: &TokenizedDocument) -> bool {
        tok.len() <= self.spec.max_len
    }

    pub fn encode(&self, tok: &TokenizedDocument) -> Result<EncoderOutput> {
        encoder::encode(tok, &self.params, &self.encoder_config())
    }

    /// Inference over all ordered pairs. `None` for documents with fewer than
    /// two entities.
    pub fn score_document(&self, doc: &Document) -> Result<Option<DocScores>> {
        let pairs = doc.ordered_pairs();
        if pairs.is_empty() {
            return Ok(None);
        }
        let tok = self.tokenize(doc);
        let mut g = Graph::new();
        let enc = encoder::encode_on(&mut g, &tok, &self.params, &self.encoder_config())?;
        let vars = rexmodel::forward_pairs(&mut g, enc, &tok, &pairs, &self.params, &self.classifier_config())?;
        Ok(Some(DocScores {
            q: g.value(vars.q).clone(),
            logits: g.value(vars.logits).clone(),
            tok,
            pairs,
        }))
    }

    pub fn to_json(&self) -> String {
        let meta = CheckpointMeta {
            spec: self.spec.clone(),
            vocabulary: self.vocab.words().to_vec(),
            schema: self.schema.to_text(),
            schema_hash: self.schema.hash(),
        };
        let file = self.params.to_checkpoint(serde_json::to_value(meta).expect("meta serializes"));
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: crate::numerics::CheckpointFile = serde_json::from_str(text)?;
        let meta: CheckpointMeta = serde_json::from_value(file.meta.clone())?;
        let schema = RelationSchema::from_text(&meta.schema)?;
        if schema.hash() != meta.schema_hash {
            return Err(Error::Consistency("checkpoint schema hash does not match its schema".into()));
        }
        let model = Self {
            spec: meta.spec,
            vocab: Vocabulary::from_words(meta.vocabulary),
            schema,
            params: ParamSet::from_checkpoint(&file)?,
        };
        let mut expected = ParamSet::new();
        let mut rng = seeded_rng(0);
        encoder::init_params(&model.encoder_config(), &mut rng, &mut expected)?;
        rexmodel::init_params(&model.classifier_config(), &mut rng, &mut expected)?;
        if expected.layout() != model.params.layout() {
            return Err(Error::Consistency("checkpoint tensors do not match its architecture".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
