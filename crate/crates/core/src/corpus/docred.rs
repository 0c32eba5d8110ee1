//! DocRED-layout JSON: an array of `{title, sents, vertexSet, labels}`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, Entity, Mention, RelationInstance, RelationSchema};

#[derive(Debug, Serialize, Deserialize)]
struct RawDoc {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<RawLabel>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    name: String,
    pos: [usize; 2],
    sent_id: usize,
    #[serde(rename = "type", default)]
    type_tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

pub fn parse_docred(json_text: &str, schema: &RelationSchema) -> Result<Corpus, CorpusError> {
    let values: Vec<serde_json::Value> =
        serde_json::from_str(json_text).map_err(|source| CorpusError::Json {
            doc_index: None,
            source,
        })?;
    let mut documents = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let raw: RawDoc = serde_json::from_value(v).map_err(|source| CorpusError::Json {
            doc_index: Some(i),
            source,
        })?;
        let doc = from_raw(raw, schema)?;
        doc.validate()?;
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

fn from_raw(raw: RawDoc, schema: &RelationSchema) -> Result<Document, CorpusError> {
    let entities = raw
        .vertex_set
        .into_iter()
        .map(|mentions| Entity {
            type_tag: mentions.first().map(|m| m.type_tag.clone()).unwrap_or_default(),
            mentions: mentions
                .into_iter()
                .map(|m| Mention {
                    sent_id: m.sent_id,
                    start: m.pos[0],
                    end: m.pos[1],
                    surface: m.name,
                })
                .collect(),
        })
        .collect();
    let mut labels = Vec::new();
    for l in raw.labels.unwrap_or_default() {
        let relation = schema.id_of(&l.r).ok_or_else(|| CorpusError::UnknownRelation {
            doc_id: raw.title.clone(),
            name: l.r.clone(),
        })?;
        labels.push(RelationInstance {
            head: l.h,
            tail: l.t,
            relation,
            evidence: l.evidence.into_iter().collect::<BTreeSet<_>>(),
        });
    }
    Ok(Document {
        doc_id: raw.title,
        sentences: raw.sents,
        entities,
        labels,
    })
}

/// Canonical serialization; [`parse_docred`] inverts it exactly.
pub fn serialize_docred(corpus: &Corpus, schema: &RelationSchema) -> String {
    let raw: Vec<RawDoc> = corpus
        .documents
        .iter()
        .map(|d| RawDoc {
            title: d.doc_id.clone(),
            sents: d.sentences.clone(),
            vertex_set: d
                .entities
                .iter()
                .map(|e| {
                    e.mentions
                        .iter()
                        .map(|m| RawMention {
                            name: m.surface.clone(),
                            pos: [m.start, m.end],
                            sent_id: m.sent_id,
                            type_tag: e.type_tag.clone(),
                        })
                        .collect()
                })
                .collect(),
            labels: Some(
                d.labels
                    .iter()
                    .map(|l| RawLabel {
                        h: l.head,
                        t: l.tail,
                        r: schema.name(l.relation).to_string(),
                        evidence: l.evidence.iter().copied().collect(),
                    })
                    .collect(),
            ),
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("corpus serializes")
}
