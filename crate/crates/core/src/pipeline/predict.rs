use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::par_map;
use crate::corpus::{Corpus, RelationId, RelationSchema};
use crate::error::{Error, Result};
use crate::evidence::evidence_sentences;

/// Default importance threshold for evidence sentences.
pub const DEFAULT_EVI_THRESHOLD: f64 = 0.2;

/// One extracted triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub relation: RelationId,
    /// `y_r - y_TH`
    pub score: f64,
    pub evidence: BTreeSet<usize>,
}

impl Prediction {
    pub fn key(&self) -> (&str, usize, usize, RelationId) {
        (&self.doc_id, self.head, self.tail, self.relation)
    }
}

#[derive(Serialize, Deserialize)]
struct RawPrediction {
    title: String,
    h_idx: usize,
    t_idx: usize,
    r: String,
    score: f64,
    evidence: Vec<usize>,
}

pub fn predictions_to_json(preds: &[Prediction], schema: &RelationSchema) -> String {
    let raw: Vec<RawPrediction> = preds
        .iter()
        .map(|p| RawPrediction {
            title: p.doc_id.clone(),
            h_idx: p.head,
            t_idx: p.tail,
            r: schema.name(p.relation).to_string(),
            score: p.score,
            evidence: p.evidence.iter().copied().collect(),
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("predictions serialize")
}

pub fn predictions_from_json(text: &str, schema: &RelationSchema) -> Result<Vec<Prediction>> {
    let raw: Vec<RawPrediction> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|r| {
            let relation = schema
                .id_of(&r.r)
                .ok_or_else(|| Error::Consistency(format!("prediction for `{}` uses unknown relation `{}`", r.title, r.r)))?;
            Ok(Prediction {
                doc_id: r.title,
                head: r.h_idx,
                tail: r.t_idx,
                relation,
                score: r.score,
                evidence: r.evidence.into_iter().collect(),
            })
        })
        .collect()
}

/// Adaptive-threshold extraction with relation-agnostic evidence.
/// Documents longer than the encoder limit are skipped with a warning.
pub fn predict(model: &Model, corpus: &Corpus, evi_threshold: f64) -> Result<Vec<Prediction>> {
    if !(evi_threshold > 0.0 && evi_threshold < 1.0) {
        return Err(Error::Config(format!("evidence threshold {evi_threshold} outside (0, 1)")));
    }
    let per_doc = par_map(&corpus.documents, |doc| -> Result<Option<Vec<Prediction>>> {
        let tok = model.tokenize(doc);
        if !model.fits(&tok) {
            return Ok(None);
        }
        let Some(scores) = model.score_document(doc)? else {
            return Ok(Some(Vec::new()));
        };
        let mut out = Vec::new();
        for (i, &(s, o)) in scores.pairs.iter().enumerate() {
            let rs = scores.scores(i);
            let predicted = rs.predicted();
            if predicted.is_empty() {
                continue;
            }
            let evidence = evidence_sentences(&scores.sentence_importance(i), evi_threshold);
            for r in predicted {
                out.push(Prediction {
                    doc_id: doc.doc_id.clone(),
                    head: s,
                    tail: o,
                    relation: r,
                    score: rs.margin(r),
                    evidence: evidence.clone(),
                });
            }
        }
        Ok(Some(out))
    });
    let mut preds = Vec::new();
    let mut skipped = 0;
    for r in per_doc {
        match r? {
            Some(p) => preds.extend(p),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("predict: skipped {skipped} documents longer than {} tokens", model.spec.max_len);
    }
    Ok(preds)
}
