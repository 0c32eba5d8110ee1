use super::model::Model;
use super::par_map;
use crate::corpus::Corpus;
use crate::error::Result;
use crate::evidence::{Precision, SilverEvidenceStore};

enum Outcome {
    Stored(usize, usize, Vec<f64>),
    Skipped(String),
}

/// Teacher token distributions for every ordered pair of every document.
/// Documents beyond the encoder length are recorded as skipped.
pub fn distill(teacher: &Model, distant: &Corpus, precision: Precision) -> Result<SilverEvidenceStore> {
    let outcomes = par_map(&distant.documents, |doc| -> Result<Outcome> {
        let tok = teacher.tokenize(doc);
        if !teacher.fits(&tok) {
            return Ok(Outcome::Skipped(format!(
                "{} tokens exceed the encoder limit of {}",
                tok.len(),
                teacher.spec.max_len
            )));
        }
        let values = match teacher.score_document(doc)? {
            Some(scores) => scores.q.into_data(),
            None => Vec::new(),
        };
        Ok(Outcome::Stored(doc.entities.len(), tok.len(), values))
    });
    let mut store = SilverEvidenceStore::new(precision);
    for (doc, outcome) in distant.documents.iter().zip(outcomes) {
        match outcome? {
            Outcome::Stored(m, t, values) => store.push_document(&doc.doc_id, m, t, values)?,
            Outcome::Skipped(reason) => {
                log::warn!("distill: skipping `{}`: {reason}", doc.doc_id);
                store.push_skipped(&doc.doc_id, &reason);
            }
        }
    }
    Ok(store)
}
