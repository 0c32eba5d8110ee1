//! Relation extraction F1, Ign F1 and evidence F1.
//!
//! Predictions are deduplicated on `(doc, head, tail, relation)` before
//! scoring; the first occurrence wins. A zero denominator yields 0.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, RelationId};
use crate::pipeline::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            gold,
            predicted,
            matched,
        }
    }
}

type Triple = (String, usize, usize, RelationId);

fn dedup(pred: &[Prediction]) -> Vec<&Prediction> {
    let mut seen = HashSet::new();
    pred.iter().filter(|p| seen.insert(p.key())).collect()
}

fn gold_triples(gold: &Corpus) -> HashSet<Triple> {
    gold.documents
        .iter()
        .flat_map(|d| d.labels.iter().map(move |l| (d.doc_id.clone(), l.head, l.tail, l.relation)))
        .collect()
}

fn triple(p: &Prediction) -> Triple {
    (p.doc_id.clone(), p.head, p.tail, p.relation)
}

fn score(pred: &HashSet<Triple>, gold: &HashSet<Triple>) -> Prf {
    Prf::from_counts(pred.intersection(gold).count(), pred.len(), gold.len())
}

/// Micro scores over exact `(doc, head, tail, relation)` matches.
pub fn re_f1(pred: &[Prediction], gold: &Corpus) -> Prf {
    let p: HashSet<Triple> = dedup(pred).into_iter().map(triple).collect();
    score(&p, &gold_triples(gold))
}

/// `(head name, relation, tail name)` for every name combination of every
/// training fact.
fn train_facts(train: &Corpus) -> HashSet<(String, RelationId, String)> {
    let mut out = HashSet::new();
    for d in &train.documents {
        for l in &d.labels {
            for h in d.entities[l.head].names() {
                for t in d.entities[l.tail].names() {
                    out.insert((h.to_string(), l.relation, t.to_string()));
                }
            }
        }
    }
    out
}

fn seen_in_train(facts: &HashSet<(String, RelationId, String)>, doc: &Document, h: usize, r: RelationId, t: usize) -> bool {
    let (Some(he), Some(te)) = (doc.entities.get(h), doc.entities.get(t)) else {
        return false;
    };
    he.names().iter().any(|hn| {
        te.names()
            .iter()
            .any(|tn| facts.contains(&(hn.to_string(), r, tn.to_string())))
    })
}

/// RE scores after dropping every triple, predicted or gold, whose fact
/// appears in `train`. Two facts match when the relation is equal and the
/// heads share a surface name and the tails share a surface name.
pub fn ign_f1(pred: &[Prediction], gold: &Corpus, train: &Corpus) -> Prf {
    let facts = train_facts(train);
    let docs: HashMap<&str, &Document> = gold.documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let keep = |t: &Triple| match docs.get(t.0.as_str()) {
        Some(d) => !seen_in_train(&facts, d, t.1, t.3, t.2),
        None => true,
    };
    let p: HashSet<Triple> = dedup(pred).into_iter().map(triple).filter(|t| keep(t)).collect();
    let g: HashSet<Triple> = gold_triples(gold).into_iter().filter(|t| keep(t)).collect();
    score(&p, &g)
}

type EviTuple = (String, usize, usize, RelationId, usize);

/// Micro scores over `(doc, head, tail, relation, sentence)` tuples.
pub fn evi_f1(pred: &[Prediction], gold: &Corpus) -> Prf {
    let p: HashSet<EviTuple> = dedup(pred)
        .into_iter()
        .flat_map(|p| p.evidence.iter().map(move |&s| (p.doc_id.clone(), p.head, p.tail, p.relation, s)))
        .collect();
    let g: HashSet<EviTuple> = gold
        .documents
        .iter()
        .flat_map(|d| {
            d.labels.iter().flat_map(move |l| {
                l.evidence
                    .iter()
                    .map(move |&s| (d.doc_id.clone(), l.head, l.tail, l.relation, s))
            })
        })
        .collect();
    Prf::from_counts(p.intersection(&g).count(), p.len(), g.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub re: Prf,
    /// Absent when no training corpus was given.
    pub ign: Option<Prf>,
    pub evi: Prf,
    /// How Ign F1 matches facts.
    pub ign_fact_matching: String,
}

pub fn evaluate(pred: &[Prediction], gold: &Corpus, train: Option<&Corpus>) -> EvalReport {
    EvalReport {
        re: re_f1(pred, gold),
        ign: train.map(|t| ign_f1(pred, gold, t)),
        evi: evi_f1(pred, gold),
        ign_fact_matching: "surface-name overlap on head and tail, case-sensitive".into(),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![("RE", Some(self.re)), ("Ign", self.ign), ("Evi", Some(self.evi))];
        let mut out = String::new();
        writeln!(
            out,
            "{:<6} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}",
            "metric", "precision", "recall", "f1", "matched", "pred", "gold"
        )
        .unwrap();
        for (name, prf) in rows.drain(..) {
            match prf {
                Some(p) => writeln!(
                    out,
                    "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>8} {:>8}",
                    name, p.precision, p.recall, p.f1, p.matched, p.predicted, p.gold
                )
                .unwrap(),
                None => writeln!(out, "{name:<6} {:>9}", "n/a").unwrap(),
            }
        }
        out
    }
}

/// Convenience for callers holding evidence as sorted vectors.
pub fn evidence_set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}
