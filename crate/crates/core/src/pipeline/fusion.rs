//! Re-scoring predictions on pseudo-documents built from their evidence and
//! choosing the blending threshold on a development set.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::par_map;
use super::predict::Prediction;
use crate::corpus::{Corpus, Document, Entity, Mention};
use crate::error::{Error, Result};

/// Number of evenly spaced finite thresholds tried.
pub const GRID_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Triples whose fused score exceeds `tau` survive. May be infinite when
    /// one of the limits fits the development set best.
    #[serde(with = "tau_serde")]
    pub tau: f64,
}

mod tau_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Limit(String),
    }

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_finite() {
            Repr::Finite(*tau).serialize(s)
        } else if *tau > 0.0 {
            Repr::Limit("+inf".into()).serialize(s)
        } else {
            Repr::Limit("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Limit(s) if s == "+inf" => Ok(f64::INFINITY),
            Repr::Limit(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Limit(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

/// A prediction with its fused score.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub prediction: Prediction,
    pub pseudo_score: Option<f64>,
    /// Full-document margin plus pseudo-document margin, or the full margin
    /// alone when no pseudo-document exists.
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub config: FusionConfig,
    pub bce: f64,
    /// Finite grid with its losses.
    pub grid: Vec<(f64, f64)>,
    pub bce_neg_inf: f64,
    pub bce_pos_inf: f64,
    pub scored: Vec<FusedPrediction>,
    pub predictions: Vec<Prediction>,
}

/// Document made of the `evidence` sentences in original order. Mentions in
/// other sentences are dropped, as are entities left without mentions; the
/// remaining entities keep their relative order. Returns the new indices of
/// `head` and `tail`, or `None` when either loses all mentions.
pub fn pseudo_document(doc: &Document, evidence: &BTreeSet<usize>, head: usize, tail: usize) -> Option<(Document, usize, usize)> {
    let kept: Vec<usize> = evidence.iter().copied().filter(|&s| s < doc.sentences.len()).collect();
    if kept.is_empty() {
        return None;
    }
    let new_sent: HashMap<usize, usize> = kept.iter().enumerate().map(|(n, &o)| (o, n)).collect();
    let mut remap = vec![None; doc.entities.len()];
    let mut entities = Vec::new();
    for (i, e) in doc.entities.iter().enumerate() {
        let mentions: Vec<Mention> = e
            .mentions
            .iter()
            .filter_map(|m| {
                new_sent.get(&m.sent_id).map(|&s| Mention {
                    sent_id: s,
                    ..m.clone()
                })
            })
            .collect();
        if !mentions.is_empty() {
            remap[i] = Some(entities.len());
            entities.push(Entity {
                mentions,
                type_tag: e.type_tag.clone(),
            });
        }
    }
    let (h, t) = (remap.get(head).copied().flatten()?, remap.get(tail).copied().flatten()?);
    let pseudo = Document {
        doc_id: format!("{}#pseudo", doc.doc_id),
        sentences: kept.iter().map(|&s| doc.sentences[s].clone()).collect(),
        entities,
        labels: Vec::new(),
    };
    Some((pseudo, h, t))
}

/// Fused scores for `predictions` over the documents of `corpus`.
pub fn fused_scores(model: &Model, predictions: &[Prediction], corpus: &Corpus) -> Result<Vec<FusedPrediction>> {
    let docs: HashMap<&str, &Document> = corpus.documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    for p in predictions {
        let Some(d) = docs.get(p.doc_id.as_str()) else {
            return Err(Error::Consistency(format!("prediction refers to unknown document `{}`", p.doc_id)));
        };
        if p.head >= d.entities.len() || p.tail >= d.entities.len() || p.head == p.tail {
            return Err(Error::Consistency(format!(
                "prediction ({}, {}) out of range for `{}`",
                p.head, p.tail, p.doc_id
            )));
        }
    }
    // one pseudo-document per (doc, pair, evidence)
    let mut keys: Vec<(&str, usize, usize, &BTreeSet<usize>)> =
        predictions.iter().map(|p| (p.doc_id.as_str(), p.head, p.tail, &p.evidence)).collect();
    keys.sort();
    keys.dedup();
    let pseudo_logits = par_map(&keys, |&(doc_id, s, o, evi)| -> Result<Option<Vec<f64>>> {
        let Some((pseudo, h, t)) = pseudo_document(docs[doc_id], evi, s, o) else {
            return Ok(None);
        };
        if !model.fits(&model.tokenize(&pseudo)) {
            return Ok(None);
        }
        let scores = model.score_document(&pseudo)?.expect("pseudo-document keeps two entities");
        let row = scores.pair_row(h, t).expect("pair present");
        Ok(Some(scores.logits.row(row).to_vec()))
    });
    let mut lookup = HashMap::new();
    for (k, v) in keys.into_iter().zip(pseudo_logits) {
        lookup.insert(k, v?);
    }
    Ok(predictions
        .iter()
        .map(|p| {
            let y = &lookup[&(p.doc_id.as_str(), p.head, p.tail, &p.evidence)];
            let pseudo_score = y.as_ref().map(|y| y[p.relation.0] - y[crate::rexmodel::TH]);
            FusedPrediction {
                prediction: p.clone(),
                pseudo_score,
                fused: p.score + pseudo_score.unwrap_or(0.0),
            }
        })
        .collect())
}

/// `-ln σ(x)`, stable.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of `σ(fused - tau)` against gold membership.
/// Infinite thresholds use the exact limits.
pub fn fusion_bce(scored: &[(f64, bool)], tau: f64) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    let total: f64 = scored
        .iter()
        .map(|&(f, gold)| {
            let x = f - tau;
            match (x.is_finite(), gold) {
                (true, true) => neg_log_sigmoid(x),
                (true, false) => neg_log_sigmoid(-x),
                (false, g) => {
                    if (x > 0.0) == g {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
            }
        })
        .sum();
    total / scored.len() as f64
}

/// Chooses `tau` on `dev` and filters the predictions with it.
///
/// Candidates are 201 evenly spaced points spanning the observed fused
/// scores plus both infinite limits; the first candidate with the lowest
/// loss wins.
pub fn fuse(model: &Model, predictions: &[Prediction], dev: &Corpus) -> Result<FusionOutcome> {
    let scored = fused_scores(model, predictions, dev)?;
    let gold: std::collections::HashSet<_> = dev
        .documents
        .iter()
        .flat_map(|d| d.labels.iter().map(move |l| (d.doc_id.as_str(), l.head, l.tail, l.relation)))
        .collect();
    let events: Vec<(f64, bool)> = scored
        .iter()
        .map(|f| {
            let p = &f.prediction;
            (f.fused, gold.contains(&(p.doc_id.as_str(), p.head, p.tail, p.relation)))
        })
        .collect();

    let (lo, hi) = events
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(f, _)| (lo.min(f), hi.max(f)));
    let grid: Vec<(f64, f64)> = if events.is_empty() {
        Vec::new()
    } else {
        (0..GRID_POINTS)
            .map(|i| {
                let tau = lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64;
                (tau, fusion_bce(&events, tau))
            })
            .collect()
    };
    let bce_neg_inf = fusion_bce(&events, f64::NEG_INFINITY);
    let bce_pos_inf = fusion_bce(&events, f64::INFINITY);

    let mut best = (f64::NEG_INFINITY, bce_neg_inf);
    for &(tau, bce) in grid.iter().chain(std::iter::once(&(f64::INFINITY, bce_pos_inf))) {
        if bce < best.1 {
            best = (tau, bce);
        }
    }
    let config = FusionConfig { tau: best.0 };
    let predictions = apply_threshold(&scored, config);
    Ok(FusionOutcome {
        config,
        bce: best.1,
        grid,
        bce_neg_inf,
        bce_pos_inf,
        scored,
        predictions,
    })
}

/// Predictions whose fused score exceeds the threshold.
pub fn apply_threshold(scored: &[FusedPrediction], config: FusionConfig) -> Vec<Prediction> {
    scored
        .iter()
        .filter(|f| f.fused > config.tau)
        .map(|f| f.prediction.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::small_doc;
    use crate::corpus::RelationId;
    use crate::pipeline::model::tests::tiny_model;
    use approx::assert_abs_diff_eq;

    fn pred(h: usize, t: usize, r: usize, score: f64, evi: &[usize]) -> Prediction {
        Prediction {
            doc_id: "d0".into(),
            head: h,
            tail: t,
            relation: RelationId(r),
            score,
            evidence: evi.iter().copied().collect(),
        }
    }

    #[test]
    fn pseudo_document_rules() {
        let d = small_doc();
        let (p, h, t) = pseudo_document(&d, &[1].into_iter().collect(), 1, 2).unwrap();
        assert_eq!(p.sentences, vec![d.sentences[1].clone()]);
        assert_eq!(p.entities.len(), 2);
        assert_eq!((h, t), (0, 1));
        assert_eq!(p.entities[0].mentions.len(), 1);
        assert_eq!(p.entities[0].mentions[0].sent_id, 0);
        p.validate().unwrap();
        assert!(pseudo_document(&d, &[1].into_iter().collect(), 0, 1).is_none());
        assert!(pseudo_document(&d, &BTreeSet::new(), 0, 1).is_none());
    }

    #[test]
    fn full_evidence_doubles_the_margin() {
        let m = tiny_model(6);
        let corpus = Corpus::new(vec![small_doc()]);
        let scores = m.score_document(&small_doc()).unwrap().unwrap();
        let row = scores.pair_row(0, 2).unwrap();
        let margin = scores.scores(row).margin(RelationId(1));
        let f = fused_scores(&m, &[pred(0, 2, 1, margin, &[0, 1])], &corpus).unwrap();
        assert_abs_diff_eq!(f[0].fused, 2.0 * margin, epsilon = 1e-12);
    }

    #[test]
    fn lost_entity_keeps_full_score() {
        let m = tiny_model(6);
        let f = fused_scores(&m, &[pred(0, 2, 1, 0.7, &[1])], &Corpus::new(vec![small_doc()])).unwrap();
        assert_eq!(f[0].pseudo_score, None);
        assert_eq!(f[0].fused, 0.7);
    }

    #[test]
    fn unknown_document_rejected() {
        let m = tiny_model(6);
        let mut p = pred(0, 1, 1, 0.5, &[0]);
        p.doc_id = "nope".into();
        assert!(matches!(fused_scores(&m, &[p], &Corpus::new(vec![small_doc()])), Err(Error::Consistency(_))));
    }

    #[test]
    fn bce_limits() {
        let events = [(1.0, true), (-1.0, false)];
        assert_eq!(fusion_bce(&events, f64::NEG_INFINITY), f64::INFINITY);
        assert_eq!(fusion_bce(&events, f64::INFINITY), f64::INFINITY);
        assert_eq!(fusion_bce(&[(3.0, true)], f64::NEG_INFINITY), 0.0);
        assert_abs_diff_eq!(fusion_bce(&events, 0.0), (1.0 + (-1f64).exp()).ln(), epsilon = 1e-15);
    }

    #[test]
    fn negative_infinity_keeps_everything() {
        let scored: Vec<FusedPrediction> = [-3.0, 0.0, 5.0]
            .iter()
            .map(|&f| FusedPrediction {
                prediction: pred(0, 1, 1, f, &[]),
                pseudo_score: None,
                fused: f,
            })
            .collect();
        assert_eq!(apply_threshold(&scored, FusionConfig { tau: f64::NEG_INFINITY }).len(), 3);
        assert_eq!(apply_threshold(&scored, FusionConfig { tau: 0.0 }).len(), 1);
    }

    #[test]
    fn chosen_tau_minimizes_grid_loss() {
        let m = tiny_model(8);
        let corpus = Corpus::new(vec![small_doc()]);
        let preds = vec![
            pred(0, 1, 1, 0.4, &[0]),
            pred(0, 2, 2, 0.1, &[0, 1]),
            pred(1, 2, 1, 0.3, &[1]),
            pred(2, 0, 2, 0.9, &[0]),
        ];
        let out = fuse(&m, &preds, &corpus).unwrap();
        assert_eq!(out.grid.len(), GRID_POINTS);
        assert!(out.grid.iter().all(|&(_, b)| out.bce <= b));
        assert!(out.bce <= out.bce_neg_inf && out.bce <= out.bce_pos_inf);
    }

    #[test]
    fn config_serializes_limits() {
        for tau in [f64::NEG_INFINITY, -1.5, f64::INFINITY] {
            let text = serde_json::to_string(&FusionConfig { tau }).unwrap();
            let back: FusionConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back.tau, tau);
        }
    }
}
