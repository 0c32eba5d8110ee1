//! Sentence importance, gold and silver evidence distributions and the KL
//! evidence losses.

mod store;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationInstance, TokenizedDocument};
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Graph, NumericsError, Tensor, Var};

pub use store::{Precision, SilverEvidenceStore, SilverRecord, SkippedDocument};

/// Floor applied to predicted probabilities inside logarithms.
pub const EPS_LOG: f64 = 1e-12;
/// Default weight of the evidence loss.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErSupervision {
    Gold,
    Silver,
    None,
}

impl std::str::FromStr for ErSupervision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(Self::Gold),
            "silver" => Ok(Self::Silver),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!(
                "unknown evidence supervision `{s}` (expected gold, silver or none)"
            ))),
        }
    }
}

impl std::fmt::Display for ErSupervision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gold => "gold",
            Self::Silver => "silver",
            Self::None => "none",
        })
    }
}

/// `|T| x n_sentences` 0/1 matrix mapping tokens to their sentence.
/// BOS/EOS rows are all zero.
pub fn sentence_indicator(tok: &TokenizedDocument) -> Tensor {
    let n = tok.num_sentences();
    let mut m = Tensor::zeros(&[tok.len(), n]);
    for (i, &(s, e)) in tok.sentence_spans.iter().enumerate() {
        for t in s..=e {
            m.row_mut(t)[i] = 1.0;
        }
    }
    m
}

/// Mass of `q` per sentence. Tokens outside every sentence are dropped and
/// the result is not renormalized.
pub fn sentence_importance(q: &[f64], tok: &TokenizedDocument) -> Result<Vec<f64>> {
    if q.len() != tok.len() {
        return Err(Error::Consistency(format!(
            "token distribution of length {} for a document of {} tokens",
            q.len(),
            tok.len()
        )));
    }
    Ok(tok
        .sentence_spans
        .iter()
        .map(|&(s, e)| q[s..=e].iter().sum())
        .collect())
}

/// Normalized evidence marginal over the pair's relations. `None` when the
/// pair has no relation or no relation carries evidence.
pub fn gold_evidence_distribution(labels: &[&RelationInstance], n_sentences: usize) -> Option<Vec<f64>> {
    let mut v = vec![0.0; n_sentences];
    for l in labels {
        for &i in &l.evidence {
            v[i] += 1.0;
        }
    }
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= total);
    Some(v)
}

fn kl_row(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &p)| t * (t.ln() - p.max(EPS_LOG).ln()))
        .sum()
}

/// `KL(v ‖ p)` between a gold sentence distribution and sentence importance.
pub fn er_loss_gold(v: &[f64], p: &[f64]) -> Result<f64> {
    if v.len() != p.len() {
        return Err(Error::Consistency(format!(
            "evidence distribution over {} sentences against importance over {}",
            v.len(),
            p.len()
        )));
    }
    Ok(kl_row(v, p))
}

/// `KL(q̂ ‖ q)` between a stored token distribution and the model's.
pub fn er_loss_silver(q_hat: &[f64], q: &[f64]) -> Result<f64> {
    if q_hat.len() != q.len() {
        return Err(Error::Consistency(format!(
            "stored distribution over {} tokens against a document of {} tokens",
            q_hat.len(),
            q.len()
        )));
    }
    Ok(kl_row(q_hat, q))
}

/// `L_RE + λ·L_ER`
pub fn combine_losses(l_re: f64, l_er: f64, lambda: f64) -> f64 {
    l_re + lambda * l_er
}

/// Mean over rows of `KL(target_row ‖ input_row)`; the target is constant.
#[derive(Debug)]
struct KlOp {
    target: Tensor,
}

impl CustomOp for KlOp {
    fn name(&self) -> &'static str {
        "kl_divergence"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
        let p = inputs[0];
        if p.shape() != self.target.shape() {
            return Err(NumericsError::Shape {
                op: "kl_divergence",
                left: self.target.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        let rows = p.rows();
        let total: f64 = (0..rows).map(|r| kl_row(self.target.row(r), p.row(r))).sum();
        Ok(Tensor::scalar(total / rows.max(1) as f64))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let p = inputs[0];
        let scale = grad.item() / p.rows().max(1) as f64;
        let data = self
            .target
            .data()
            .iter()
            .zip(p.data())
            .map(|(&t, &x)| if t > 0.0 && x > EPS_LOG { -scale * t / x } else { 0.0 })
            .collect();
        vec![Tensor::new(p.shape().to_vec(), data).expect("same shape")]
    }
}

/// Records the mean row-wise `KL(target ‖ pred)` on `g`.
pub fn kl_on(g: &mut Graph, pred: Var, target: Tensor) -> Result<Var> {
    Ok(g.custom(Box::new(KlOp { target }), &[pred])?)
}

/// Gold evidence loss of one document: mean KL over the pairs that have a
/// defined evidence distribution. `pair_q` holds one token distribution per
/// entry of `pairs`. Returns `None` when every pair abstains.
pub fn gold_loss_on(
    g: &mut Graph,
    pair_q: Var,
    tok: &TokenizedDocument,
    pairs: &[(usize, usize)],
    labels: &[RelationInstance],
) -> Result<Option<Var>> {
    let n = tok.num_sentences();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, &(s, o)) in pairs.iter().enumerate() {
        let pair_labels: Vec<&RelationInstance> = labels.iter().filter(|l| l.head == s && l.tail == o).collect();
        if let Some(v) = gold_evidence_distribution(&pair_labels, n) {
            rows.push(i);
            targets.extend(v);
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let target = Tensor::matrix(rows.len(), n, targets)?;
    let q = g.gather_rows(pair_q, rows)?;
    let s = g.constant(sentence_indicator(tok));
    let p = g.matmul(q, s)?;
    Ok(Some(kl_on(g, p, target)?))
}

/// Sentences whose importance strictly exceeds `threshold`.
pub fn evidence_sentences(p: &[f64], threshold: f64) -> BTreeSet<usize> {
    p.iter()
        .enumerate()
        .filter(|(_, &x)| x > threshold)
        .map(|(i, _)| i)
        .collect()
}
