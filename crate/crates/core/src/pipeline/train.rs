use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::optim::{clip_grad_norm, lr_factor, AdamW};
use super::par_map;
use super::predict::{predict, DEFAULT_EVI_THRESHOLD};
use crate::corpus::{Corpus, Document, TokenizedDocument};
use crate::encoder::{self, Dropout};
use crate::error::{Error, Result};
use crate::evidence::{gold_loss_on, kl_on, ErSupervision, SilverEvidenceStore};
use crate::metrics::{evi_f1, re_f1};
use crate::numerics::{gradient_of, seeded_rng, Graph, Tensor, Var};
use crate::rexmodel::{self, label_row, ReLossKind};

/// Evidence loss weight of the stage presets. The small from-scratch
/// encoder needs a stronger pull towards gold evidence than
/// [`crate::evidence::DEFAULT_LAMBDA`], which suits pretrained encoders.
pub const TOY_LAMBDA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_classifier: f64,
    pub lambda: f64,
    /// Documents per optimizer step.
    pub batch_size: usize,
    /// Gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    /// Encoder dropout rate during training.
    pub dropout: f64,
    pub seed: u64,
    pub re_loss: ReLossKind,
    pub er_supervision: ErSupervision,
    /// Keep the parameters of the epoch with the best dev RE F1 when a dev
    /// corpus is supplied.
    pub select_best_dev: bool,
}

impl TrainConfig {
    /// Gold-supervised stage on human-annotated data.
    pub fn teacher() -> Self {
        Self {
            epochs: 30,
            lr_encoder: 4e-3,
            lr_classifier: 8e-3,
            lambda: TOY_LAMBDA,
            batch_size: 2,
            clip_norm: 1.0,
            warmup_frac: 0.06,
            weight_decay: 0.01,
            dropout: 0.1,
            seed: 0,
            re_loss: ReLossKind::Atl,
            er_supervision: ErSupervision::Gold,
            select_best_dev: true,
        }
    }

    /// Silver-supervised stage on distantly labelled data.
    pub fn student() -> Self {
        Self {
            epochs: 2,
            re_loss: ReLossKind::Bce,
            er_supervision: ErSupervision::Silver,
            select_best_dev: false,
            ..Self::teacher()
        }
    }

    /// Gold-supervised stage continuing from the student, on the teacher budget.
    pub fn finetune() -> Self {
        Self::teacher()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup fraction must lie in [0, 1], got {}", self.warmup_frac));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr_encoder >= 0.0 && self.lr_classifier >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        Ok(())
    }
}

/// Where evidence supervision comes from.
#[derive(Debug, Clone, Copy)]
pub enum EvidenceSource<'a> {
    Gold,
    Silver(&'a SilverEvidenceStore),
    None,
}

impl EvidenceSource<'_> {
    fn kind(&self) -> ErSupervision {
        match self {
            Self::Gold => ErSupervision::Gold,
            Self::Silver(_) => ErSupervision::Silver,
            Self::None => ErSupervision::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean RE loss per document.
    pub l_re: f64,
    /// Mean ER loss over documents with evidence supervision.
    pub l_er: f64,
    pub combined: f64,
    pub dev_re_f1: Option<f64>,
    pub dev_evi_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub steps: u64,
    pub skipped_documents: usize,
}

struct Prepared<'c> {
    doc: &'c Document,
    tok: TokenizedDocument,
    silver: Option<Tensor>,
    has_er: bool,
}

struct DocResult {
    re: f64,
    er: Option<f64>,
    grads: BTreeMap<String, Tensor>,
}

fn prepare<'c>(model: &Model, corpus: &'c Corpus, source: EvidenceSource) -> Result<(Vec<Prepared<'c>>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for doc in &corpus.documents {
        if doc.ordered_pairs().is_empty() {
            continue;
        }
        let tok = model.tokenize(doc);
        if !model.fits(&tok) {
            skipped += 1;
            continue;
        }
        let (silver, has_er) = match source {
            EvidenceSource::Gold => (None, doc.labels.iter().any(|l| !l.evidence.is_empty())),
            EvidenceSource::None => (None, false),
            EvidenceSource::Silver(store) => match store.record(&doc.doc_id) {
                Some(r) => {
                    if r.num_tokens != tok.len() {
                        return Err(Error::Consistency(format!(
                            "document `{}`: store holds {} tokens, tokenization gives {}",
                            doc.doc_id,
                            r.num_tokens,
                            tok.len()
                        )));
                    }
                    (Some(r.matrix()), true)
                }
                None => (None, false),
            },
        };
        out.push(Prepared { doc, tok, silver, has_er });
    }
    Ok((out, skipped))
}

struct Weights {
    re: f64,
    er: f64,
    dropout_seed: u64,
}

/// Evidence target of one document.
#[derive(Debug, Clone, Copy)]
pub enum ErTarget<'a> {
    /// Gold evidence sentences taken from the document labels.
    Gold,
    /// One stored token distribution per ordered pair.
    Silver(&'a Tensor),
    None,
}

/// Loss handles of one document.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub re: Var,
    pub er: Option<Var>,
    /// `re_weight * re + lambda * er_weight * er`.
    pub total: Var,
}

/// Records the training loss of `doc` over all its ordered pairs. The
/// weights let callers average over a batch.
#[allow(clippy::too_many_arguments)]
pub fn document_loss_on(
    g: &mut Graph,
    model: &Model,
    doc: &Document,
    tok: &TokenizedDocument,
    target: ErTarget,
    re_loss: ReLossKind,
    lambda: f64,
    (re_weight, er_weight): (f64, f64),
    dropout: Option<&mut Dropout>,
) -> Result<LossVars> {
    let pairs = doc.ordered_pairs();
    let enc = encoder::encode_on_with(g, tok, &model.params, &model.encoder_config(), dropout)?;
    let vars = rexmodel::forward_pairs(g, enc, tok, &pairs, &model.params, &model.classifier_config())?;
    let classes = model.schema.num_classes();
    let labels = pairs
        .iter()
        .map(|&(s, o)| label_row(classes, &doc.labels_for(s, o).map(|l| l.relation).collect()))
        .collect();
    let re = rexmodel::re_loss_on(g, vars.logits, labels, re_loss)?;
    let er = match target {
        ErTarget::Gold => gold_loss_on(g, vars.q, tok, &pairs, &doc.labels)?,
        ErTarget::Silver(t) => Some(kl_on(g, vars.q, t.clone())?),
        ErTarget::None => None,
    };
    let mut total = g.scale(re, re_weight);
    if let Some(er) = er {
        if lambda > 0.0 {
            let weighted = g.scale(er, lambda * er_weight);
            total = g.add(total, weighted)?;
        }
    }
    Ok(LossVars { re, er, total })
}

fn doc_gradients(model: &Model, p: &Prepared, cfg: &TrainConfig, source: EvidenceSource, w: Weights) -> Result<DocResult> {
    let mut g = Graph::new();
    let mut dropout = Dropout {
        rate: cfg.dropout,
        rng: seeded_rng(w.dropout_seed),
    };
    let target = match (source, &p.silver) {
        _ if !p.has_er => ErTarget::None,
        (EvidenceSource::Gold, _) => ErTarget::Gold,
        (EvidenceSource::Silver(_), Some(t)) => ErTarget::Silver(t),
        _ => ErTarget::None,
    };
    let l = document_loss_on(
        &mut g,
        model,
        p.doc,
        &p.tok,
        target,
        cfg.re_loss,
        cfg.lambda,
        (w.re, w.er),
        Some(&mut dropout),
    )?;
    let grads = gradient_of(&g, l.total, &model.params)?;
    Ok(DocResult {
        re: g.value(l.re).item(),
        er: l.er.map(|v| g.value(v).item()),
        grads,
    })
}

/// Optimizes `model` in place on `corpus`.
pub fn train(model: &mut Model, corpus: &Corpus, cfg: &TrainConfig, source: EvidenceSource, dev: Option<&Corpus>) -> Result<TrainLog> {
    cfg.validate()?;
    if source.kind() != cfg.er_supervision {
        return Err(Error::Config(format!(
            "evidence supervision `{}` configured but `{}` evidence supplied",
            cfg.er_supervision,
            source.kind()
        )));
    }
    if let EvidenceSource::Silver(store) = source {
        store.check_coverage(corpus)?;
    }
    let (docs, skipped) = prepare(model, corpus, source)?;
    if skipped > 0 {
        log::warn!("train: skipped {skipped} documents longer than {} tokens", model.spec.max_len);
    }

    let steps_per_epoch = docs.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut log = TrainLog {
        skipped_documents: skipped,
        ..TrainLog::default()
    };
    let mut best: Option<(f64, usize, crate::numerics::ParamSet)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut re_sum, mut er_sum, mut er_docs) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let er_count = batch.iter().filter(|&&i| docs[i].has_er).count().max(1);
            let re_w = 1.0 / batch.len() as f64;
            let er_w = 1.0 / er_count as f64;
            let results = {
                let model_ref: &Model = model;
                par_map(batch, |&i| {
                    let w = Weights {
                        re: re_w,
                        er: er_w,
                        dropout_seed: cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
                    };
                    doc_gradients(model_ref, &docs[i], cfg, source, w)
                })
            };
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for r in results {
                let r = r?;
                re_sum += r.re;
                if let Some(er) = r.er {
                    er_sum += er;
                    er_docs += 1;
                }
                for (name, g) in r.grads {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            grads.insert(name, g);
                        }
                    }
                }
            }
            clip_grad_norm(&mut grads, cfg.clip_norm);
            let factor = lr_factor(step, total_steps, cfg.warmup_frac);
            opt.step(&mut model.params, &grads, |name| {
                factor
                    * if name.starts_with(rexmodel::PREFIX) {
                        cfg.lr_classifier
                    } else {
                        cfg.lr_encoder
                    }
            });
            step += 1;
        }

        let l_re = re_sum / docs.len().max(1) as f64;
        let l_er = er_sum / er_docs.max(1) as f64;
        let mut entry = EpochLog {
            epoch,
            l_re,
            l_er,
            combined: l_re + cfg.lambda * l_er,
            dev_re_f1: None,
            dev_evi_f1: None,
        };
        if let (Some(dev), true) = (dev, cfg.select_best_dev) {
            let preds = predict(model, dev, DEFAULT_EVI_THRESHOLD)?;
            let f1 = re_f1(&preds, dev).f1;
            entry.dev_re_f1 = Some(f1);
            entry.dev_evi_f1 = Some(evi_f1(&preds, dev).f1);
            if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, model.params.clone()));
            }
        }
        log::info!(
            "epoch {epoch}/{}: L_RE={:.5} L_ER={:.5} combined={:.5}{}",
            cfg.epochs,
            entry.l_re,
            entry.l_er,
            entry.combined,
            match (entry.dev_re_f1, entry.dev_evi_f1) {
                (Some(f), Some(e)) => format!(" dev_F1={f:.4} dev_EviF1={e:.4}"),
                _ => String::new(),
            }
        );
        log.epochs.push(entry);
    }
    log.steps = opt.steps();
    log.selected_epoch = cfg.epochs;
    if let Some((_, epoch, params)) = best {
        log.selected_epoch = epoch;
        model.params = params;
    }
    Ok(log)
}
