//! Entity embeddings, localized context pooling, grouped bilinear relation
//! scoring and the relation-extraction losses.
//!
//! Classifier column 0 is the threshold class TH; column `r` scores
//! `RelationId(r)`. No-relation has no column: a pair predicts it when no
//! real relation outscores TH.

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationId, TokenizedDocument};
use crate::encoder::{EncoderOutput, EncoderVars};
use crate::error::{Error, Result};
use crate::numerics::{ops, CustomOp, Graph, NumericsError, ParamSet, Rng, Tensor, Var};

/// Reserved name prefix of every classifier tensor in a [`ParamSet`].
pub const PREFIX: &str = "classifier.";
/// Column of the threshold class.
pub const TH: usize = 0;
/// Added to the `a_sᵀa_o` denominator of the token distribution.
pub const EPS_DIV: f64 = 1e-30;
/// Below this pre-normalization mass the token distribution becomes uniform.
pub const MIN_MASS: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub dim: usize,
    /// Real relations plus TH.
    pub num_classes: usize,
    /// Bilinear block count `k`.
    pub groups: usize,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.groups == 0 || self.dim % self.groups != 0 {
            return Err(Error::Config(format!(
                "classifier: {} groups must divide dimension {}",
                self.groups, self.dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("classifier: need at least one real relation".into()));
        }
        Ok(())
    }

    pub fn block_size(&self) -> usize {
        self.dim / self.groups
    }

    /// Width of the flattened grouped outer product, `k·(d/k)²`.
    pub fn bilinear_width(&self) -> usize {
        self.groups * self.block_size() * self.block_size()
    }
}

fn pname(leaf: &str) -> String {
    format!("{PREFIX}{leaf}")
}

pub fn parameter_count(cfg: &ClassifierConfig) -> usize {
    let d = cfg.dim;
    2 * (d * 2 * d + d) + cfg.num_classes * cfg.bilinear_width() + cfg.num_classes
}

pub fn init_params(cfg: &ClassifierConfig, rng: &mut Rng, params: &mut ParamSet) -> Result<()> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut normal = |rows: usize, cols: usize, std: f64| -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Tensor::matrix(rows, cols, data).expect("sized")
    };
    let proj_std = 1.0 / ((2 * d) as f64).sqrt();
    for side in ["head", "tail"] {
        params.insert(&pname(&format!("{side}_w")), normal(d, 2 * d, proj_std), true)?;
        params.insert(&pname(&format!("{side}_b")), Tensor::zeros(&[d]), true)?;
    }
    let bil_std = 1.0 / ((d * cfg.block_size()) as f64).sqrt();
    params.insert(&pname("bilinear_w"), normal(cfg.num_classes, cfg.bilinear_width(), bil_std), true)?;
    params.insert(&pname("bilinear_b"), Tensor::zeros(&[cfg.num_classes]), true)?;
    Ok(())
}

/// Per-pair pooling results.
#[derive(Debug, Clone, PartialEq)]
pub struct PairContext {
    pub s: usize,
    pub o: usize,
    pub a_s: Vec<f64>,
    pub a_o: Vec<f64>,
    /// Token distribution over the whole tokenized document.
    pub q: Vec<f64>,
    /// `Hᵀq`
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationScores {
    /// Column 0 is TH.
    pub y: Vec<f64>,
}

impl RelationScores {
    pub fn threshold(&self) -> f64 {
        self.y[TH]
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.y.iter().map(|&v| ops::sigmoid_scalar(v)).collect()
    }

    /// `y_r - y_TH`
    pub fn margin(&self, r: RelationId) -> f64 {
        self.y[r.0] - self.y[TH]
    }

    /// Relations scoring strictly above TH.
    pub fn predicted(&self) -> Vec<RelationId> {
        (1..self.y.len())
            .filter(|&r| self.y[r] > self.y[TH])
            .map(RelationId)
            .collect()
    }
}

fn marker_rows(tok: &TokenizedDocument, e: usize) -> Result<&[usize]> {
    match tok.mention_starts.get(e) {
        Some(rows) if !rows.is_empty() => Ok(rows),
        _ => Err(Error::Config(format!("entity {e} has no mention markers"))),
    }
}

/// Logsumexp over the `H` rows at the entity's opening markers.
pub fn entity_embedding(out: &EncoderOutput, tok: &TokenizedDocument, e: usize) -> Result<Vec<f64>> {
    let rows = marker_rows(tok, e)?;
    let mut col = Vec::with_capacity(rows.len());
    Ok((0..out.h.cols())
        .map(|j| {
            col.clear();
            col.extend(rows.iter().map(|&r| out.h.at(r, j)));
            ops::logsumexp(&col)
        })
        .collect())
}

fn mean_attention(out: &EncoderOutput, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; out.a.cols()];
    for &r in rows {
        for (a, &x) in acc.iter_mut().zip(out.a.row(r)) {
            *a += x;
        }
    }
    acc.iter().map(|x| x / rows.len() as f64).collect()
}

/// Normalized product of two token-importance vectors. Falls back to uniform
/// when the product carries (almost) no mass.
pub fn pair_distribution(a_s: &[f64], a_o: &[f64], eps_div: f64) -> Vec<f64> {
    let prod: Vec<f64> = a_s.iter().zip(a_o).map(|(x, y)| x * y).collect();
    let t = Tensor::vector(prod);
    ops::normalize_rows(&t, eps_div, MIN_MASS).0.into_data()
}

pub fn token_importance(
    out: &EncoderOutput,
    tok: &TokenizedDocument,
    s: usize,
    o: usize,
    eps_div: f64,
) -> Result<PairContext> {
    let a_s = mean_attention(out, marker_rows(tok, s)?);
    let a_o = mean_attention(out, marker_rows(tok, o)?);
    let q = pair_distribution(&a_s, &a_o, eps_div);
    let c = local_context(out, &q)?;
    Ok(PairContext { s, o, a_s, a_o, q, c })
}

/// `c = Hᵀq`
pub fn local_context(out: &EncoderOutput, q: &[f64]) -> Result<Vec<f64>> {
    let qt = Tensor::matrix(1, q.len(), q.to_vec())?;
    Ok(ops::matmul(&qt, &out.h)?.into_data())
}

/// Scores one pair from its subject/object embeddings and context.
pub fn relation_scores(h_s: &[f64], h_o: &[f64], c: &[f64], params: &ParamSet, cfg: &ClassifierConfig) -> Result<RelationScores> {
    let mut g = Graph::new();
    let hs = g.constant(Tensor::matrix(1, h_s.len(), h_s.to_vec())?);
    let ho = g.constant(Tensor::matrix(1, h_o.len(), h_o.to_vec())?);
    let cv = g.constant(Tensor::matrix(1, c.len(), c.to_vec())?);
    let y = score_on(&mut g, hs, ho, cv, params, cfg)?;
    Ok(RelationScores { y: g.value(y).data().to_vec() })
}

/// Batched scoring: one row per pair in `hs`, `ho`, `c`.
pub fn score_on(g: &mut Graph, hs: Var, ho: Var, c: Var, params: &ParamSet, cfg: &ClassifierConfig) -> Result<Var> {
    let hw = g.param(params, &pname("head_w"))?;
    let hb = g.param(params, &pname("head_b"))?;
    let tw = g.param(params, &pname("tail_w"))?;
    let tb = g.param(params, &pname("tail_b"))?;
    let bw = g.param(params, &pname("bilinear_w"))?;
    let bb = g.param(params, &pname("bilinear_b"))?;
    let s_in = g.concat_cols(&[hs, c])?;
    let o_in = g.concat_cols(&[ho, c])?;
    let zs = g.linear(s_in, hw, hb)?;
    let zs = g.tanh(zs);
    let zo = g.linear(o_in, tw, tb)?;
    let zo = g.tanh(zo);
    let outer = g.grouped_outer(zs, zo, cfg.groups)?;
    Ok(g.linear(outer, bw, bb)?)
}

/// Graph handles for a batch of pairs from one document.
#[derive(Debug, Clone, Copy)]
pub struct PairVars {
    /// `pairs x |T|` token distributions.
    pub q: Var,
    /// `pairs x num_classes` scores.
    pub logits: Var,
}

/// Records pooling and scoring for `pairs` on top of an encoder pass.
pub fn forward_pairs(
    g: &mut Graph,
    enc: EncoderVars,
    tok: &TokenizedDocument,
    pairs: &[(usize, usize)],
    params: &ParamSet,
    cfg: &ClassifierConfig,
) -> Result<PairVars> {
    let groups: Vec<Vec<usize>> = (0..tok.mention_starts.len())
        .map(|e| marker_rows(tok, e).map(<[usize]>::to_vec))
        .collect::<Result<_>>()?;
    let ent_h = g.logsumexp_row_groups(enc.h, groups.clone())?;
    let ent_a = g.mean_row_groups(enc.a, groups)?;
    let subj: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let obj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let hs = g.gather_rows(ent_h, subj.clone())?;
    let ho = g.gather_rows(ent_h, obj.clone())?;
    let a_s = g.gather_rows(ent_a, subj)?;
    let a_o = g.gather_rows(ent_a, obj)?;
    let prod = g.mul(a_s, a_o)?;
    let q = g.normalize_rows(prod, EPS_DIV, MIN_MASS);
    let c = g.matmul(q, enc.h)?;
    let logits = score_on(g, hs, ho, c, params, cfg)?;
    Ok(PairVars { q, logits })
}

/// Per-row label mask: `labels[p][r]` marks relation column `r` positive for
/// pair `p`. Column 0 is ignored.
pub type LabelRows = Vec<Vec<bool>>;

fn atl_row(y: &[f64], pos: &[bool], grad: Option<&mut [f64]>) -> f64 {
    let positives: Vec<usize> = (1..y.len()).filter(|&r| pos[r]).collect();
    let negatives: Vec<usize> = (1..y.len()).filter(|&r| !pos[r]).collect();
    let mut loss = 0.0;
    let mut g = vec![0.0; y.len()];

    if !positives.is_empty() {
        let idx: Vec<usize> = std::iter::once(TH).chain(positives.iter().copied()).collect();
        let vals: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let lse = ops::logsumexp(&vals);
        let np = positives.len() as f64;
        for &r in &positives {
            loss += lse - y[r];
        }
        for (&i, &v) in idx.iter().zip(&vals) {
            g[i] += np * (v - lse).exp();
        }
        for &r in &positives {
            g[r] -= 1.0;
        }
    }

    let idx: Vec<usize> = std::iter::once(TH).chain(negatives).collect();
    let vals: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let lse = ops::logsumexp(&vals);
    loss += lse - y[TH];
    for (&i, &v) in idx.iter().zip(&vals) {
        g[i] += (v - lse).exp();
    }
    g[TH] -= 1.0;

    if let Some(out) = grad {
        out.copy_from_slice(&g);
    }
    loss
}

/// `softplus(x) = ln(1 + e^x)`, stable for large |x|.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn bce_row(y: &[f64], pos: &[bool], grad: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    let mut g = vec![0.0; y.len()];
    for r in 1..y.len() {
        if pos[r] {
            loss += softplus(-y[r]);
            g[r] = ops::sigmoid_scalar(y[r]) - 1.0;
        } else {
            loss += softplus(y[r]);
            g[r] = ops::sigmoid_scalar(y[r]);
        }
    }
    if let Some(out) = grad {
        out.copy_from_slice(&g);
    }
    loss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReLossKind {
    Atl,
    Bce,
}

impl std::str::FromStr for ReLossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atl" => Ok(Self::Atl),
            "bce" => Ok(Self::Bce),
            _ => Err(Error::Config(format!("unknown RE loss `{s}` (expected atl or bce)"))),
        }
    }
}

impl std::fmt::Display for ReLossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Atl => "atl",
            Self::Bce => "bce",
        })
    }
}

/// Mean RE loss over the rows of a `pairs x classes` score matrix.
#[derive(Debug)]
struct ReLossOp {
    kind: ReLossKind,
    labels: LabelRows,
}

impl ReLossOp {
    fn row(&self, y: &[f64], pos: &[bool], grad: Option<&mut [f64]>) -> f64 {
        match self.kind {
            ReLossKind::Atl => atl_row(y, pos, grad),
            ReLossKind::Bce => bce_row(y, pos, grad),
        }
    }
}

impl CustomOp for ReLossOp {
    fn name(&self) -> &'static str {
        match self.kind {
            ReLossKind::Atl => "atl_loss",
            ReLossKind::Bce => "bce_loss",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
        let y = inputs[0];
        if y.rows() != self.labels.len() || self.labels.iter().any(|l| l.len() != y.cols()) {
            return Err(NumericsError::Invalid {
                op: self.name(),
                msg: format!("labels do not match scores of shape {:?}", y.shape()),
            });
        }
        let n = y.rows().max(1) as f64;
        let total: f64 = (0..y.rows()).map(|p| self.row(y.row(p), &self.labels[p], None)).sum();
        Ok(Tensor::scalar(total / n))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let y = inputs[0];
        let scale = grad.item() / y.rows().max(1) as f64;
        let mut out = Tensor::zeros(y.shape());
        let c = y.cols();
        for p in 0..y.rows() {
            let slot = &mut out.data_mut()[p * c..(p + 1) * c];
            self.row(y.row(p), &self.labels[p], Some(slot));
            slot.iter_mut().for_each(|v| *v *= scale);
        }
        vec![out]
    }
}

/// Records the mean RE loss of `logits` (`pairs x classes`) on `g`.
pub fn re_loss_on(g: &mut Graph, logits: Var, labels: LabelRows, kind: ReLossKind) -> Result<Var> {
    Ok(g.custom(Box::new(ReLossOp { kind, labels }), &[logits])?)
}

/// Label row for one pair from a set of positive relations.
pub fn label_row(num_classes: usize, positives: &BTreeSet<RelationId>) -> Vec<bool> {
    let mut row = vec![false; num_classes];
    for r in positives {
        if r.0 != TH && r.0 < num_classes {
            row[r.0] = true;
        }
    }
    row
}

/// Adaptive-thresholding loss of one pair: the positives' log-likelihood
/// against TH plus TH's log-likelihood against the negatives.
pub fn atl_loss(scores: &RelationScores, positives: &BTreeSet<RelationId>) -> f64 {
    atl_row(&scores.y, &label_row(scores.y.len(), positives), None)
}

/// Multi-label binary cross-entropy of one pair, summed over real relations.
pub fn bce_loss(scores: &RelationScores, positives: &BTreeSet<RelationId>) -> f64 {
    bce_row(&scores.y, &label_row(scores.y.len(), positives), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenKind, TokenizedDocument};
    use crate::encoder::{self, EncoderConfig};
    use crate::numerics::{finite_difference_check, seeded_rng};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn rels(ids: &[usize]) -> BTreeSet<RelationId> {
        ids.iter().map(|&i| RelationId(i)).collect()
    }

    fn out_from(h: Tensor, a: Tensor) -> EncoderOutput {
        EncoderOutput { h, a }
    }

    fn tok_with_markers(n: usize, starts: Vec<Vec<usize>>) -> TokenizedDocument {
        TokenizedDocument {
            ids: vec![4; n],
            kinds: vec![TokenKind::Word; n],
            surface: vec![String::new(); n],
            sentence_spans: vec![(0, n - 1)],
            mention_starts: starts,
            bos: None,
            eos: None,
        }
    }

    #[test]
    fn entity_embedding_examples() {
        let h = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 3.0]]);
        let out = out_from(h, Tensor::zeros(&[3, 3]));
        let tok = tok_with_markers(3, vec![vec![2], vec![0, 1]]);
        assert_eq!(entity_embedding(&out, &tok, 0).unwrap(), vec![2.0, 3.0]);
        let e = entity_embedding(&out, &tok, 1).unwrap();
        let expected = (1.0 + 1f64.exp()).ln();
        assert_abs_diff_eq!(e[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 1.31326, epsilon = 1e-5);

        let same = out_from(Tensor::from_rows(&[vec![0.3, -1.0], vec![0.3, -1.0]]), Tensor::zeros(&[2, 2]));
        let e = entity_embedding(&same, &tok_with_markers(2, vec![vec![0, 1]]), 0).unwrap();
        assert_abs_diff_eq!(e[0], 0.3 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], -1.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn pair_distribution_examples() {
        let q = pair_distribution(&[0.25; 4], &[0.25; 4], EPS_DIV);
        q.iter().for_each(|&x| assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15));
        let q = pair_distribution(&[0.5, 0.5], &[0.8, 0.2], EPS_DIV);
        assert_abs_diff_eq!(q[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.2, epsilon = 1e-15);
        assert_eq!(pair_distribution(&[1.0, 0.0], &[0.0, 1.0], EPS_DIV), vec![0.5, 0.5]);
    }

    #[test]
    fn token_importance_averages_marker_rows() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.2, 0.2, 0.6]]);
        let out = out_from(Tensor::zeros(&[3, 2]), a);
        let tok = tok_with_markers(3, vec![vec![0, 1], vec![2]]);
        let ctx = token_importance(&out, &tok, 0, 1, EPS_DIV).unwrap();
        assert_eq!(ctx.a_s, vec![0.5, 0.5, 0.0]);
        assert_abs_diff_eq!(ctx.q[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.q[1], 0.5, epsilon = 1e-12);
        assert_eq!(ctx.q[2], 0.0);
    }

    #[test]
    fn local_context_examples() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = out_from(h.clone(), Tensor::zeros(&[2, 2]));
        assert_eq!(local_context(&out, &[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(local_context(&out, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        let h3 = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]);
        let out3 = out_from(h3, Tensor::zeros(&[3, 3]));
        let c = local_context(&out3, &[1.0 / 3.0; 3]).unwrap();
        assert_abs_diff_eq!(c[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 5.0, epsilon = 1e-12);
        assert!(local_context(&out3, &[0.5, 0.5]).is_err());
    }

    fn random_params(cfg: &ClassifierConfig, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_params(cfg, &mut seeded_rng(seed), &mut p).unwrap();
        p
    }

    fn random_vec(rng: &mut crate::numerics::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_even_odds() {
        let cfg = ClassifierConfig { dim: 4, num_classes: 4, groups: 2 };
        let mut p = ParamSet::new();
        for (name, t) in random_params(&cfg, 0).iter() {
            p.insert(name, Tensor::zeros(t.tensor.shape()), true).unwrap();
        }
        let s = relation_scores(&[1.0; 4], &[-1.0; 4], &[0.5; 4], &p, &cfg).unwrap();
        assert_eq!(s.y, vec![0.0; 4]);
        assert_eq!(s.probabilities(), vec![0.5; 4]);
    }

    /// `z_sᵀ W z_o` with a dense `d x d` matrix per relation.
    fn full_bilinear(zs: &[f64], zo: &[f64], w: &[Vec<Vec<f64>>], b: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(b)
            .map(|(m, &br)| {
                let mut acc = br;
                for i in 0..zs.len() {
                    for j in 0..zo.len() {
                        acc += zs[i] * m[i][j] * zo[j];
                    }
                }
                acc
            })
            .collect()
    }

    fn tanh_proj(w: &Tensor, b: &Tensor, h: &[f64], c: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = h.iter().chain(c).copied().collect();
        (0..w.rows())
            .map(|r| (w.row(r).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b.data()[r]).tanh())
            .collect()
    }

    /// Dense matrices assembled from the grouped blocks.
    fn block_diagonal(p: &ParamSet, cfg: &ClassifierConfig) -> Vec<Vec<Vec<f64>>> {
        let bw = p.get("classifier.bilinear_w").unwrap();
        let bs = cfg.block_size();
        (0..cfg.num_classes)
            .map(|r| {
                let mut m = vec![vec![0.0; cfg.dim]; cfg.dim];
                for g in 0..cfg.groups {
                    for i in 0..bs {
                        for j in 0..bs {
                            m[g * bs + i][g * bs + j] = bw.at(r, g * bs * bs + i * bs + j);
                        }
                    }
                }
                m
            })
            .collect()
    }

    fn full_oracle(p: &ParamSet, cfg: &ClassifierConfig, hs: &[f64], ho: &[f64], c: &[f64]) -> Vec<f64> {
        let zs = tanh_proj(p.get("classifier.head_w").unwrap(), p.get("classifier.head_b").unwrap(), hs, c);
        let zo = tanh_proj(p.get("classifier.tail_w").unwrap(), p.get("classifier.tail_b").unwrap(), ho, c);
        full_bilinear(&zs, &zo, &block_diagonal(p, cfg), p.get("classifier.bilinear_b").unwrap().data())
    }

    #[test]
    fn grouped_matches_block_diagonal_full_bilinear() {
        let mut rng = seeded_rng(3);
        for (d, k) in [(8, 1), (8, 2), (8, 4), (16, 1), (16, 4)] {
            let cfg = ClassifierConfig { dim: d, num_classes: 5, groups: k };
            let p = random_params(&cfg, rng.gen());
            let (hs, ho, c) = (random_vec(&mut rng, d), random_vec(&mut rng, d), random_vec(&mut rng, d));
            let y = relation_scores(&hs, &ho, &c, &p, &cfg).unwrap().y;
            let oracle = full_oracle(&p, &cfg, &hs, &ho, &c);
            for (a, b) in y.iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_blocks_equal_single_block_with_diagonal_matrix() {
        let d = 4;
        let diag = ClassifierConfig { dim: d, num_classes: 3, groups: d };
        let full = ClassifierConfig { groups: 1, ..diag.clone() };
        let pd = random_params(&diag, 11);
        let mut pf = ParamSet::new();
        for (name, t) in pd.iter() {
            if name == "classifier.bilinear_w" {
                let mut w = Tensor::zeros(&[3, d * d]);
                for r in 0..3 {
                    for i in 0..d {
                        w.row_mut(r)[i * d + i] = t.tensor.at(r, i);
                    }
                }
                pf.insert(name, w, true).unwrap();
            } else {
                pf.insert(name, t.tensor.clone(), true).unwrap();
            }
        }
        let v = [0.3, -0.2, 0.9, 0.1];
        let a = relation_scores(&v, &[0.5; 4], &[-0.4; 4], &pd, &diag).unwrap();
        let b = relation_scores(&v, &[0.5; 4], &[-0.4; 4], &pf, &full).unwrap();
        for (x, y) in a.y.iter().zip(&b.y) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_construction_is_swap_invariant() {
        let cfg = ClassifierConfig { dim: 4, num_classes: 3, groups: 2 };
        let src = random_params(&cfg, 4);
        let mut p = ParamSet::new();
        let bs = cfg.block_size();
        for (name, t) in src.iter() {
            let tensor = match name {
                "classifier.tail_w" => src.get("classifier.head_w").unwrap().clone(),
                "classifier.tail_b" => src.get("classifier.head_b").unwrap().clone(),
                "classifier.bilinear_w" => {
                    let mut w = t.tensor.clone();
                    for r in 0..cfg.num_classes {
                        for g in 0..cfg.groups {
                            for i in 0..bs {
                                for j in 0..bs {
                                    let (a, b) = (g * bs * bs + i * bs + j, g * bs * bs + j * bs + i);
                                    let avg = 0.5 * (t.tensor.at(r, a) + t.tensor.at(r, b));
                                    w.row_mut(r)[a] = avg;
                                    w.row_mut(r)[b] = avg;
                                }
                            }
                        }
                    }
                    w
                }
                _ => t.tensor.clone(),
            };
            p.insert(name, tensor, true).unwrap();
        }
        let (hs, ho, c) = ([0.1, 0.7, -0.3, 0.2], [-0.5, 0.4, 0.8, 0.0], [0.2; 4]);
        let a = relation_scores(&hs, &ho, &c, &p, &cfg).unwrap();
        let b = relation_scores(&ho, &hs, &c, &p, &cfg).unwrap();
        for (x, y) in a.y.iter().zip(&b.y) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn atl_examples() {
        let tie = RelationScores { y: vec![0.3, 0.3] };
        assert_abs_diff_eq!(atl_loss(&tie, &rels(&[1])), 2f64.ln(), epsilon = 1e-12);
        let separated = RelationScores { y: vec![0.0, -60.0, -60.0] };
        assert!(atl_loss(&separated, &rels(&[])) < 1e-25);
        let winning = RelationScores { y: vec![0.0, 60.0, -60.0] };
        assert!(atl_loss(&winning, &rels(&[1])) < 1e-25);
    }

    #[test]
    fn bce_examples() {
        let zero = RelationScores { y: vec![0.0, 0.0] };
        assert_abs_diff_eq!(bce_loss(&zero, &rels(&[1])), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(bce_loss(&zero, &rels(&[])), 2f64.ln(), epsilon = 1e-12);
        let low = RelationScores { y: vec![0.0, -10.0, -10.0, -10.0] };
        let expected = 3.0 * (1.0 + (-10f64).exp()).ln();
        assert_abs_diff_eq!(bce_loss(&low, &rels(&[])), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected / 3.0, 4.54e-5, epsilon = 1e-7);
    }

    #[test]
    fn predicted_uses_strict_threshold() {
        let s = RelationScores { y: vec![0.0, 1.0, -0.5] };
        assert_eq!(s.predicted(), vec![RelationId(1)]);
        let none = RelationScores { y: vec![0.0, 0.0, -0.5] };
        assert!(none.predicted().is_empty());
    }

    proptest! {
        #[test]
        fn atl_is_nonnegative(y in proptest::collection::vec(-20.0f64..20.0, 2..7), mask in any::<u8>()) {
            let positives: BTreeSet<RelationId> = (1..y.len()).filter(|r| mask >> r & 1 == 1).map(RelationId).collect();
            let s = RelationScores { y };
            prop_assert!(atl_loss(&s, &positives) >= 0.0);
            prop_assert!(bce_loss(&s, &positives) >= 0.0);
        }
    }

    pub(crate) fn toy_setup(seed: u64) -> (EncoderConfig, ClassifierConfig, ParamSet, TokenizedDocument) {
        let ecfg = EncoderConfig {
            vocab_size: 9,
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 8,
            max_len: 24,
            average_last_k: 3,
        };
        let ccfg = ClassifierConfig { dim: 8, num_classes: 4, groups: 2 };
        let mut rng = seeded_rng(seed);
        let mut p = ParamSet::new();
        encoder::init_params(&ecfg, &mut rng, &mut p).unwrap();
        init_params(&ccfg, &mut rng, &mut p).unwrap();
        let mut tok = tok_with_markers(10, vec![vec![0, 5], vec![2], vec![7]]);
        tok.ids = (0..10).map(|_| rng.gen_range(0..9)).collect();
        (ecfg, ccfg, p, tok)
    }

    fn without_key_bias(p: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in p.iter() {
            out.insert(name, t.tensor.clone(), t.trainable && !name.ends_with("attn.bk")).unwrap();
        }
        out
    }

    #[test]
    fn batched_forward_matches_pure_functions() {
        let (ecfg, ccfg, p, tok) = toy_setup(1);
        let pairs = vec![(0, 1), (2, 0), (1, 2)];
        let mut g = Graph::new();
        let enc = encoder::encode_on(&mut g, &tok, &p, &ecfg).unwrap();
        let vars = forward_pairs(&mut g, enc, &tok, &pairs, &p, &ccfg).unwrap();
        let out = encoder::encode(&tok, &p, &ecfg).unwrap();
        for (row, &(s, o)) in pairs.iter().enumerate() {
            let ctx = token_importance(&out, &tok, s, o, EPS_DIV).unwrap();
            for (a, b) in ctx.q.iter().zip(g.value(vars.q).row(row)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            let hs = entity_embedding(&out, &tok, s).unwrap();
            let ho = entity_embedding(&out, &tok, o).unwrap();
            let y = relation_scores(&hs, &ho, &ctx.c, &p, &ccfg).unwrap().y;
            for (a, b) in y.iter().zip(g.value(vars.logits).row(row)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn re_losses_pass_finite_difference_check() {
        for kind in [ReLossKind::Atl, ReLossKind::Bce] {
            let (ecfg, ccfg, p, tok) = toy_setup(2);
            let pairs = vec![(0, 1), (1, 0), (2, 1)];
            let labels = vec![
                label_row(4, &rels(&[1, 3])),
                label_row(4, &rels(&[])),
                label_row(4, &rels(&[2])),
            ];
            let build = |g: &mut Graph, p: &ParamSet| -> Result<Var> {
                let enc = encoder::encode_on(g, &tok, p, &ecfg)?;
                let vars = forward_pairs(g, enc, &tok, &pairs, p, &ccfg)?;
                re_loss_on(g, vars.logits, labels.clone(), kind)
            };
            let r = finite_difference_check(build, &without_key_bias(&p), 1e-5, &mut seeded_rng(7)).unwrap();
            assert!(r.max_rel_error < 1e-4, "{kind}: {r:?}");
        }
    }

    #[test]
    fn batched_loss_is_mean_of_pair_losses() {
        let y = Tensor::from_rows(&[vec![0.1, 0.5, -0.3], vec![-0.2, 0.0, 0.4]]);
        let labels = vec![label_row(3, &rels(&[1])), label_row(3, &rels(&[]))];
        let mut g = Graph::new();
        let v = g.constant(y.clone());
        let l = re_loss_on(&mut g, v, labels, ReLossKind::Atl).unwrap();
        let expected = 0.5
            * (atl_loss(&RelationScores { y: y.row(0).to_vec() }, &rels(&[1]))
                + atl_loss(&RelationScores { y: y.row(1).to_vec() }, &rels(&[])));
        assert_abs_diff_eq!(g.value(l).item(), expected, epsilon = 1e-14);
    }

    #[test]
    fn groups_must_divide_dim() {
        let cfg = ClassifierConfig { dim: 6, num_classes: 3, groups: 4 };
        assert!(init_params(&cfg, &mut seeded_rng(0), &mut ParamSet::new()).is_err());
    }

    #[test]
    fn parameter_count_closed_form() {
        let cfg = ClassifierConfig { dim: 8, num_classes: 6, groups: 4 };
        assert_eq!(parameter_count(&cfg), random_params(&cfg, 0).parameter_count());
    }
}
