//! Pre-norm transformer encoder producing token embeddings `H` and an
//! averaged attention matrix `A`.
//!
//! `H` is the mean of the last `average_last_k` block outputs and `A` the
//! mean of the post-softmax attention of every head in those blocks. All
//! tokens attend to all tokens; one document is one forward pass.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedDocument;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, Rng, Tensor, Var};

/// Reserved name prefix of every encoder tensor in a [`ParamSet`].
pub const PREFIX: &str = "encoder.";

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub average_last_k: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.dim == 0 || self.layers == 0 || self.heads == 0 || self.ff_dim == 0 {
            return bad("dim, layers, heads and ff_dim must be positive");
        }
        if self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        if self.average_last_k == 0 {
            return bad("average_last_k must be positive");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        Ok(())
    }

    /// Layers actually averaged: `average_last_k` clamped to the depth.
    pub fn effective_k(&self) -> usize {
        self.average_last_k.min(self.layers)
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `|T| x d`
    pub h: Tensor,
    /// `|T| x |T|`, row-stochastic.
    pub a: Tensor,
}

/// Graph handles for [`EncoderOutput`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub h: Var,
    pub a: Var,
}

fn layer_name(l: usize, leaf: &str) -> String {
    format!("{PREFIX}layer{l}.{leaf}")
}

/// Closed-form count of trainable encoder scalars.
pub fn parameter_count(cfg: &EncoderConfig) -> usize {
    let d = cfg.dim;
    let f = cfg.ff_dim;
    let embeddings = cfg.vocab_size * d + cfg.max_len * d;
    let attention = 4 * (d * d + d);
    let norms = 2 * 2 * d;
    let ffn = d * f + f + f * d + d;
    embeddings + cfg.layers * (attention + norms + ffn)
}

/// Adds freshly initialized encoder tensors to `params`.
///
/// Positional embeddings start from a scaled sinusoidal table and remain
/// trainable.
pub fn init_params(cfg: &EncoderConfig, rng: &mut Rng, params: &mut ParamSet) -> Result<()> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut normal = |rows: usize, cols: usize, std: f64| -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Tensor::matrix(rows, cols, data).expect("sized")
    };

    params.insert(&format!("{PREFIX}tok_emb"), normal(cfg.vocab_size, d, 0.5), true)?;
    let mut pos = Vec::with_capacity(cfg.max_len * d);
    for p in 0..cfg.max_len {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = p as f64 * freq;
            pos.push(0.5 * if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    params.insert(&format!("{PREFIX}pos_emb"), Tensor::matrix(cfg.max_len, d, pos)?, true)?;

    let in_std = 1.0 / (d as f64).sqrt();
    let ff_std = 1.0 / (cfg.ff_dim as f64).sqrt();
    for l in 0..cfg.layers {
        for ln in ["ln1", "ln2"] {
            params.insert(&layer_name(l, &format!("{ln}.gain")), Tensor::filled(&[d], 1.0), true)?;
            params.insert(&layer_name(l, &format!("{ln}.bias")), Tensor::zeros(&[d]), true)?;
        }
        for (w, std) in [("wq", in_std), ("wk", in_std), ("wv", in_std), ("wo", 0.5 * in_std)] {
            params.insert(&layer_name(l, &format!("attn.{w}")), normal(d, d, std), true)?;
            let b = format!("attn.b{}", &w[1..]);
            params.insert(&layer_name(l, &b), Tensor::zeros(&[d]), true)?;
        }
        params.insert(&layer_name(l, "ffn.w1"), normal(cfg.ff_dim, d, in_std), true)?;
        params.insert(&layer_name(l, "ffn.b1"), Tensor::zeros(&[cfg.ff_dim]), true)?;
        params.insert(&layer_name(l, "ffn.w2"), normal(d, cfg.ff_dim, 0.5 * ff_std), true)?;
        params.insert(&layer_name(l, "ffn.b2"), Tensor::zeros(&[d]), true)?;
    }
    Ok(())
}

/// Training-time dropout on the embedding sum and on both residual branches.
/// Attention weights are never dropped, so `A` keeps its inference meaning.
pub struct Dropout {
    pub rate: f64,
    pub rng: Rng,
}

impl Dropout {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, mask)?)
    }
}

/// Records the inference-mode encoder forward pass on `g`.
pub fn encode_on(g: &mut Graph, tok: &TokenizedDocument, params: &ParamSet, cfg: &EncoderConfig) -> Result<EncoderVars> {
    encode_on_with(g, tok, params, cfg, None)
}

/// Records the encoder forward pass on `g`, optionally with dropout.
pub fn encode_on_with(
    g: &mut Graph,
    tok: &TokenizedDocument,
    params: &ParamSet,
    cfg: &EncoderConfig,
    mut dropout: Option<&mut Dropout>,
) -> Result<EncoderVars> {
    let mut drop = |g: &mut Graph, v: Var| -> Result<Var> {
        match dropout.as_deref_mut() {
            Some(d) => d.apply(g, v),
            None => Ok(v),
        }
    };
    let t = tok.len();
    if t > cfg.max_len {
        return Err(Error::SequenceTooLong { len: t, max: cfg.max_len });
    }
    let ids: Vec<usize> = tok.ids.iter().map(|&i| i as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Config(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    let tok_emb = g.param(params, &format!("{PREFIX}tok_emb"))?;
    let pos_emb = g.param(params, &format!("{PREFIX}pos_emb"))?;
    let x_tok = g.gather_rows(tok_emb, ids)?;
    let x_pos = g.gather_rows(pos_emb, (0..t).collect())?;
    let mut x = g.add(x_tok, x_pos)?;
    x = drop(g, x)?;

    let dh = cfg.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let first_kept = cfg.layers - cfg.effective_k();
    let mut hidden_sum: Option<Var> = None;
    let mut attn_sum: Option<Var> = None;
    let accumulate = |g: &mut Graph, slot: &mut Option<Var>, v: Var| -> Result<()> {
        *slot = Some(match *slot {
            None => v,
            Some(s) => g.add(s, v)?,
        });
        Ok(())
    };

    for l in 0..cfg.layers {
        let p = |g: &mut Graph, leaf: &str| g.param(params, &layer_name(l, leaf));
        let (gain1, bias1) = (p(g, "ln1.gain")?, p(g, "ln1.bias")?);
        let xn = g.layer_norm(x, gain1, bias1, LN_EPS)?;
        let (wq, bq) = (p(g, "attn.wq")?, p(g, "attn.bq")?);
        let (wk, bk) = (p(g, "attn.wk")?, p(g, "attn.bk")?);
        let (wv, bv) = (p(g, "attn.wv")?, p(g, "attn.bv")?);
        let q = g.linear(xn, wq, bq)?;
        let k = g.linear(xn, wk, bk)?;
        let v = g.linear(xn, wv, bv)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let qh = g.slice_cols(q, hd * dh, dh)?;
            let kh = g.slice_cols(k, hd * dh, dh)?;
            let vh = g.slice_cols(v, hd * dh, dh)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt);
            let att = g.softmax_rows(scores);
            if l >= first_kept {
                accumulate(g, &mut attn_sum, att)?;
            }
            heads.push(g.matmul(att, vh)?);
        }
        let merged = g.concat_cols(&heads)?;
        let (wo, bo) = (p(g, "attn.wo")?, p(g, "attn.bo")?);
        let attn_out = g.linear(merged, wo, bo)?;
        let attn_out = drop(g, attn_out)?;
        x = g.add(x, attn_out)?;

        let (gain2, bias2) = (p(g, "ln2.gain")?, p(g, "ln2.bias")?);
        let xn = g.layer_norm(x, gain2, bias2, LN_EPS)?;
        let (w1, b1) = (p(g, "ffn.w1")?, p(g, "ffn.b1")?);
        let (w2, b2) = (p(g, "ffn.w2")?, p(g, "ffn.b2")?);
        let hdn = g.linear(xn, w1, b1)?;
        let hdn = g.gelu(hdn);
        let ff = g.linear(hdn, w2, b2)?;
        let ff = drop(g, ff)?;
        x = g.add(x, ff)?;
        if l >= first_kept {
            accumulate(g, &mut hidden_sum, x)?;
        }
    }

    let k = cfg.effective_k() as f64;
    let h = g.scale(hidden_sum.expect("at least one layer kept"), 1.0 / k);
    let a = g.scale(attn_sum.expect("at least one layer kept"), 1.0 / (k * cfg.heads as f64));
    Ok(EncoderVars { h, a })
}

/// Inference-mode encoding.
pub fn encode(tok: &TokenizedDocument, params: &ParamSet, cfg: &EncoderConfig) -> Result<EncoderOutput> {
    let mut g = Graph::new();
    let vars = encode_on(&mut g, tok, params, cfg)?;
    Ok(EncoderOutput {
        h: g.value(vars.h).clone(),
        a: g.value(vars.a).clone(),
    })
}
