use std::collections::BTreeMap;

use crate::numerics::{ParamSet, Tensor};

/// Adam with decoupled weight decay. Each parameter's learning rate is picked
/// by [`AdamW::step`]'s `lr_of` callback so encoder and classifier can differ.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Biases, gains and embedding tables are not decayed.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>, lr_of: impl Fn(&str) -> f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let lr = lr_of(name);
            let decay = if decays(name) { self.weight_decay } else { 0.0 };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let p = params.get_mut(name).expect("gradient for a known parameter");
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *w -= lr * (update + decay * *w);
            }
        }
    }
}

fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    !(leaf == "bias" || (leaf.len() == 2 && leaf.starts_with('b')) || leaf.ends_with("_b") || leaf == "gain" || leaf.ends_with("emb"))
}

/// Linear warmup over the first `warmup_frac` of `total` steps, then linear
/// decay to zero. `step` counts from 0.
pub fn lr_factor(step: usize, total: usize, warmup_frac: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let warmup = (warmup_frac * total as f64).round() as usize;
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let rest = (total - warmup).max(1) as f64;
    ((total - step) as f64 / rest).clamp(0.0, 1.0)
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping. A non-positive `max_norm` disables clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
