use ndarray::{Array2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::params::{normal_tensor, ParamStore};

fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(IxDyn(shape))
}

fn ones(shape: &[usize]) -> Tensor {
    Tensor::ones(IxDyn(shape))
}

struct Init<'a> {
    rng: ChaCha8Rng,
    store: &'a mut ParamStore,
}

impl Init<'_> {
    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        self.store.insert(format!("{prefix}.weight"), normal_tensor(&mut self.rng, &[fan_in, fan_out], std));
        self.store.insert(format!("{prefix}.bias"), zeros(&[fan_out]));
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.store.insert(format!("{prefix}.gamma"), ones(&[d]));
        self.store.insert(format!("{prefix}.beta"), zeros(&[d]));
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, d_ff: usize) {
        self.linear(&format!("{prefix}.in"), d, d_ff);
        self.linear(&format!("{prefix}.out"), d_ff, d);
    }

    fn encoder_layer(&mut self, prefix: &str, cfg: &ModelConfig) {
        let d = cfg.d_model;
        self.norm(&format!("{prefix}.ln1"), d);
        self.attention(&format!("{prefix}.attn"), d);
        self.norm(&format!("{prefix}.ln2"), d);
        self.ffn(&format!("{prefix}.ff"), d, cfg.d_ff);
    }

    fn classifier(&mut self, prefix: &str, cfg: &ModelConfig) {
        let d = cfg.d_model;
        self.linear(&format!("{prefix}.in_proj"), d, d);
        for i in 0..cfg.classifier_layers {
            self.encoder_layer(&format!("{prefix}.layers.{i}"), cfg);
        }
        self.norm(&format!("{prefix}.norm"), d);
        self.linear(&format!("{prefix}.head"), d, 2);
    }
}

/// Fresh parameters for every module. `w_cf` starts as identity atop zeros
/// plus small noise so the focus path begins as a near pass-through.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.d_model;
    let mut store = ParamStore::new();
    let mut it = Init { rng: ChaCha8Rng::seed_from_u64(seed), store: &mut store };
    let emb = normal_tensor(&mut it.rng, &[cfg.vocab_size, d], 1.0);
    it.store.insert("shared.embed", emb);
    let pos = normal_tensor(&mut it.rng, &[cfg.max_source_len, d], 0.1);
    it.store.insert("enc.pos", pos);
    for i in 0..cfg.encoder_layers {
        it.encoder_layer(&format!("enc.layers.{i}"), cfg);
    }
    it.norm("enc.norm", d);

    let pos = normal_tensor(&mut it.rng, &[cfg.max_target_len, d], 0.1);
    it.store.insert("dec.pos", pos);
    for i in 0..cfg.decoder_layers {
        let p = format!("dec.layers.{i}");
        it.norm(&format!("{p}.ln1"), d);
        it.attention(&format!("{p}.self_attn"), d);
        it.norm(&format!("{p}.ln2"), d);
        it.attention(&format!("{p}.cross_attn"), d);
        it.norm(&format!("{p}.ln3"), d);
        it.ffn(&format!("{p}.ff"), d, cfg.d_ff);
    }
    it.norm("dec.norm", d);
    it.linear("dec.lm_head", d, cfg.vocab_size);

    it.classifier("focus", cfg);
    it.classifier("answer", cfg);

    let mut w_cf = Array2::<f64>::zeros((d + 2, d));
    for k in 0..d {
        w_cf[[k, k]] = 1.0;
    }
    let noise = normal_tensor(&mut it.rng, &[d + 2, d], 0.02);
    it.store.insert("fusion.w_cf", w_cf.into_dyn() + noise);
    let w_s = normal_tensor(&mut it.rng, &[3 * d], (1.0 / (3 * d) as f64).sqrt());
    it.store.insert("qv.w_s", w_s);
    let w_cq = normal_tensor(&mut it.rng, &[4 * d, d], (2.0 / (5 * d) as f64).sqrt());
    it.store.insert("qv.w_cq", w_cq);
    Ok(store)
}

/// Overlays pretrained tensors onto a fresh initialisation. Every tensor in
/// `pretrained` must match an existing name and shape. Unless the config asks
/// for fresh classifiers, classifier layer `i` starts as a copy of encoder layer `i`.
pub fn with_pretrained(cfg: &ModelConfig, pretrained: &ParamStore, seed: u64) -> Result<ParamStore> {
    let mut store = init_params(cfg, seed)?;
    for (name, t) in pretrained.iter() {
        let slot = store
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("pretrained tensor {name} has no counterpart")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "pretrained tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    if !cfg.classifier_fresh_init {
        let copies: Vec<(String, Tensor)> = store
            .iter()
            .filter_map(|(name, t)| {
                let rest = name.strip_prefix("enc.layers.")?;
                let layer: usize = rest.split('.').next()?.parse().ok()?;
                (layer < cfg.classifier_layers).then(|| (rest.to_string(), t.clone()))
            })
            .collect();
        for (rest, t) in copies {
            for stack in ["focus", "answer"] {
                store.insert(format!("{stack}.layers.{rest}"), t.clone());
            }
        }
    }
    Ok(store)
}

/// Parameter-name predicates for the groups exercised by the gradient checker.
pub fn component_filter(component: &str) -> Option<fn(&str) -> bool> {
    Some(match component {
        "fusion" => |n: &str| n == "fusion.w_cf",
        "similarity" => |n: &str| n == "qv.w_s",
        "dual_fusion" => |n: &str| n == "qv.w_cq",
        "cf_head" => |n: &str| n.starts_with("focus."),
        "qv_head" => |n: &str| n.starts_with("answer."),
        "all" => |_: &str| true,
        _ => return None,
    })
}
