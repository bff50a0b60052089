use std::cmp::Ordering;

use ndarray::{Axis, IxDyn};
use serde::{Deserialize, Serialize};

use super::batch::encode_source;
use super::net::EcqgModel;
use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, BOS, EOS, PAD, SEP, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub strategy: Strategy,
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { strategy: Strategy::Beam(4), max_len: 32 }
    }
}

impl DecodeOptions {
    pub fn greedy(max_len: usize) -> Self {
        Self { strategy: Strategy::Greedy, max_len }
    }
}

/// Tokens that can never be emitted.
const BANNED: [usize; 4] = [PAD, UNK, BOS, SEP];

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    score: f64,
}

fn by_score(a: &Hyp, b: &Hyp) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens))
}

impl EcqgModel {
    /// Encoder memory `[1, C, d]` used by the decoder: the focus-aware
    /// representation when the model was trained with the focus path.
    fn memory(&self, input_ids: &[usize]) -> Result<Tensor> {
        let g = Graph::new();
        let net = self.net(&g, None);
        let ids = vec![input_ids.to_vec()];
        let mask = vec![vec![1u8; input_ids.len()]];
        let h_c = net.encode(&ids, &mask)?;
        let h_cf = if self.mode.uses_focus() {
            let f = net.classify("focus", h_c, &mask)?;
            net.fuse(h_c, if self.config.fusion_use_logits { f.logits } else { f.probs })?
        } else {
            h_c
        };
        Ok(h_cf.value())
    }

    /// Next-token log-probabilities for each prefix (all prefixes share a length).
    fn step(&self, memory: &Tensor, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let k = prefixes.len();
        let (c, d) = (memory.shape()[1], memory.shape()[2]);
        let mem =
            memory.broadcast(IxDyn(&[k, c, d])).ok_or_else(|| Error::Shape("memory broadcast".into()))?.to_owned();
        let g = Graph::new();
        let net = self.net(&g, None);
        let t = prefixes[0].len();
        let out = net.decode(g.constant(mem), &vec![vec![1u8; c]; k], prefixes, &vec![vec![1u8; t]; k])?;
        let lp = out.log_probs.value();
        Ok(lp.axis_iter(Axis(0)).map(|row| row.index_axis(Axis(0), t - 1).iter().copied().collect()).collect())
    }

    /// Generates question ids (without `<bos>`/`<eos>`) from encoded source ids.
    pub fn generate_ids(&self, input_ids: &[usize], opts: &DecodeOptions) -> Result<Vec<usize>> {
        if opts.max_len == 0 {
            return Err(Error::Input("max_len must be at least 1".into()));
        }
        let max_len = opts.max_len.min(self.config.max_target_len);
        let memory = self.memory(input_ids)?;
        let masked = |lp: &mut Vec<f64>| {
            for &b in &BANNED {
                lp[b] = f64::NEG_INFINITY;
            }
        };
        match opts.strategy {
            Strategy::Greedy => {
                let mut prefix = vec![BOS];
                let mut out = Vec::new();
                for _ in 0..max_len {
                    let mut lp = self.step(&memory, std::slice::from_ref(&prefix))?.remove(0);
                    masked(&mut lp);
                    let tok = argmax(&lp);
                    if tok == EOS {
                        break;
                    }
                    out.push(tok);
                    prefix.push(tok);
                }
                Ok(out)
            }
            Strategy::Beam(size) => {
                if size == 0 {
                    return Err(Error::Input("beam size must be at least 1".into()));
                }
                let mut alive = vec![Hyp { tokens: vec![BOS], score: 0.0 }];
                let mut finished: Vec<Hyp> = Vec::new();
                for _ in 0..max_len {
                    let prefixes: Vec<Vec<usize>> = alive.iter().map(|h| h.tokens.clone()).collect();
                    let lps = self.step(&memory, &prefixes)?;
                    let mut cands = Vec::new();
                    for (h, mut lp) in alive.iter().zip(lps) {
                        masked(&mut lp);
                        for (tok, &l) in lp.iter().enumerate() {
                            if l.is_finite() {
                                let mut tokens = h.tokens.clone();
                                tokens.push(tok);
                                cands.push(Hyp { tokens, score: h.score + l });
                            }
                        }
                    }
                    cands.sort_by(by_score);
                    alive.clear();
                    for h in cands.into_iter().take(size) {
                        if *h.tokens.last().unwrap() == EOS {
                            finished.push(h);
                        } else {
                            alive.push(h);
                        }
                    }
                    if alive.is_empty() || finished.len() >= size {
                        break;
                    }
                }
                finished.extend(alive);
                let best = finished
                    .into_iter()
                    .map(|h| {
                        let n = (h.tokens.len() - 1) as f64;
                        Hyp { score: h.score / n, tokens: h.tokens }
                    })
                    .min_by(by_score)
                    .expect("at least one hypothesis");
                Ok(best.tokens[1..].iter().copied().filter(|&t| t != EOS).collect())
            }
        }
    }

    /// Generates a question about `entity` from `context`.
    pub fn generate(&self, vocab: &Vocab, entity: &str, context: &str, opts: &DecodeOptions) -> Result<String> {
        if context.trim().is_empty() {
            return Err(Error::Input("context is empty".into()));
        }
        let (ids, _) = encode_source(vocab, entity, context, self.config.max_source_len)?;
        Ok(vocab.decode(&self.generate_ids(&ids, opts)?))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
