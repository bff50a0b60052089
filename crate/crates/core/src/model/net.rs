use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::{Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{to_mask, TokenBatch};
use super::config::{check_lambda, Mode, ModelConfig, Objective};
use super::init::init_params;
use super::loss::{nll_from_log, per_row, row3, token_ce_from_log, LossParts};
use crate::autograd::{concat_last, Graph, Mask, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Output of a two-class token classifier stack.
#[derive(Debug, Clone, Copy)]
pub struct Classified<'g> {
    pub logits: Var<'g>,
    pub probs: Var<'g>,
    pub log_probs: Var<'g>,
}

#[derive(Debug, Clone, Copy)]
pub struct Decoded<'g> {
    /// Final decoder hidden states `[B, Q, d]`.
    pub h_q: Var<'g>,
    pub logits: Var<'g>,
    pub log_probs: Var<'g>,
}

/// Key-padding mask `[B, tq, tk]`, optionally causal.
fn attention_mask(keys: &[Vec<u8>], tq: usize, causal: bool) -> Mask {
    let b = keys.len();
    let tk = keys.first().map_or(0, Vec::len);
    Mask::from_shape_fn(IxDyn(&[b, tq, tk]), |ix| keys[ix[0]][ix[2]] == 1 && (!causal || ix[2] <= ix[1]))
}

pub(crate) struct Net<'g, 'a> {
    g: &'g Graph,
    params: &'a ParamStore,
    cfg: &'a ModelConfig,
    rng: RefCell<Option<ChaCha8Rng>>,
}

impl<'g, 'a> Net<'g, 'a> {
    pub fn new(g: &'g Graph, params: &'a ParamStore, cfg: &'a ModelConfig, dropout_seed: Option<u64>) -> Self {
        Self { g, params, cfg, rng: RefCell::new(dropout_seed.map(ChaCha8Rng::seed_from_u64)) }
    }

    fn p(&self, name: &str) -> Result<Var<'g>> {
        Ok(self.g.param(name, self.params.get(name)?))
    }

    fn linear(&self, x: Var<'g>, prefix: &str) -> Result<Var<'g>> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        Ok(x.matmul(w).add(b))
    }

    fn norm(&self, x: Var<'g>, prefix: &str) -> Result<Var<'g>> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        Ok(x.normalize(self.cfg.layer_norm_eps).mul(gamma).add(beta))
    }

    fn dropout(&self, x: Var<'g>) -> Var<'g> {
        let p = self.cfg.dropout;
        let mut rng = self.rng.borrow_mut();
        match rng.as_mut() {
            Some(r) if p > 0.0 => {
                let keep = 1.0 - p;
                let m = Tensor::from_shape_simple_fn(IxDyn(&x.shape()), || {
                    if r.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                x.mul(self.g.constant(m))
            }
            _ => x,
        }
    }

    /// Multi-head scaled dot-product attention; `mask` is `[B, tq, tk]`.
    fn attention(&self, prefix: &str, q_in: Var<'g>, kv_in: Var<'g>, mask: &Mask) -> Result<Var<'g>> {
        let (h, d) = (self.cfg.n_heads, self.cfg.d_model);
        let dh = d / h;
        let (b, tq, tk) = (mask.shape()[0], mask.shape()[1], mask.shape()[2]);
        let heads = |x: Var<'g>, t: usize| x.reshape(&[b, t, h, dh]).permute(&[0, 2, 1, 3]);
        let q = heads(self.linear(q_in, &format!("{prefix}.q"))?, tq);
        let k = heads(self.linear(kv_in, &format!("{prefix}.k"))?, tk);
        let v = heads(self.linear(kv_in, &format!("{prefix}.v"))?, tk);
        let scores = q.bmm(k, true).scale(1.0 / (dh as f64).sqrt());
        let m4 = mask.view().insert_axis(Axis(1)).broadcast(IxDyn(&[b, h, tq, tk])).expect("mask broadcast").to_owned();
        let probs = self.dropout(scores.softmax(Some(&m4)));
        let out = probs.bmm(v, false).permute(&[0, 2, 1, 3]).reshape(&[b, tq, d]);
        self.linear(out, &format!("{prefix}.o"))
    }

    fn feed_forward(&self, prefix: &str, x: Var<'g>) -> Result<Var<'g>> {
        let hidden = self.linear(x, &format!("{prefix}.in"))?.gelu();
        self.linear(hidden, &format!("{prefix}.out"))
    }

    fn encoder_layer(&self, prefix: &str, x: Var<'g>, mask: &Mask) -> Result<Var<'g>> {
        let a = self.norm(x, &format!("{prefix}.ln1"))?;
        let x = x.add(self.dropout(self.attention(&format!("{prefix}.attn"), a, a, mask)?));
        let f = self.norm(x, &format!("{prefix}.ln2"))?;
        Ok(x.add(self.dropout(self.feed_forward(&format!("{prefix}.ff"), f)?)))
    }

    fn positions(&self, table: &str, n: usize) -> Result<Var<'g>> {
        let t = self.p(table)?;
        let cap = t.shape()[0];
        if n > cap {
            return Err(Error::Contract(format!("sequence of {n} tokens exceeds the limit of {cap}")));
        }
        Ok(t.embedding(&(0..n).collect::<Vec<_>>(), &[n]))
    }

    fn embed(&self, ids: &[Vec<usize>], pos_table: &str) -> Result<Var<'g>> {
        let (b, t) = (ids.len(), ids.first().map_or(0, Vec::len));
        let flat: Vec<usize> = ids.iter().flatten().copied().collect();
        if let Some(&bad) = flat.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::Contract(format!("token id {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        let tok = self.p("shared.embed")?.embedding(&flat, &[b, t]);
        Ok(self.dropout(tok.add(self.positions(pos_table, t)?)))
    }

    pub fn encode(&self, input_ids: &[Vec<usize>], src_mask: &[Vec<u8>]) -> Result<Var<'g>> {
        let c = input_ids.first().map_or(0, Vec::len);
        let mask = attention_mask(src_mask, c, false);
        let mut x = self.embed(input_ids, "enc.pos")?;
        for i in 0..self.cfg.encoder_layers {
            x = self.encoder_layer(&format!("enc.layers.{i}"), x, &mask)?;
        }
        self.norm(x, "enc.norm")
    }

    /// Transformer encoder stack over continuous inputs plus a 2-class head.
    pub fn classify(&self, stack: &str, h: Var<'g>, src_mask: &[Vec<u8>]) -> Result<Classified<'g>> {
        let c = h.shape()[1];
        let mask = attention_mask(src_mask, c, false);
        let mut x = self.linear(h, &format!("{stack}.in_proj"))?;
        for i in 0..self.cfg.classifier_layers {
            x = self.encoder_layer(&format!("{stack}.layers.{i}"), x, &mask)?;
        }
        let x = self.norm(x, &format!("{stack}.norm"))?;
        let logits = self.linear(x, &format!("{stack}.head"))?;
        Ok(Classified { logits, probs: logits.softmax(None), log_probs: logits.log_softmax() })
    }

    pub fn fuse(&self, h_c: Var<'g>, h_f: Var<'g>) -> Result<Var<'g>> {
        let (sc, sf) = (h_c.shape(), h_f.shape());
        if sc.len() != 3 || sf.len() != 3 || sc[..2] != sf[..2] || sf[2] != 2 {
            return Err(Error::Shape(format!("cannot fuse {sc:?} with {sf:?}")));
        }
        Ok(concat_last(&[h_c, h_f]).matmul(self.p("fusion.w_cf")?))
    }

    /// Decoder over `dec_in` attending to `memory`; `dec_mask` marks valid target positions.
    pub fn decode(
        &self,
        memory: Var<'g>,
        src_mask: &[Vec<u8>],
        dec_in: &[Vec<usize>],
        dec_mask: &[Vec<u8>],
    ) -> Result<Decoded<'g>> {
        let q = dec_in.first().map_or(0, Vec::len);
        let self_mask = attention_mask(dec_mask, q, true);
        let cross_mask = attention_mask(src_mask, q, false);
        let mut y = self.embed(dec_in, "dec.pos")?;
        for i in 0..self.cfg.decoder_layers {
            let p = format!("dec.layers.{i}");
            let a = self.norm(y, &format!("{p}.ln1"))?;
            y = y.add(self.dropout(self.attention(&format!("{p}.self_attn"), a, a, &self_mask)?));
            let a = self.norm(y, &format!("{p}.ln2"))?;
            y = y.add(self.dropout(self.attention(&format!("{p}.cross_attn"), a, memory, &cross_mask)?));
            let a = self.norm(y, &format!("{p}.ln3"))?;
            y = y.add(self.dropout(self.feed_forward(&format!("{p}.ff"), a)?));
        }
        let h_q = self.norm(y, "dec.norm")?;
        let logits = self.linear(h_q, "dec.lm_head")?;
        Ok(Decoded { h_q, logits, log_probs: logits.log_softmax() })
    }

    /// Context-question similarity, two-way attention and the 4d -> d fusion.
    pub fn dual_attention(
        &self,
        h_c: Var<'g>,
        h_q: Var<'g>,
        src_mask: &[Vec<u8>],
        q_mask: &[Vec<u8>],
    ) -> Result<(Var<'g>, Var<'g>)> {
        let (sc, sq) = (h_c.shape(), h_q.shape());
        if sc.len() != 3 || sq.len() != 3 || sc[0] != sq[0] || sc[2] != sq[2] {
            return Err(Error::Shape(format!("dual attention over {sc:?} and {sq:?}")));
        }
        let (b, c, d) = (sc[0], sc[1], sc[2]);
        let q = sq[1];
        if let Some(row) = q_mask.iter().position(|r| !r.contains(&1)) {
            return Err(Error::Input(format!("row {row}: every question position is masked")));
        }
        let w_s = self.p("qv.w_s")?;
        let w1 = w_s.slice_last(0, d).reshape(&[d, 1]);
        let w2 = w_s.slice_last(d, 2 * d).reshape(&[d, 1]);
        let w3 = w_s.slice_last(2 * d, 3 * d);
        let s = h_c.mul(w3).bmm(h_q, true).add(h_c.matmul(w1)).add(h_q.matmul(w2).reshape(&[b, 1, q]));

        let qm = to_mask(q_mask);
        let row_mask = qm.view().insert_axis(Axis(1)).broadcast(IxDyn(&[b, c, q])).unwrap().to_owned();
        let a = s.softmax(Some(&row_mask));
        let q_att = a.bmm(h_q, false);

        let pooled = s.max_last(Some(&row_mask));
        let beta = pooled.softmax(Some(&to_mask(src_mask)));
        let c_att = beta.reshape(&[b, 1, c]).bmm(h_c, false).reshape(&[b, d]).expand(1, c);

        let g = concat_last(&[h_c, q_att, h_c.mul(q_att), h_c.mul(c_att)]);
        Ok((s, g.matmul(self.p("qv.w_cq")?)))
    }
}

/// Graph handles of one complete forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward<'g> {
    pub h_c: Var<'g>,
    pub focus: Option<Classified<'g>>,
    pub h_cf: Var<'g>,
    pub decoded: Decoded<'g>,
    pub similarity: Option<Var<'g>>,
    pub h_cq: Option<Var<'g>>,
    pub answer: Option<Classified<'g>>,
    pub l_qg: Var<'g>,
    pub l_cf: Option<Var<'g>>,
    pub l_qv: Option<Var<'g>>,
    pub lambda1: Var<'g>,
    pub lambda2: Var<'g>,
    pub total: Var<'g>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub parts: LossParts,
    pub total: f64,
}

/// Materialised values of a forward pass. Tensors of inactive modules are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs {
    pub h_c: Tensor,
    pub h_f: Option<Tensor>,
    pub h_cf: Tensor,
    pub h_q: Tensor,
    pub p_q: Tensor,
    pub s: Option<Tensor>,
    pub h_cq: Option<Tensor>,
    pub h_a: Option<Tensor>,
    pub loss_parts: LossParts,
    pub loss_total: f64,
    pub per_sample: Vec<SampleLoss>,
}

/// Result of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub parts: LossParts,
    pub total: f64,
    pub grads: BTreeMap<String, Tensor>,
    /// d total / d lambda1 and d total / d lambda2 (absent for inactive terms).
    pub d_lambda1: Option<f64>,
    pub d_lambda2: Option<f64>,
}

/// Token-level cross-entropy as a graph node; see [`super::loss::token_ce_from_log`].
pub fn token_ce_var<'g>(log_probs: Var<'g>, bits: &[Vec<u8>], mask: &[Vec<u8>], literal: bool) -> Result<Var<'g>> {
    let shape = log_probs.shape();
    let (b, c) = (shape[0], shape[1]);
    let n = mask.iter().flatten().filter(|&&m| m == 1).count();
    if n == 0 {
        return Err(Error::Input("every token is masked; the token loss is undefined".into()));
    }
    let mut w = Tensor::zeros(IxDyn(&[b, c, 2]));
    for i in 0..b {
        for j in 0..c {
            if mask[i][j] == 0 {
                continue;
            }
            if literal {
                w[[i, j, 0]] = -f64::from(bits[i][j]) / b as f64;
            } else {
                w[[i, j, if bits[i][j] == 1 { 0 } else { 1 }]] = -1.0 / n as f64;
            }
        }
    }
    Ok(log_probs.weighted_sum(&w))
}

/// Mean negative log-likelihood of gold ids as a graph node.
pub fn nll_var<'g>(log_probs: Var<'g>, ids: &[Vec<usize>], mask: &[Vec<u8>]) -> Result<Var<'g>> {
    let m = mask.iter().flatten().filter(|&&x| x == 1).count();
    if m == 0 {
        return Err(Error::Input("no unmasked question token".into()));
    }
    let (b, q) = (ids.len(), ids.first().map_or(0, Vec::len));
    let picked = log_probs.gather_last(&ids.iter().flatten().copied().collect::<Vec<_>>());
    let w = Tensor::from_shape_fn(IxDyn(&[b, q]), |ix| -f64::from(mask[ix[0]][ix[1]]) / m as f64);
    Ok(picked.weighted_sum(&w))
}

/// The full model: configuration, parameters, and the training mode that
/// decides whether inference runs through the focus path.
#[derive(Debug, Clone, PartialEq)]
pub struct EcqgModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub mode: Mode,
}

impl EcqgModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params, mode: Mode::Full })
    }

    pub(crate) fn net<'g, 'a>(&'a self, g: &'g Graph, dropout_seed: Option<u64>) -> Net<'g, 'a> {
        Net::new(g, &self.params, &self.config, dropout_seed)
    }

    fn check(&self, batch: &TokenBatch) -> Result<()> {
        batch.validate(self.config.max_source_len, self.config.max_target_len, self.config.vocab_size)
    }

    pub fn encode<'g>(&self, g: &'g Graph, batch: &TokenBatch) -> Result<Var<'g>> {
        self.check(batch)?;
        self.net(g, None).encode(&batch.input_ids, &batch.attention_mask)
    }

    pub fn focus_locate<'g>(&self, g: &'g Graph, h_c: Var<'g>, src_mask: &[Vec<u8>]) -> Result<Classified<'g>> {
        self.net(g, None).classify("focus", h_c, src_mask)
    }

    pub fn fuse<'g>(&self, g: &'g Graph, h_c: Var<'g>, h_f: Var<'g>) -> Result<Var<'g>> {
        self.net(g, None).fuse(h_c, h_f)
    }

    /// Teacher-forced decoding of the batch's gold questions.
    pub fn qg_forward<'g>(&self, g: &'g Graph, h_cf: Var<'g>, batch: &TokenBatch) -> Result<Decoded<'g>> {
        self.check(batch)?;
        self.net(g, None).decode(h_cf, &batch.attention_mask, &batch.decoder_input(), &batch.question_mask)
    }

    pub fn dual_attention<'g>(
        &self,
        g: &'g Graph,
        h_c: Var<'g>,
        h_q: Var<'g>,
        src_mask: &[Vec<u8>],
        q_mask: &[Vec<u8>],
    ) -> Result<(Var<'g>, Var<'g>)> {
        self.net(g, None).dual_attention(h_c, h_q, src_mask, q_mask)
    }

    pub fn answer_infer<'g>(&self, g: &'g Graph, h_cq: Var<'g>, src_mask: &[Vec<u8>]) -> Result<Classified<'g>> {
        self.net(g, None).classify("answer", h_cq, src_mask)
    }

    /// Records one forward pass. `dropout_seed = None` is evaluation mode.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        batch: &TokenBatch,
        objective: &Objective,
        dropout_seed: Option<u64>,
    ) -> Result<Forward<'g>> {
        self.check(batch)?;
        check_lambda(objective.lambda1, objective.lambda2)?;
        let net = self.net(g, dropout_seed);
        let mode = objective.mode;
        let literal = self.config.literal_positive_only;
        let mask = &batch.attention_mask;

        let h_c = net.encode(&batch.input_ids, mask)?;
        let focus = match mode.uses_focus() {
            true => Some(net.classify("focus", h_c, mask)?),
            false => None,
        };
        let h_cf = match focus {
            Some(f) => net.fuse(h_c, if self.config.fusion_use_logits { f.logits } else { f.probs })?,
            None => h_c,
        };
        let decoded = net.decode(h_cf, mask, &batch.decoder_input(), &batch.question_mask)?;
        let l_qg = nll_var(decoded.log_probs, &batch.question_ids, &batch.question_mask)?;

        let (similarity, h_cq, answer) = if mode.uses_verification() {
            let (s, h_cq) = net.dual_attention(h_c, decoded.h_q, mask, &batch.question_mask)?;
            let a = net.classify("answer", h_cq, mask)?;
            (Some(s), Some(h_cq), Some(a))
        } else {
            (None, None, None)
        };

        let l_cf = focus.map(|f| token_ce_var(f.log_probs, &batch.focus_bits, mask, literal)).transpose()?;
        let l_qv = answer.map(|a| token_ce_var(a.log_probs, &batch.answer_bits, mask, literal)).transpose()?;
        let lambda1 = g.leaf(Tensor::from_elem(IxDyn(&[]), objective.lambda1));
        let lambda2 = g.leaf(Tensor::from_elem(IxDyn(&[]), objective.lambda2));
        let mut total = l_qg;
        if let Some(l) = l_cf {
            total = total.add(l.mul(lambda1));
        }
        if let Some(l) = l_qv {
            total = total.add(l.mul(lambda2));
        }
        Ok(Forward { h_c, focus, h_cf, decoded, similarity, h_cq, answer, l_qg, l_cf, l_qv, lambda1, lambda2, total })
    }

    /// Evaluation-mode forward pass under `objective.mode`, fully materialised.
    pub fn ablation_forward(&self, batch: &TokenBatch, objective: &Objective) -> Result<ForwardOutputs> {
        let g = Graph::new();
        let f = self.forward(&g, batch, objective, None)?;
        self.materialise(&f, batch, objective)
    }

    fn materialise(&self, f: &Forward<'_>, batch: &TokenBatch, objective: &Objective) -> Result<ForwardOutputs> {
        let literal = self.config.literal_positive_only;
        let parts = LossParts { qg: f.l_qg.item(), cf: f.l_cf.map(|v| v.item()), qv: f.l_qv.map(|v| v.item()) };
        let logp_q = f.decoded.log_probs.value();
        let logp_f = f.focus.map(|c| c.log_probs.value());
        let logp_a = f.answer.map(|c| c.log_probs.value());
        let mut per_sample = Vec::with_capacity(batch.batch_size());
        for i in 0..batch.batch_size() {
            let mask = per_row(&batch.attention_mask, i);
            let qg =
                nll_from_log(row3(&logp_q, i)?, &per_row(&batch.question_ids, i), &per_row(&batch.question_mask, i))?;
            let cf = logp_f
                .as_ref()
                .map(|t| token_ce_from_log(row3(t, i)?, &per_row(&batch.focus_bits, i), &mask, literal))
                .transpose()?;
            let qv = logp_a
                .as_ref()
                .map(|t| token_ce_from_log(row3(t, i)?, &per_row(&batch.answer_bits, i), &mask, literal))
                .transpose()?;
            let p = LossParts { qg, cf, qv };
            per_sample.push(SampleLoss { parts: p, total: p.total(objective.lambda1, objective.lambda2) });
        }
        Ok(ForwardOutputs {
            h_c: f.h_c.value(),
            h_f: f.focus.map(|c| c.probs.value()),
            h_cf: f.h_cf.value(),
            h_q: f.decoded.h_q.value(),
            p_q: logp_q.mapv(f64::exp),
            s: f.similarity.map(|v| v.value()),
            h_cq: f.h_cq.map(|v| v.value()),
            h_a: f.answer.map(|c| c.probs.value()),
            loss_parts: parts,
            loss_total: f.total.item(),
            per_sample,
        })
    }

    /// Forward and backward; gradients cover only parameters on the active path.
    pub fn loss_and_grads(
        &self,
        batch: &TokenBatch,
        objective: &Objective,
        dropout_seed: Option<u64>,
    ) -> Result<StepResult> {
        let g = Graph::new();
        let f = self.forward(&g, batch, objective, dropout_seed)?;
        let grads = g.backward(f.total);
        let d = |v: Var<'_>| grads.get(v).map(|t| *t.first().unwrap());
        Ok(StepResult {
            parts: LossParts { qg: f.l_qg.item(), cf: f.l_cf.map(|v| v.item()), qv: f.l_qv.map(|v| v.item()) },
            total: f.total.item(),
            d_lambda1: f.l_cf.and(d(f.lambda1)),
            d_lambda2: f.l_qv.and(d(f.lambda2)),
            grads: grads.params(),
        })
    }

    /// Evaluation-mode loss only.
    pub fn loss(&self, batch: &TokenBatch, objective: &Objective) -> Result<(LossParts, f64)> {
        let g = Graph::new();
        let f = self.forward(&g, batch, objective, None)?;
        Ok((
            LossParts { qg: f.l_qg.item(), cf: f.l_cf.map(|v| v.item()), qv: f.l_qv.map(|v| v.item()) },
            f.total.item(),
        ))
    }
}
