//! Loop-based reference implementation of the forward pass, written against
//! plain `Vec`s and sharing no code with the library's tensor path.

#![allow(dead_code)]

use ecqg_core::model::ModelConfig;
use ecqg_core::params::ParamStore;

pub type M = Vec<Vec<f64>>;

pub fn mat(p: &ParamStore, name: &str) -> M {
    let t = p.get(name).unwrap();
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let flat: Vec<f64> = t.iter().copied().collect();
    (0..r).map(|i| flat[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn vector(p: &ParamStore, name: &str) -> Vec<f64> {
    p.get(name).unwrap().iter().copied().collect()
}

pub fn matmul(x: &M, w: &M) -> M {
    x.iter()
        .map(|row| (0..w[0].len()).map(|j| row.iter().enumerate().map(|(k, v)| v * w[k][j]).sum()).collect())
        .collect()
}

pub fn linear(p: &ParamStore, prefix: &str, x: &M) -> M {
    let w = mat(p, &format!("{prefix}.weight"));
    let b = vector(p, &format!("{prefix}.bias"));
    matmul(x, &w).into_iter().map(|r| r.iter().zip(&b).map(|(a, c)| a + c).collect()).collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

pub fn layer_norm(p: &ParamStore, prefix: &str, x: &M, eps: f64) -> M {
    let g = vector(p, &format!("{prefix}.gamma"));
    let b = vector(p, &format!("{prefix}.beta"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            r.iter().enumerate().map(|(k, v)| (v - mean) / (var + eps).sqrt() * g[k] + b[k]).collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Softmax over the entries where `keep` is true; others get 0.
pub fn softmax_masked(v: &[f64], keep: &[bool]) -> Vec<f64> {
    let max = v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; v.len()];
    }
    let e: Vec<f64> = v.iter().zip(keep).map(|(x, &k)| if k { (x - max).exp() } else { 0.0 }).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    softmax_masked(v, &vec![true; v.len()])
}

/// Multi-head attention for one sample; `keep(i, j)` says whether query `i` may see key `j`.
pub fn attention(
    p: &ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    q_in: &M,
    kv_in: &M,
    keep: &dyn Fn(usize, usize) -> bool,
) -> M {
    let q = linear(p, &format!("{prefix}.q"), q_in);
    let k = linear(p, &format!("{prefix}.k"), kv_in);
    let v = linear(p, &format!("{prefix}.v"), kv_in);
    let dh = cfg.d_model / cfg.n_heads;
    let mut out = vec![vec![0.0; cfg.d_model]; q.len()];
    for h in 0..cfg.n_heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mask: Vec<bool> = (0..k.len()).map(|j| keep(i, j)).collect();
            let a = softmax_masked(&scores, &mask);
            for c in cols.clone() {
                out[i][c] = (0..k.len()).map(|j| a[j] * v[j][c]).sum();
            }
        }
    }
    linear(p, &format!("{prefix}.o"), &out)
}

pub fn feed_forward(p: &ParamStore, prefix: &str, x: &M) -> M {
    let h: M = linear(p, &format!("{prefix}.in"), x).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    linear(p, &format!("{prefix}.out"), &h)
}

pub fn encoder_layer(p: &ParamStore, prefix: &str, cfg: &ModelConfig, x: &M, mask: &[u8]) -> M {
    let eps = cfg.layer_norm_eps;
    let a = layer_norm(p, &format!("{prefix}.ln1"), x, eps);
    let x = add(x, &attention(p, &format!("{prefix}.attn"), cfg, &a, &a, &|_, j| mask[j] == 1));
    let f = layer_norm(p, &format!("{prefix}.ln2"), &x, eps);
    add(&x, &feed_forward(p, &format!("{prefix}.ff"), &f))
}

fn embed(p: &ParamStore, ids: &[usize], pos: &str) -> M {
    let e = mat(p, "shared.embed");
    let pe = mat(p, pos);
    ids.iter().enumerate().map(|(t, &id)| e[id].iter().zip(&pe[t]).map(|(a, b)| a + b).collect()).collect()
}

pub fn encode(p: &ParamStore, cfg: &ModelConfig, ids: &[usize], mask: &[u8]) -> M {
    let mut x = embed(p, ids, "enc.pos");
    for l in 0..cfg.encoder_layers {
        x = encoder_layer(p, &format!("enc.layers.{l}"), cfg, &x, mask);
    }
    layer_norm(p, "enc.norm", &x, cfg.layer_norm_eps)
}

/// Class probabilities `[C][2]` of a classifier stack.
pub fn classify(p: &ParamStore, stack: &str, cfg: &ModelConfig, h: &M, mask: &[u8]) -> M {
    let mut x = linear(p, &format!("{stack}.in_proj"), h);
    for l in 0..cfg.classifier_layers {
        x = encoder_layer(p, &format!("{stack}.layers.{l}"), cfg, &x, mask);
    }
    let x = layer_norm(p, &format!("{stack}.norm"), &x, cfg.layer_norm_eps);
    linear(p, &format!("{stack}.head"), &x).iter().map(|r| softmax(r)).collect()
}

pub fn fuse(p: &ParamStore, h_c: &M, h_f: &M) -> M {
    let w = mat(p, "fusion.w_cf");
    let cat: M = h_c.iter().zip(h_f).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    matmul(&cat, &w)
}

/// Decoder hidden states and next-token distributions for one sample.
pub fn decode(
    p: &ParamStore,
    cfg: &ModelConfig,
    memory: &M,
    src_mask: &[u8],
    dec_in: &[usize],
    dec_mask: &[u8],
) -> (M, M) {
    let eps = cfg.layer_norm_eps;
    let mut y = embed(p, dec_in, "dec.pos");
    for l in 0..cfg.decoder_layers {
        let pre = format!("dec.layers.{l}");
        let a = layer_norm(p, &format!("{pre}.ln1"), &y, eps);
        y = add(&y, &attention(p, &format!("{pre}.self_attn"), cfg, &a, &a, &|i, j| j <= i && dec_mask[j] == 1));
        let a = layer_norm(p, &format!("{pre}.ln2"), &y, eps);
        y = add(&y, &attention(p, &format!("{pre}.cross_attn"), cfg, &a, memory, &|_, j| src_mask[j] == 1));
        let a = layer_norm(p, &format!("{pre}.ln3"), &y, eps);
        y = add(&y, &feed_forward(p, &format!("{pre}.ff"), &a));
    }
    let h_q = layer_norm(p, "dec.norm", &y, eps);
    let probs = linear(p, "dec.lm_head", &h_q).iter().map(|r| softmax(r)).collect();
    (h_q, probs)
}

/// Similarity matrix and question-aware context for one sample.
pub fn dual_attention(p: &ParamStore, h_c: &M, h_q: &M, src_mask: &[u8], q_mask: &[u8]) -> (M, M) {
    let w_s = vector(p, "qv.w_s");
    let d = h_c[0].len();
    let s: M = h_c
        .iter()
        .map(|hc| {
            h_q.iter()
                .map(|hq| (0..d).map(|k| w_s[k] * hc[k] + w_s[d + k] * hq[k] + w_s[2 * d + k] * hc[k] * hq[k]).sum())
                .collect()
        })
        .collect();
    let qkeep: Vec<bool> = q_mask.iter().map(|&m| m == 1).collect();
    let q_att: M = s
        .iter()
        .map(|row| {
            let a = softmax_masked(row, &qkeep);
            (0..d).map(|k| (0..h_q.len()).map(|j| a[j] * h_q[j][k]).sum()).collect()
        })
        .collect();
    let pooled: Vec<f64> = s
        .iter()
        .map(|row| row.iter().zip(&qkeep).filter(|(_, &k)| k).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let ckeep: Vec<bool> = src_mask.iter().map(|&m| m == 1).collect();
    let b = softmax_masked(&pooled, &ckeep);
    let c_att: Vec<f64> = (0..d).map(|k| (0..h_c.len()).map(|i| b[i] * h_c[i][k]).sum()).collect();
    let g: M = h_c
        .iter()
        .zip(&q_att)
        .map(|(hc, hq)| {
            let mut r = hc.clone();
            r.extend(hq);
            r.extend(hc.iter().zip(hq).map(|(a, b)| a * b));
            r.extend(hc.iter().zip(&c_att).map(|(a, b)| a * b));
            r
        })
        .collect();
    (s, matmul(&g, &mat(p, "qv.w_cq")))
}

/// Token cross-entropy terms: (sum of -log p over unmasked tokens, count).
pub fn token_ce_sum(probs: &M, bits: &[u8], mask: &[u8]) -> (f64, usize) {
    let mut s = 0.0;
    let mut n = 0;
    for i in 0..probs.len() {
        if mask[i] == 1 {
            s -= probs[i][if bits[i] == 1 { 0 } else { 1 }].ln();
            n += 1;
        }
    }
    (s, n)
}
