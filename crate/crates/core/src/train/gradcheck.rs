use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{component_filter, EcqgModel, Mode, ModelConfig, Objective, TokenBatch};
use crate::tokenizer::{EOS, SEP, SPECIALS};

pub const COMPONENTS: [&str; 6] = ["fusion", "similarity", "dual_fusion", "cf_head", "qv_head", "all"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub d_model: usize,
    pub vocab_size: usize,
    pub batch_size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub mode: Mode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seeds: Vec<u64>,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding compare by absolute error.
    pub denominator_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            d_model: 4,
            vocab_size: 12,
            batch_size: 2,
            src_len: 6,
            tgt_len: 4,
            mode: Mode::Full,
            lambda1: 0.15,
            lambda2: 0.15,
            seeds: (0..5).collect(),
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub component: String,
    pub step: f64,
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    /// Worst case over seeds, per parameter.
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    /// ∂loss_total/∂λ equals the matching loss term bit for bit.
    pub lambda_exact: bool,
    pub passed: bool,
}

/// A random well-formed batch: entity token, separator, context; the
/// question ends in EOS; one contiguous answer span.
pub fn toy_batch(rng: &mut impl Rng, b: usize, src_len: usize, tgt_len: usize, vocab_size: usize) -> TokenBatch {
    let word = |rng: &mut dyn rand::RngCore| rng.random_range(SPECIALS.len()..vocab_size);
    let mut batch = TokenBatch {
        input_ids: vec![],
        attention_mask: vec![],
        focus_bits: vec![],
        answer_bits: vec![],
        question_ids: vec![],
        question_mask: vec![],
        ids: vec![],
    };
    for i in 0..b {
        let len = rng.random_range(3.min(src_len)..=src_len);
        let qlen = rng.random_range(1..=tgt_len);
        let mut ids = vec![0; src_len];
        for (j, id) in ids.iter_mut().enumerate().take(len) {
            *id = if j == 1 { SEP } else { word(rng) };
        }
        let start = rng.random_range(2.min(len - 1)..len);
        let end = rng.random_range(start..len);
        let bits: Vec<u8> = (0..src_len).map(|j| u8::from(j >= start && j <= end)).collect();
        let q: Vec<usize> = (0..tgt_len)
            .map(|j| {
                if j + 1 < qlen {
                    word(rng)
                } else if j + 1 == qlen {
                    EOS
                } else {
                    0
                }
            })
            .collect();
        batch.input_ids.push(ids);
        batch.attention_mask.push((0..src_len).map(|j| u8::from(j < len)).collect());
        batch.focus_bits.push(bits.clone());
        batch.answer_bits.push(bits);
        batch.question_ids.push(q);
        batch.question_mask.push((0..tgt_len).map(|j| u8::from(j < qlen)).collect());
        batch.ids.push(format!("toy{i}"));
    }
    batch
}

fn check_one(
    cfg: &GradCheckConfig,
    seed: u64,
    select: fn(&str) -> bool,
    step: f64,
    worst: &mut BTreeMap<String, ParamCheck>,
) -> Result<bool> {
    let mut mc = ModelConfig::toy(cfg.vocab_size, cfg.d_model);
    mc.max_source_len = cfg.src_len;
    mc.max_target_len = cfg.tgt_len;
    let mut model = EcqgModel::new(mc, seed)?;
    let objective = Objective::new(cfg.mode, cfg.lambda1, cfg.lambda2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA7C);
    let batch = toy_batch(&mut rng, cfg.batch_size, cfg.src_len, cfg.tgt_len, cfg.vocab_size);
    let result = model.loss_and_grads(&batch, &objective, None)?;
    super::check_finite(&result.grads)?;
    let lambda_exact = result.d_lambda1 == result.parts.cf && result.d_lambda2 == result.parts.qv;

    let names: Vec<String> = model.params.names().into_iter().filter(|n| select(n)).collect();
    for name in names {
        let n = model.params.get(&name)?.len();
        let analytic: Vec<f64> = match result.grads.get(&name) {
            Some(g) => g.iter().copied().collect(),
            None => vec![0.0; n],
        };
        let entry = worst.entry(name.clone()).or_insert_with(|| ParamCheck {
            name: name.clone(),
            elements: n,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            max_abs_grad: 0.0,
        });
        for (k, &a) in analytic.iter().enumerate() {
            let mut probe = |delta: f64| -> Result<f64> {
                let x = model.params.get_mut(&name).and_then(|t| t.iter_mut().nth(k)).expect("element exists");
                let orig = *x;
                *x = orig + delta;
                let loss = model.loss(&batch, &objective).map(|(_, t)| t);
                let x = model.params.get_mut(&name).and_then(|t| t.iter_mut().nth(k)).expect("element exists");
                *x = orig;
                loss
            };
            let numeric = (probe(step)? - probe(-step)?) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient(format!("{name}[{k}] (numeric)")));
            }
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.denominator_floor);
            entry.max_abs_err = entry.max_abs_err.max(abs);
            entry.max_rel_err = entry.max_rel_err.max(rel);
            entry.max_abs_grad = entry.max_abs_grad.max(a.abs());
        }
    }
    Ok(lambda_exact)
}

/// Compares analytic gradients of `loss_total` against central differences
/// for every parameter of `component`, over each configured seed.
pub fn grad_check(cfg: &GradCheckConfig, component: &str, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let select = component_filter(component).ok_or_else(|| {
        Error::Config(format!("unknown component {component:?}; expected one of {}", COMPONENTS.join(", ")))
    })?;
    if !(step.is_finite() && step > 0.0 && tolerance > 0.0) || cfg.seeds.is_empty() {
        return Err(Error::Config("step and tolerance must be positive and seeds nonempty".into()));
    }
    let mut worst = BTreeMap::new();
    let mut lambda_exact = true;
    for &seed in &cfg.seeds {
        lambda_exact &= check_one(cfg, seed, select, step, &mut worst)?;
    }
    let params: Vec<ParamCheck> = worst.into_values().collect();
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        component: component.to_string(),
        step,
        tolerance,
        seeds: cfg.seeds.clone(),
        passed: max_rel_err <= tolerance && lambda_exact && !params.is_empty(),
        params,
        max_rel_err,
        lambda_exact,
    })
}
