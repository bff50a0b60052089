use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_SOURCE_LEN: usize = 128;
pub const MAX_TARGET_LEN: usize = 32;

/// Which training terms are active.
///
/// `qv_only` replaces the focus-aware context by the plain encoder output;
/// `cf_only` drops the verification path; `seq2seq` drops both.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    CfOnly,
    QvOnly,
    Seq2seq,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::CfOnly, Mode::QvOnly, Mode::Seq2seq];

    pub fn uses_focus(self) -> bool {
        matches!(self, Mode::Full | Mode::CfOnly)
    }

    pub fn uses_verification(self) -> bool {
        matches!(self, Mode::Full | Mode::QvOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::CfOnly => "cf_only",
            Mode::QvOnly => "qv_only",
            Mode::Seq2seq => "seq2seq",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub classifier_layers: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    /// Feed classifier logits instead of probabilities into the fusion layer.
    pub fusion_use_logits: bool,
    /// Token losses summed over positive bits only, divided by batch size.
    pub literal_positive_only: bool,
    /// Random classifier stacks instead of copies of the encoder layers.
    pub classifier_fresh_init: bool,
}

impl ModelConfig {
    /// Small single-layer configuration for tests and desk-scale runs.
    pub fn toy(vocab_size: usize, d_model: usize) -> Self {
        Self {
            vocab_size,
            d_model,
            n_heads: if d_model.is_multiple_of(2) && d_model >= 8 { 2 } else { 1 },
            d_ff: 2 * d_model,
            encoder_layers: 1,
            decoder_layers: 1,
            classifier_layers: 1,
            max_source_len: MAX_SOURCE_LEN,
            max_target_len: MAX_TARGET_LEN,
            dropout: 0.0,
            layer_norm_eps: 1e-6,
            fusion_use_logits: false,
            literal_positive_only: false,
            classifier_fresh_init: true,
        }
    }

    pub fn base(vocab_size: usize) -> Self {
        Self {
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            encoder_layers: 12,
            decoder_layers: 12,
            classifier_layers: 12,
            dropout: 0.1,
            classifier_fresh_init: false,
            ..Self::toy(vocab_size, 768)
        }
    }

    pub fn large(vocab_size: usize) -> Self {
        Self {
            d_model: 1024,
            n_heads: 16,
            d_ff: 4096,
            encoder_layers: 24,
            decoder_layers: 24,
            classifier_layers: 24,
            ..Self::base(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size <= crate::tokenizer::SPECIALS.len() {
            return fail(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} is not divisible into {} heads", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("d_ff and layer counts must be positive".into());
        }
        if self.max_source_len == 0 || self.max_source_len > MAX_SOURCE_LEN {
            return fail(format!("max_source_len must lie in 1..={MAX_SOURCE_LEN}"));
        }
        if self.max_target_len < 2 || self.max_target_len > MAX_TARGET_LEN {
            return fail(format!("max_target_len must lie in 2..={MAX_TARGET_LEN}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Loss weighting of the auxiliary terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub mode: Mode,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self { mode: Mode::Full, lambda1: 0.15, lambda2: 0.15 }
    }
}

impl Objective {
    pub fn new(mode: Mode, lambda1: f64, lambda2: f64) -> Result<Self> {
        check_lambda(lambda1, lambda2)?;
        Ok(Self { mode, lambda1, lambda2 })
    }
}

pub fn check_lambda(lambda1: f64, lambda2: f64) -> Result<()> {
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Config(format!("{name} = {l} must lie strictly between 0 and 1")));
        }
    }
    Ok(())
}
