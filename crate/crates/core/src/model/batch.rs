use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::autograd::Mask;
use crate::data::{align_span, EcqgSample, SourceLayout};
use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, BOS, EOS, PAD, SEP};

/// One sample after tokenisation, before padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub input_ids: Vec<usize>,
    pub answer_bits: Vec<u8>,
    /// Gold question followed by `<eos>`.
    pub question_ids: Vec<usize>,
}

/// Builds the `entity <sep> context` input ids and their layout, truncated to `max_len`.
pub fn encode_source(vocab: &Vocab, entity: &str, context: &str, max_len: usize) -> Result<(Vec<usize>, SourceLayout)> {
    let (mut ids, _) = vocab.encode(entity);
    if ids.len() + 2 > max_len {
        return Err(Error::Precondition(format!(
            "entity of {} tokens leaves no room for context within {max_len}",
            ids.len()
        )));
    }
    ids.push(SEP);
    let context_start = ids.len();
    let (ctx_ids, ctx_tokens) = vocab.encode(context);
    let keep = ctx_ids.len().min(max_len - context_start);
    ids.extend_from_slice(&ctx_ids[..keep]);
    let layout = SourceLayout {
        len: ids.len(),
        context_start,
        context_spans: ctx_tokens[..keep].iter().map(|t| (t.start, t.end)).collect(),
    };
    Ok((ids, layout))
}

/// Question ids truncated so that, with `<eos>`, they fit in `max_len`.
pub fn encode_question(vocab: &Vocab, question: &str, max_len: usize) -> Vec<usize> {
    let (mut ids, _) = vocab.encode(question);
    ids.truncate(max_len - 1);
    ids.push(EOS);
    ids
}

pub fn encode_sample(sample: &EcqgSample, vocab: &Vocab, max_src: usize, max_tgt: usize) -> Result<EncodedSample> {
    let (input_ids, layout) = encode_source(vocab, &sample.entity, &sample.context, max_src)?;
    let answer_bits = align_span(&sample.context, &sample.answer_text, sample.answer_start, &layout)?;
    Ok(EncodedSample {
        id: sample.id.clone(),
        input_ids,
        answer_bits,
        question_ids: encode_question(vocab, &sample.question, max_tgt),
    })
}

/// Encodes every sample; those whose answer is truncated away (or is otherwise
/// unalignable) are returned separately with the reason.
pub fn encode_samples(
    samples: &[EcqgSample],
    vocab: &Vocab,
    max_src: usize,
    max_tgt: usize,
) -> (Vec<EncodedSample>, Vec<(String, Error)>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for s in samples {
        match encode_sample(s, vocab, max_src, max_tgt) {
            Ok(e) => kept.push(e),
            Err(e) => dropped.push((s.id.clone(), e)),
        }
    }
    (kept, dropped)
}

/// A padded batch. Rows are samples; the answer span doubles as the focus
/// target, so `focus_bits` and `answer_bits` coincide for built batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBatch {
    pub input_ids: Vec<Vec<usize>>,
    pub attention_mask: Vec<Vec<u8>>,
    pub focus_bits: Vec<Vec<u8>>,
    pub answer_bits: Vec<Vec<u8>>,
    pub question_ids: Vec<Vec<usize>>,
    pub question_mask: Vec<Vec<u8>>,
    #[serde(default)]
    pub ids: Vec<String>,
}

fn pad<T: Copy>(rows: impl Iterator<Item = Vec<T>>, width: usize, fill: T) -> Vec<Vec<T>> {
    rows.map(|mut r| {
        r.resize(width, fill);
        r
    })
    .collect()
}

impl TokenBatch {
    /// Pads to the longest row in the batch.
    pub fn collate(samples: &[EncodedSample]) -> Self {
        let c = samples.iter().map(|s| s.input_ids.len()).max().unwrap_or(0);
        let q = samples.iter().map(|s| s.question_ids.len()).max().unwrap_or(0);
        Self::collate_to(samples, c, q)
    }

    /// Pads to fixed widths (which must cover every row).
    pub fn collate_to(samples: &[EncodedSample], src_len: usize, tgt_len: usize) -> Self {
        let ones = |n: usize| vec![1u8; n];
        let answer_bits = pad(samples.iter().map(|s| s.answer_bits.clone()), src_len, 0);
        Self {
            input_ids: pad(samples.iter().map(|s| s.input_ids.clone()), src_len, PAD),
            attention_mask: pad(samples.iter().map(|s| ones(s.input_ids.len())), src_len, 0),
            focus_bits: answer_bits.clone(),
            answer_bits,
            question_ids: pad(samples.iter().map(|s| s.question_ids.clone()), tgt_len, PAD),
            question_mask: pad(samples.iter().map(|s| ones(s.question_ids.len())), tgt_len, 0),
            ids: samples.iter().map(|s| s.id.clone()).collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.input_ids.len()
    }

    pub fn src_len(&self) -> usize {
        self.input_ids.first().map_or(0, Vec::len)
    }

    pub fn tgt_len(&self) -> usize {
        self.question_ids.first().map_or(0, Vec::len)
    }

    /// Rows `rows` of this batch, keeping the padded widths.
    pub fn select(&self, rows: &[usize]) -> Self {
        let pick = |m: &Vec<Vec<u8>>| rows.iter().map(|&r| m[r].clone()).collect();
        Self {
            input_ids: rows.iter().map(|&r| self.input_ids[r].clone()).collect(),
            attention_mask: pick(&self.attention_mask),
            focus_bits: pick(&self.focus_bits),
            answer_bits: pick(&self.answer_bits),
            question_ids: rows.iter().map(|&r| self.question_ids[r].clone()).collect(),
            question_mask: pick(&self.question_mask),
            ids: rows.iter().filter_map(|&r| self.ids.get(r).cloned()).collect(),
        }
    }

    /// Appends `extra_src` / `extra_tgt` masked pad positions to every row.
    pub fn padded(&self, extra_src: usize, extra_tgt: usize) -> Self {
        let c = self.src_len() + extra_src;
        let q = self.tgt_len() + extra_tgt;
        Self {
            input_ids: pad(self.input_ids.iter().cloned(), c, PAD),
            attention_mask: pad(self.attention_mask.iter().cloned(), c, 0),
            focus_bits: pad(self.focus_bits.iter().cloned(), c, 0),
            answer_bits: pad(self.answer_bits.iter().cloned(), c, 0),
            question_ids: pad(self.question_ids.iter().cloned(), q, PAD),
            question_mask: pad(self.question_mask.iter().cloned(), q, 0),
            ids: self.ids.clone(),
        }
    }

    /// Shape and masking invariants, with the caps the model was built for.
    pub fn validate(&self, max_src: usize, max_tgt: usize, vocab_size: usize) -> Result<()> {
        let (b, c, q) = (self.batch_size(), self.src_len(), self.tgt_len());
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c > max_src {
            return Err(Error::Contract(format!("source length {c} exceeds {max_src}")));
        }
        if q > max_tgt {
            return Err(Error::Contract(format!("question length {q} exceeds {max_tgt}")));
        }
        let rect_u8 = |m: &Vec<Vec<u8>>, w: usize, name: &str| -> Result<()> {
            if m.len() != b || m.iter().any(|r| r.len() != w) {
                return Err(Error::Shape(format!("{name} is not [{b} x {w}]")));
            }
            if m.iter().flatten().any(|&x| x > 1) {
                return Err(Error::Shape(format!("{name} holds a value other than 0/1")));
            }
            Ok(())
        };
        if self.input_ids.iter().any(|r| r.len() != c) || self.question_ids.len() != b {
            return Err(Error::Shape("ragged id matrix".into()));
        }
        if self.question_ids.iter().any(|r| r.len() != q) {
            return Err(Error::Shape("ragged question matrix".into()));
        }
        rect_u8(&self.attention_mask, c, "attention_mask")?;
        rect_u8(&self.focus_bits, c, "focus_bits")?;
        rect_u8(&self.answer_bits, c, "answer_bits")?;
        rect_u8(&self.question_mask, q, "question_mask")?;
        if let Some(&id) = self.input_ids.iter().chain(&self.question_ids).flatten().find(|&&id| id >= vocab_size) {
            return Err(Error::Contract(format!("token id {id} outside vocabulary of {vocab_size}")));
        }
        for i in 0..b {
            for j in 0..c {
                if self.attention_mask[i][j] == 0 && (self.focus_bits[i][j] == 1 || self.answer_bits[i][j] == 1) {
                    return Err(Error::Contract(format!("row {i}: label bit set on masked position {j}")));
                }
            }
            if !self.attention_mask[i].contains(&1) {
                return Err(Error::Contract(format!("row {i} has no unmasked source token")));
            }
            if !self.question_mask[i].contains(&1) {
                return Err(Error::Contract(format!("row {i} has no unmasked question token")));
            }
        }
        Ok(())
    }

    /// Teacher-forcing decoder input: `<bos>` followed by the gold question shifted right.
    pub fn decoder_input(&self) -> Vec<Vec<usize>> {
        self.question_ids
            .iter()
            .map(|row| std::iter::once(BOS).chain(row.iter().copied()).take(row.len()).collect())
            .collect()
    }

    pub fn src_mask(&self) -> Mask {
        to_mask(&self.attention_mask)
    }

    pub fn tgt_mask(&self) -> Mask {
        to_mask(&self.question_mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub(crate) fn to_mask(m: &[Vec<u8>]) -> Mask {
    let w = m.first().map_or(0, Vec::len);
    Mask::from_shape_vec(IxDyn(&[m.len(), w]), m.iter().flatten().map(|&x| x == 1).collect()).unwrap()
}
