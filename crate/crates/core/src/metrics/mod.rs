//! Corpus BLEU-1..4, METEOR and ROUGE_L on a 0..100 scale.
//!
//! Every metric sees the same tokenization: lowercase, alphanumeric runs kept
//! whole, each punctuation character a token of its own.

mod bleu;
mod meteor;
mod rouge;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::pretokenize;

pub use bleu::{corpus_bleu, Smoothing};
pub use meteor::meteor;
pub use rouge::{lcs_len, rouge_l, DEFAULT_BETA};

pub const TOKENIZATION: &str = "lowercase; alphanumeric runs; punctuation split";

pub fn tokenize(text: &str) -> Vec<String> {
    pretokenize(text).into_iter().map(|t| t.text.to_lowercase()).collect()
}

fn check_lengths(candidates: &[String], references: &[String]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::Input(format!("{} candidates but {} references", candidates.len(), references.len())));
    }
    Ok(())
}

fn tokenized_pairs(candidates: &[String], references: &[String]) -> Vec<(Vec<String>, Vec<String>)> {
    candidates.par_iter().zip(references.par_iter()).map(|(c, r)| (tokenize(c), tokenize(r))).collect()
}

/// Mean that does not depend on the order of `xs`.
fn stable_mean(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn compute_bleu(candidates: &[String], references: &[String], n: usize, smoothing: Smoothing) -> Result<f64> {
    check_lengths(candidates, references)?;
    if !(1..=4).contains(&n) {
        return Err(Error::Input(format!("BLEU order {n} outside 1..=4")));
    }
    Ok(100.0 * corpus_bleu(&tokenized_pairs(candidates, references), n, smoothing))
}

pub fn compute_meteor(candidates: &[String], references: &[String]) -> Result<f64> {
    check_lengths(candidates, references)?;
    let scores = tokenized_pairs(candidates, references).par_iter().map(|(c, r)| meteor(c, r)).collect();
    Ok(100.0 * stable_mean(scores))
}

pub fn compute_rouge_l(candidates: &[String], references: &[String], beta: f64) -> Result<f64> {
    check_lengths(candidates, references)?;
    let scores = tokenized_pairs(candidates, references).par_iter().map(|(c, r)| rouge_l(c, r, beta)).collect();
    Ok(100.0 * stable_mean(scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub bleu_smoothing: Smoothing,
    pub rouge_beta: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { bleu_smoothing: Smoothing::None, rouge_beta: DEFAULT_BETA }
    }
}

/// The six headline scores in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
}

impl ScoreRow {
    pub fn values(&self) -> [f64; 6] {
        [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.meteor, self.rouge_l]
    }

    pub fn mean(rows: &[ScoreRow]) -> Result<ScoreRow> {
        if rows.is_empty() {
            return Err(Error::Input("cannot average zero reports".into()));
        }
        let col = |k: usize| stable_mean(rows.iter().map(|r| r.values()[k]).collect());
        Ok(ScoreRow { bleu1: col(0), bleu2: col(1), bleu3: col(2), bleu4: col(3), meteor: col(4), rouge_l: col(5) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id: String,
    pub bleu4: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub n: usize,
    pub per_sample: Vec<PairScore>,
    pub tokenization: String,
    pub settings: EvalSettings,
}

impl EvalReport {
    pub fn scores(&self) -> ScoreRow {
        ScoreRow {
            bleu1: self.bleu1,
            bleu2: self.bleu2,
            bleu3: self.bleu3,
            bleu4: self.bleu4,
            meteor: self.meteor,
            rouge_l: self.rouge_l,
        }
    }
}

/// Scores aligned `(id, candidate, reference)` triples.
pub fn evaluate(
    ids: &[String],
    candidates: &[String],
    references: &[String],
    settings: EvalSettings,
) -> Result<EvalReport> {
    check_lengths(candidates, references)?;
    if ids.len() != candidates.len() {
        return Err(Error::Input(format!("{} ids for {} pairs", ids.len(), candidates.len())));
    }
    let pairs = tokenized_pairs(candidates, references);
    let per_pair: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .map(|(c, r)| {
            let single = [(c.clone(), r.clone())];
            (meteor(c, r), rouge_l(c, r, settings.rouge_beta), corpus_bleu(&single, 4, settings.bleu_smoothing))
        })
        .collect();
    let bleu = |n| 100.0 * corpus_bleu(&pairs, n, settings.bleu_smoothing);
    Ok(EvalReport {
        bleu1: bleu(1),
        bleu2: bleu(2),
        bleu3: bleu(3),
        bleu4: bleu(4),
        meteor: 100.0 * stable_mean(per_pair.iter().map(|p| p.0).collect()),
        rouge_l: 100.0 * stable_mean(per_pair.iter().map(|p| p.1).collect()),
        n: pairs.len(),
        per_sample: ids
            .iter()
            .zip(&per_pair)
            .map(|(id, p)| PairScore { id: id.clone(), bleu4: 100.0 * p.2, rouge_l: 100.0 * p.1 })
            .collect(),
        tokenization: TOKENIZATION.to_string(),
        settings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

pub fn read_text_records(path: &Path) -> Result<Vec<TextRecord>> {
    let raw = std::fs::read_to_string(path)?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parse { path: format!("{}:{}", path.display(), i + 1), message: e.to_string() })
        })
        .collect()
}

pub fn write_text_records(path: &Path, records: &[TextRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn index_unique(records: &[TextRecord], what: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for r in records {
        if map.insert(r.id.clone(), r.text.clone()).is_some() {
            return Err(Error::Input(format!("duplicate id {} in {what}", r.id)));
        }
    }
    Ok(map)
}

/// Evaluates predictions against references matched by id, in reference order.
/// Ids present on only one side are reported together.
pub fn evaluate_records(
    predictions: &[TextRecord],
    references: &[TextRecord],
    settings: EvalSettings,
) -> Result<EvalReport> {
    let preds = index_unique(predictions, "predictions")?;
    index_unique(references, "references")?;
    let ref_ids: HashSet<&str> = references.iter().map(|r| r.id.as_str()).collect();
    let mut missing: Vec<String> = references
        .iter()
        .filter(|r| !preds.contains_key(&r.id))
        .map(|r| r.id.clone())
        .chain(predictions.iter().filter(|p| !ref_ids.contains(p.id.as_str())).map(|p| p.id.clone()))
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingIds(missing));
    }
    let ids: Vec<String> = references.iter().map(|r| r.id.clone()).collect();
    let cands: Vec<String> = ids.iter().map(|id| preds[id].clone()).collect();
    let refs: Vec<String> = references.iter().map(|r| r.text.clone()).collect();
    evaluate(&ids, &cands, &refs, settings)
}

pub fn evaluate_corpus(predictions: &Path, references: &Path, settings: EvalSettings) -> Result<EvalReport> {
    evaluate_records(&read_text_records(predictions)?, &read_text_records(references)?, settings)
}

pub fn render_row(row: &ScoreRow) -> String {
    row.values().iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" / ")
}

pub fn render_table(rows: &[(String, ScoreRow)]) -> String {
    let mut out = String::from("| Model | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | METEOR | ROUGE_L |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for (name, row) in rows {
        let _ = write!(out, "| {name} |");
        for v in row.values() {
            let _ = write!(out, " {v:.2} |");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_splits_punctuation() {
        assert_eq!(tokenize("When did Beyonce become popular?"), ["when", "did", "beyonce", "become", "popular", "?"]);
        assert_eq!(tokenize("Destiny's"), ["destiny", "'", "s"]);
    }

    #[test]
    fn row_rendering() {
        let row = ScoreRow { bleu1: 40.21, bleu2: 29.45, bleu3: 22.4, bleu4: 16.98, meteor: 37.74, rouge_l: 46.12 };
        assert_eq!(render_row(&row), "40.21 / 29.45 / 22.40 / 16.98 / 37.74 / 46.12");
    }
}
