use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entity::{assign_central_entity, normalize_answer};
use super::ner::NerProvider;
use super::squad::load_squad_file;
use super::stats::{compute_stats, DatasetStats};
use super::{Answer, EcqgSample, RawQA, Split};
use crate::error::{Error, Result};

/// Majority vote over annotator answers.
///
/// Answers are grouped by [`normalize_answer`]. Ties between equally frequent
/// groups go to the shorter normalised text, then the smaller offset. The
/// returned answer is the group member with the smallest offset.
pub fn vote_answer(answers: &[Answer]) -> Result<Answer> {
    if answers.is_empty() {
        return Err(Error::Precondition("vote over an empty answer list".into()));
    }
    let mut groups: BTreeMap<String, Vec<&Answer>> = BTreeMap::new();
    for a in answers {
        groups.entry(normalize_answer(&a.text)).or_default().push(a);
    }
    let best = groups
        .iter()
        .map(|(norm, members)| {
            let first = members.iter().min_by_key(|a| a.start).unwrap();
            (members.len(), norm, *first)
        })
        .min_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| a.1.chars().count().cmp(&b.1.chars().count()))
                .then_with(|| a.2.start.cmp(&b.2.start))
                .then_with(|| a.1.cmp(b.1))
        })
        .unwrap();
    Ok(best.2.clone())
}

/// Why a record did not become a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Impossible,
    NoEntity,
    AnswerIsEntity,
}

fn convert(raw: &RawQA, ner: &dyn NerProvider) -> Result<std::result::Result<EcqgSample, Outcome>> {
    if raw.is_impossible || raw.answers.is_empty() {
        return Ok(Err(Outcome::Impossible));
    }
    let answer = vote_answer(&raw.answers)?;
    let Some(entity) = assign_central_entity(&raw.title, &raw.context, &raw.question, ner)? else {
        return Ok(Err(Outcome::NoEntity));
    };
    if answer.text.trim().to_lowercase() == entity.trim().to_lowercase() {
        return Ok(Err(Outcome::AnswerIsEntity));
    }
    Ok(Ok(EcqgSample {
        id: raw.id.clone(),
        context: raw.context.clone(),
        entity,
        question: raw.question.clone(),
        answer_text: answer.text,
        answer_start: answer.start,
    }))
}

/// Applies the per-record rules to a single record; `None` means filtered out.
pub fn convert_record(raw: &RawQA, ner: &dyn NerProvider) -> Result<Option<EcqgSample>> {
    Ok(convert(raw, ner)?.ok())
}

/// SQuAD's own splits: `train` is re-split into train/validation, `dev` becomes test.
#[derive(Debug, Clone, Default)]
pub struct SquadCorpus {
    pub train: Vec<RawQA>,
    pub dev: Vec<RawQA>,
}

pub const TRAIN_FILE: &str = "train-v2.0.json";
pub const DEV_FILE: &str = "dev-v2.0.json";

/// Loads the corpus from a directory holding `train-v2.0.json` and
/// optionally `dev-v2.0.json`, or from a single file used as the train pool.
/// An explicit `dev` file takes precedence. Returns the files read.
pub fn load_squad_corpus(path: &Path, dev: Option<&Path>) -> Result<(SquadCorpus, Vec<PathBuf>)> {
    let (train_path, mut dev_path) = if path.is_dir() {
        let d = path.join(DEV_FILE);
        (path.join(TRAIN_FILE), d.exists().then_some(d))
    } else {
        (path.to_path_buf(), None)
    };
    if let Some(d) = dev {
        dev_path = Some(d.to_path_buf());
    }
    let mut files = vec![train_path.clone()];
    let train = load_squad_file(&train_path)?;
    let dev = match &dev_path {
        Some(d) => {
            files.push(d.clone());
            load_squad_file(d)?
        }
        None => Vec::new(),
    };
    Ok((SquadCorpus { train, dev }, files))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        // 3,364 / (42,128 + 3,364)
        Self { val_fraction: 0.074, seed: 42 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub records: usize,
    pub impossible_removed: usize,
    pub no_central_entity: usize,
    pub answer_is_entity: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub train: Vec<EcqgSample>,
    pub validation: Vec<EcqgSample>,
    pub test: Vec<EcqgSample>,
    pub counts: BuildCounts,
    pub warnings: Vec<String>,
}

impl BuildOutput {
    pub fn split(&self, split: Split) -> &[EcqgSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> BTreeMap<String, DatasetStats> {
        Split::ALL
            .iter()
            .map(|&s| {
                let mut st = compute_stats(self.split(s));
                st.split = s;
                (s.name().to_string(), st)
            })
            .collect()
    }
}

fn filter_corpus(corpus: &[RawQA], ner: &dyn NerProvider, counts: &mut BuildCounts) -> Result<Vec<EcqgSample>> {
    let results: Vec<_> = corpus.par_iter().map(|r| convert(r, ner)).collect::<Result<_>>()?;
    let mut kept = Vec::new();
    counts.records += corpus.len();
    for r in results {
        match r {
            Ok(s) => kept.push(s),
            Err(Outcome::Impossible) => counts.impossible_removed += 1,
            Err(Outcome::NoEntity) => counts.no_central_entity += 1,
            Err(Outcome::AnswerIsEntity) => counts.answer_is_entity += 1,
        }
    }
    kept.sort_by(|a, b| a.id.cmp(&b.id));
    counts.emitted += kept.len();
    Ok(kept)
}

/// Builds train/validation/test splits. The output is a pure function of
/// `(corpus, ner, config)`; every split is sorted by id.
pub fn build_dataset(corpus: &SquadCorpus, ner: &dyn NerProvider, config: &BuildConfig) -> Result<BuildOutput> {
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "validation fraction must lie in (0, 1), got {}",
            config.val_fraction
        )));
    }
    let mut counts = BuildCounts::default();
    let train_pool = filter_corpus(&corpus.train, ner, &mut counts)?;
    let test = filter_corpus(&corpus.dev, ner, &mut counts)?;

    let mut order: Vec<usize> = (0..train_pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_val = ((train_pool.len() as f64) * config.val_fraction).round() as usize;
    let mut is_val = vec![false; train_pool.len()];
    for &i in &order[..n_val.min(order.len())] {
        is_val[i] = true;
    }
    let (mut validation, mut train) = (Vec::new(), Vec::new());
    for (sample, v) in train_pool.into_iter().zip(is_val) {
        if v {
            validation.push(sample);
        } else {
            train.push(sample);
        }
    }

    let mut warnings = Vec::new();
    if train.is_empty() && validation.is_empty() && test.is_empty() {
        let msg = "no record survived filtering; the dataset is empty".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    validation.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(BuildOutput { train, validation, test, counts, warnings })
}

/// Provenance written next to the dataset as `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub val_fraction: f64,
    pub train_fraction: f64,
    pub ner_provider: String,
    pub ner_version: String,
    pub inputs: BTreeMap<String, String>,
    pub counts: BuildCounts,
    pub warnings: Vec<String>,
    #[serde(default)]
    pub command: Vec<String>,
}

fn write_jsonl(path: &Path, samples: &[EcqgSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<EcqgSample>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl`, `stats.json` and `meta.json`.
pub fn write_dataset(dir: &Path, output: &BuildOutput, meta: &DatasetMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for split in Split::ALL {
        write_jsonl(&dir.join(format!("{}.jsonl", split.name())), output.split(split))?;
    }
    std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&output.stats())?)?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}
