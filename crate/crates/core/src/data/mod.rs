//! Construction of the entity-centric QG dataset from SQuAD-format corpora.

mod align;
mod build;
mod entity;
mod ner;
mod squad;
mod stats;

use serde::{Deserialize, Serialize};

pub use align::{align_span, SourceLayout};
pub use build::{
    build_dataset, convert_record, load_squad_corpus, read_jsonl, vote_answer, write_dataset, BuildConfig, BuildCounts,
    BuildOutput, DatasetMeta, SquadCorpus, DEV_FILE, TRAIN_FILE,
};
pub use entity::{assign_central_entity, contains_words, normalize_answer, normalize_entity, word_seq};
pub use ner::{DictionaryNer, EntitySpan, ExternalNer, NerProvider, DICT_ENV};
pub use squad::{load_squad_file, parse_squad};
pub use stats::{compute_stats, DatasetStats};

/// One answer annotation: surface text and character offset into the context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub start: usize,
}

impl Answer {
    pub fn new(text: impl Into<String>, start: usize) -> Self {
        Self { text: text.into(), start }
    }
}

/// A SQuAD record as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQA {
    pub id: String,
    pub title: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
}

/// One (context, entity, question, answer span) training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcqgSample {
    pub id: String,
    pub context: String,
    pub entity: String,
    pub question: String,
    pub answer_text: String,
    pub answer_start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Character-indexed substring; `None` when the range leaves the text.
pub fn char_slice(text: &str, start: usize, len: usize) -> Option<String> {
    let total = text.chars().count();
    if start.checked_add(len)? > total {
        return None;
    }
    Some(text.chars().skip(start).take(len).collect())
}

impl EcqgSample {
    /// Checks the per-sample invariants: exact answer span, entity present in
    /// context as whole words, and answer distinct from the entity.
    pub fn validate(&self) -> Result<(), String> {
        let len = self.answer_text.chars().count();
        match char_slice(&self.context, self.answer_start, len) {
            Some(s) if s == self.answer_text => {}
            _ => return Err("answer span does not match context".into()),
        }
        if !contains_words(&self.context, &self.entity) {
            return Err(format!("entity {:?} not found in context", self.entity));
        }
        if self.answer_text.trim().to_lowercase() == self.entity.trim().to_lowercase() {
            return Err("answer equals entity".into());
        }
        Ok(())
    }
}
