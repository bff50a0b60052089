use std::collections::BTreeMap;

use super::ner::NerProvider;
use crate::error::Result;
use crate::tokenizer::pretokenize;

/// Lowercased token sequence used for whole-word matching.
pub fn word_seq(text: &str) -> Vec<String> {
    pretokenize(text).into_iter().map(|t| t.text.to_lowercase()).collect()
}

fn find_seq(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Case-insensitive whole-word containment: `needle`'s token sequence occurs
/// contiguously in `haystack`'s token sequence.
pub fn contains_words(haystack: &str, needle: &str) -> bool {
    find_seq(&word_seq(haystack), &word_seq(needle)).is_some()
}

/// Normalisation used when voting over answers: lowercase, then strip
/// surrounding whitespace and punctuation.
pub fn normalize_answer(text: &str) -> String {
    text.to_lowercase().trim_matches(|c: char| c.is_whitespace() || !c.is_alphanumeric()).to_string()
}

/// Normalised entity identity: lowercase tokens joined by single spaces.
pub fn normalize_entity(text: &str) -> String {
    word_seq(text).join(" ")
}

fn title_entity(title: &str) -> String {
    title.replace('_', " ").trim().to_string()
}

/// Picks the central entity of a question, if any.
///
/// Rule 1: the article title, when the question (and the context) contain it
/// as a whole-word sequence. Rule 2: otherwise the single entity string shared
/// by the NER outputs of context and question; zero or several shared entities
/// yield `None`.
pub fn assign_central_entity(
    title: &str,
    context: &str,
    question: &str,
    ner: &dyn NerProvider,
) -> Result<Option<String>> {
    let title = title_entity(title);
    if !title.is_empty() && contains_words(question, &title) && contains_words(context, &title) {
        return Ok(Some(title));
    }

    // first context surface form per normalised entity
    let mut in_context: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for span in ner.extract(context)? {
        let key = normalize_entity(&span.text);
        if key.is_empty() {
            continue;
        }
        let entry = in_context.entry(key).or_insert((span.start, span.text.clone()));
        if span.start < entry.0 {
            *entry = (span.start, span.text);
        }
    }
    let mut shared: Vec<String> = Vec::new();
    for span in ner.extract(question)? {
        let key = normalize_entity(&span.text);
        if in_context.contains_key(&key) && !shared.contains(&key) {
            shared.push(key);
        }
    }
    if shared.len() != 1 {
        return Ok(None);
    }
    let (_, surface) = &in_context[&shared[0]];
    Ok(contains_words(context, surface).then(|| surface.clone()))
}
