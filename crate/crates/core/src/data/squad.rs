use std::collections::HashSet;
use std::path::Path;

use serde_json::Value;

use super::{char_slice, Answer, RawQA};
use crate::error::{Error, Result};

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), message: message.into() }
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| parse_err(&format!("{path}.{key}"), "missing field"))
}

fn str_field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a str> {
    field(obj, key, path)?.as_str().ok_or_else(|| parse_err(&format!("{path}.{key}"), "expected string"))
}

fn array_field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Vec<Value>> {
    field(obj, key, path)?.as_array().ok_or_else(|| parse_err(&format!("{path}.{key}"), "expected array"))
}

/// Flattens a SQuAD v2.0 document (`data -> paragraphs -> qas`) into records,
/// checking every answer span against its context.
pub fn parse_squad(document: &Value) -> Result<Vec<RawQA>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (ai, article) in array_field(document, "data", "$")?.iter().enumerate() {
        let apath = format!("data[{ai}]");
        let title = match article.get("title") {
            None => "",
            Some(v) => v.as_str().ok_or_else(|| parse_err(&format!("{apath}.title"), "expected string"))?,
        };
        for (pi, para) in array_field(article, "paragraphs", &apath)?.iter().enumerate() {
            let ppath = format!("{apath}.paragraphs[{pi}]");
            let context = str_field(para, "context", &ppath)?;
            for (qi, qa) in array_field(para, "qas", &ppath)?.iter().enumerate() {
                let qpath = format!("{ppath}.qas[{qi}]");
                let id = str_field(qa, "id", &qpath)?.to_string();
                let question = str_field(qa, "question", &qpath)?.to_string();
                let is_impossible = match qa.get("is_impossible") {
                    None => false,
                    Some(v) => {
                        v.as_bool().ok_or_else(|| parse_err(&format!("{qpath}.is_impossible"), "expected bool"))?
                    }
                };
                let mut answers = Vec::new();
                for (ni, ans) in array_field(qa, "answers", &qpath)?.iter().enumerate() {
                    let npath = format!("{qpath}.answers[{ni}]");
                    let text = str_field(ans, "text", &npath)?.to_string();
                    let start = field(ans, "answer_start", &npath)?
                        .as_u64()
                        .ok_or_else(|| parse_err(&format!("{npath}.answer_start"), "expected non-negative integer"))?
                        as usize;
                    match char_slice(context, start, text.chars().count()) {
                        Some(s) if s == text => {}
                        Some(s) => {
                            return Err(Error::Integrity {
                                id,
                                message: format!("answer {text:?} at {start} reads {s:?} in context"),
                            })
                        }
                        None => {
                            return Err(Error::Integrity {
                                id,
                                message: format!("answer {text:?} at {start} runs past end of context"),
                            })
                        }
                    }
                    answers.push(Answer { text, start });
                }
                if answers.is_empty() != is_impossible {
                    return Err(Error::Integrity {
                        id,
                        message: format!("is_impossible={is_impossible} but {} answers", answers.len()),
                    });
                }
                if !seen.insert(id.clone()) {
                    return Err(Error::Integrity { id, message: "duplicate id".into() });
                }
                out.push(RawQA {
                    id,
                    title: title.to_string(),
                    context: context.to_string(),
                    question,
                    answers,
                    is_impossible,
                });
            }
        }
    }
    Ok(out)
}

pub fn load_squad_file(path: &Path) -> Result<Vec<RawQA>> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text)?;
    parse_squad(&doc)
}
