use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::pretokenize;

/// A recognised entity mention; `start`/`end` are character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

pub const DICT_ENV: &str = "ECQG_NER_DICT";

/// Named-entity recogniser used to assign central entities.
pub trait NerProvider: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> String;
    fn extract(&self, text: &str) -> Result<Vec<EntitySpan>>;
}

/// Gazetteer lookup: case-insensitive whole-token matching, longest entry
/// first, left to right, without overlaps.
#[derive(Debug, Clone)]
pub struct DictionaryNer {
    entries: Vec<(Vec<String>, String)>,
}

#[derive(Deserialize)]
struct DictEntry {
    text: String,
    label: String,
}

impl DictionaryNer {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, S)>) -> Self {
        let mut entries: Vec<(Vec<String>, String)> = entries
            .into_iter()
            .map(|(t, l)| {
                let t: String = t.into();
                (pretokenize(&t).into_iter().map(|x| x.text.to_lowercase()).collect::<Vec<String>>(), l.into())
            })
            .filter(|(words, _)| !words.is_empty())
            .collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        Self { entries }
    }

    /// Reads `[{"text": ..., "label": ...}, ...]`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let entries: Vec<DictEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::new(entries.into_iter().map(|e| (e.text, e.label))))
    }

    /// The gazetteer for a corpus at `input`: `$ECQG_NER_DICT`, else
    /// `ner_dict.json` beside (or inside) the input, else an empty dictionary.
    pub fn resolve(input: &Path) -> Result<Self> {
        if let Some(p) = std::env::var_os(DICT_ENV) {
            return Self::from_json_file(Path::new(&p));
        }
        let dir = if input.is_dir() { Some(input) } else { input.parent() };
        match dir.map(|d| d.join("ner_dict.json")).filter(|p| p.exists()) {
            Some(p) => Self::from_json_file(&p),
            None => Ok(Self::new(Vec::<(String, String)>::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl NerProvider for DictionaryNer {
    fn name(&self) -> &str {
        "dictionary"
    }

    fn version(&self) -> String {
        format!("1 ({} entries)", self.entries.len())
    }

    fn extract(&self, text: &str) -> Result<Vec<EntitySpan>> {
        let tokens = pretokenize(text);
        let lowered: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .entries
                .iter()
                .find(|(words, _)| i + words.len() <= lowered.len() && lowered[i..i + words.len()] == words[..]);
            match hit {
                Some((words, label)) => {
                    let start = tokens[i].start;
                    let end = tokens[i + words.len() - 1].end;
                    out.push(EntitySpan { text: chars[start..end].iter().collect(), start, end, label: label.clone() });
                    i += words.len();
                }
                None => i += 1,
            }
        }
        Ok(out)
    }
}

const SPACY_SCRIPT: &str = include_str!("../../scripts/spacy_ner.py");

struct Pipe {
    _child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Adapter for an out-of-process recogniser speaking a JSON-lines protocol:
/// the child first prints `{"name": .., "version": ..}`, then answers every
/// `{"text": ..}` line with a JSON array of [`EntitySpan`]s.
pub struct ExternalNer {
    name: String,
    version: String,
    pipe: Mutex<Pipe>,
}

#[derive(Deserialize)]
struct Handshake {
    name: String,
    version: String,
}

impl ExternalNer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Ner(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut line = String::new();
        stdout.read_line(&mut line)?;
        let hs: Handshake =
            serde_json::from_str(line.trim()).map_err(|e| Error::Ner(format!("bad handshake {line:?}: {e}")))?;
        Ok(Self { name: hs.name, version: hs.version, pipe: Mutex::new(Pipe { _child: child, stdin, stdout }) })
    }

    /// Runs the bundled spaCy bridge. `ECQG_NER_CMD` overrides the command line.
    pub fn spacy() -> Result<Self> {
        if let Ok(cmd) = std::env::var("ECQG_NER_CMD") {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts.next().ok_or_else(|| Error::Ner("ECQG_NER_CMD is empty".into()))?;
            return Self::spawn(&program, &parts.collect::<Vec<_>>());
        }
        let script = std::env::temp_dir().join(format!("ecqg_spacy_ner_{}.py", std::process::id()));
        std::fs::write(&script, SPACY_SCRIPT)?;
        Self::spawn("python3", &[script.to_string_lossy().into_owned()])
    }
}

impl NerProvider for ExternalNer {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> String {
        self.version.clone()
    }

    fn extract(&self, text: &str) -> Result<Vec<EntitySpan>> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::Ner("poisoned pipe".into()))?;
        let request = serde_json::json!({ "text": text });
        writeln!(pipe.stdin, "{request}")?;
        pipe.stdin.flush()?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line)? == 0 {
            return Err(Error::Ner("recogniser closed its output".into()));
        }
        let spans: Vec<EntitySpan> =
            serde_json::from_str(line.trim()).map_err(|e| Error::Ner(format!("bad response: {e}")))?;
        let n = text.chars().count();
        for s in &spans {
            if s.start > s.end || s.end > n {
                return Err(Error::Ner(format!("span {}..{} outside text of {n} chars", s.start, s.end)));
            }
        }
        Ok(spans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_prefers_longest_match_and_stays_in_bounds() {
        let ner = DictionaryNer::new(vec![("New York", "GPE"), ("New York City", "GPE"), ("York", "GPE")]);
        let text = "She moved to new york city, not York.";
        let spans = ner.extract(text).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].text, "new york city");
        assert_eq!(spans[1].text, "York");
        for s in &spans {
            assert!(s.end <= text.chars().count());
        }
        assert_eq!(spans, ner.extract(text).unwrap());
    }

    #[test]
    fn external_adapter_speaks_json_lines() {
        // a tiny recogniser written in shell-free python: marks every capitalised word
        let script = r#"
import sys, json, re
print(json.dumps({"name": "caps", "version": "0"}), flush=True)
for line in sys.stdin:
    t = json.loads(line)["text"]
    print(json.dumps([{"text": m.group(0), "start": m.start(), "end": m.end(), "label": "X"}
                      for m in re.finditer(r"[A-Z][a-z]+", t)]), flush=True)
"#;
        let Ok(ner) = ExternalNer::spawn("python3", &["-c".to_string(), script.to_string()]) else {
            eprintln!("python3 unavailable; skipping");
            return;
        };
        assert_eq!(ner.name(), "caps");
        let spans = ner.extract("Alice met Bob.").unwrap();
        assert_eq!(spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(), ["Alice", "Bob"]);
    }
}
