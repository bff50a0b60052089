use std::collections::HashSet;
use std::path::PathBuf;

use ecqg_core::data::{
    align_span, build_dataset, char_slice, compute_stats, contains_words, load_squad_corpus, parse_squad,
    write_dataset, Answer, BuildConfig, DatasetMeta, DictionaryNer, EcqgSample, RawQA, SquadCorpus,
};
use ecqg_core::model::encode_source;
use ecqg_core::tokenizer::{pretokenize, Vocab};
use ecqg_core::Error;
use proptest::prelude::*;
use serde_json::json;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/squad")
}

fn corpus() -> SquadCorpus {
    load_squad_corpus(&fixture(), None).unwrap().0
}

fn ner() -> DictionaryNer {
    DictionaryNer::resolve(&fixture()).unwrap()
}

fn meta(config: &BuildConfig) -> DatasetMeta {
    DatasetMeta {
        seed: config.seed,
        val_fraction: config.val_fraction,
        train_fraction: 1.0 - config.val_fraction,
        ner_provider: "dictionary".into(),
        ner_version: "test".into(),
        inputs: Default::default(),
        counts: Default::default(),
        warnings: vec![],
        command: vec![],
    }
}

fn check_sample(s: &EcqgSample) {
    let n = s.answer_text.chars().count();
    assert_eq!(char_slice(&s.context, s.answer_start, n).as_deref(), Some(s.answer_text.as_str()), "{}", s.id);
    assert!(contains_words(&s.context, &s.entity), "{}: entity {:?} not in context", s.id, s.entity);
    assert_ne!(s.answer_text.to_lowercase(), s.entity.to_lowercase(), "{}", s.id);
}

#[test]
fn fixture_has_200_records() {
    let c = corpus();
    assert_eq!(c.train.len() + c.dev.len(), 200);
    assert_eq!(c.train.len(), 150);
}

#[test]
fn builds_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = BuildConfig { seed: 11, ..BuildConfig::default() };
    for dir in [a.path(), b.path()] {
        let out = build_dataset(&corpus(), &ner(), &cfg).unwrap();
        write_dataset(dir, &out, &meta(&cfg)).unwrap();
    }
    for f in ["train.jsonl", "validation.jsonl", "test.jsonl", "stats.json", "meta.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
        assert!(!x.is_empty() || f == "validation.jsonl");
    }
}

#[test]
fn emitted_samples_satisfy_invariants() {
    let c = corpus();
    let impossible: HashSet<&str> =
        c.train.iter().chain(&c.dev).filter(|r| r.is_impossible).map(|r| r.id.as_str()).collect();
    assert!(!impossible.is_empty());
    let out = build_dataset(&c, &ner(), &BuildConfig::default()).unwrap();
    let all: Vec<&EcqgSample> = out.train.iter().chain(&out.validation).chain(&out.test).collect();
    assert!(all.len() > 50);
    for s in &all {
        check_sample(s);
        assert!(!impossible.contains(s.id.as_str()), "{} is unanswerable", s.id);
    }
    assert_eq!(out.counts.impossible_removed, impossible.len());
    assert!(out.counts.no_central_entity > 0 && out.counts.answer_is_entity > 0);
    assert_eq!(out.counts.records, 200);
    assert_eq!(
        out.counts.emitted,
        out.counts.records - out.counts.impossible_removed - out.counts.no_central_entity - out.counts.answer_is_entity
    );
    // test split comes from dev, train/validation from train
    assert!(out.test.iter().all(|s| s.id.starts_with('d')));
    assert!(out.train.iter().chain(&out.validation).all(|s| s.id.starts_with('t')));
    // both entity rules contribute
    let titles: HashSet<String> = c.train.iter().map(|r| r.title.replace('_', " ")).collect();
    assert!(all.iter().any(|s| titles.contains(&s.entity)));
    assert!(all.iter().any(|s| !titles.contains(&s.entity)));
}

#[test]
fn split_fraction_and_seed() {
    let c = corpus();
    let a = build_dataset(&c, &ner(), &BuildConfig { val_fraction: 0.25, seed: 1 }).unwrap();
    let pool = a.train.len() + a.validation.len();
    assert_eq!(a.validation.len(), (pool as f64 * 0.25).round() as usize);
    let b = build_dataset(&c, &ner(), &BuildConfig { val_fraction: 0.25, seed: 2 }).unwrap();
    assert_eq!(b.train.len(), a.train.len());
    assert_ne!(a.validation, b.validation);
    assert!(build_dataset(&c, &ner(), &BuildConfig { val_fraction: 1.0, seed: 1 }).is_err());
}

#[test]
fn stats_are_ordered() {
    let out = build_dataset(&corpus(), &ner(), &BuildConfig::default()).unwrap();
    for (name, st) in out.stats() {
        if st.size == 0 {
            continue;
        }
        assert!(
            st.entity_len_min as f64 <= st.entity_len_mean && st.entity_len_mean <= st.entity_len_max as f64,
            "{name}"
        );
        assert!(st.context_len_min as f64 <= st.context_len_mean && st.context_len_mean <= st.context_len_max as f64);
        assert!(st.entity_len_min >= 1 && st.entity_len_max <= 10);
    }
}

fn sample(entity: &str, context: &str) -> EcqgSample {
    EcqgSample {
        id: "x".into(),
        context: context.into(),
        entity: entity.into(),
        question: "q".into(),
        answer_text: "a".into(),
        answer_start: 0,
    }
}

#[test]
fn stats_examples() {
    let ctx20 = vec!["w"; 20].join(" ");
    let st = compute_stats(&[sample("Beyonce", &ctx20)]);
    assert_eq!((st.entity_len_mean, st.entity_len_min, st.entity_len_max), (1.0, 1, 1));
    assert_eq!((st.context_len_mean, st.context_len_min, st.context_len_max), (20.0, 20, 20));
    let st = compute_stats(&[sample("A", "c"), sample("Queen of Hearts", "c")]);
    assert_eq!((st.entity_len_mean, st.entity_len_min, st.entity_len_max), (2.0, 1, 3));
    assert_eq!(compute_stats(&[]).size, 0);
}

fn record(id: &str, question: &str, answer: Option<(&str, usize)>) -> RawQA {
    RawQA {
        id: id.into(),
        title: "Beyonce".into(),
        context: "Beyonce rose to fame in the late 1990s as lead singer of Destiny's Child.".into(),
        question: question.into(),
        answers: answer.map(|(t, s)| vec![Answer::new(t, s)]).unwrap_or_default(),
        is_impossible: answer.is_none(),
    }
}

#[test]
fn ten_record_conservation() {
    let train = vec![
        record("a", "When did Beyonce become popular?", Some(("late 1990s", 28))),
        record("b", "What group did Beyonce lead?", Some(("Destiny's Child", 57))),
        record("c", "What was Beyonce's role?", Some(("lead singer", 42))),
        record("d", "Who is Beyonce?", Some(("Beyonce", 0))),
        record("e", "Who rose to fame?", Some(("Beyonce", 0))),
        record("f", "What did Beyonce eat?", None),
        record("g", "Where was Beyonce born?", None),
        record("h", "Who sang?", None),
        record("i", "When did Beyonce rise to fame?", Some(("1990s", 33))),
        record("j", "Did Beyonce sing lead?", Some(("lead singer", 42))),
    ];
    let c = SquadCorpus { train, dev: vec![] };
    let empty = DictionaryNer::new(Vec::<(String, String)>::new());
    let out = build_dataset(&c, &empty, &BuildConfig::default()).unwrap();
    assert_eq!(out.counts.impossible_removed, 3);
    // d: answer is the entity; e: no entity in the question
    assert_eq!(out.train.len() + out.validation.len(), 5);
    assert!(out.test.is_empty());
}

#[test]
fn empty_result_warns_instead_of_failing() {
    let c = SquadCorpus { train: vec![record("f", "What did Beyonce eat?", None)], dev: vec![] };
    let out = build_dataset(&c, &ner(), &BuildConfig::default()).unwrap();
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn malformed_documents_name_the_path() {
    let doc =
        json!({"data": [{"title": "T", "paragraphs": [{"context": "abc", "qas": [{"id": "q1", "question": "?"}]}]}]});
    match parse_squad(&doc) {
        Err(Error::Parse { path, .. }) => assert!(path.starts_with("data[0].paragraphs[0].qas[0]"), "{path}"),
        other => panic!("{other:?}"),
    }
    let doc = json!({"data": [{"title": "T", "paragraphs": [{"context": "abc", "qas": [
        {"id": "q1", "question": "?", "is_impossible": false, "answers": [{"text": "abc", "answer_start": 5}]}
    ]}]}]});
    assert!(matches!(parse_squad(&doc), Err(Error::Integrity { id, .. }) if id == "q1"));
}

#[test]
fn answer_truncated_away_is_an_alignment_error() {
    // 150 one-character words; the answer is word 140
    let words: Vec<String> = (0..150).map(|i| format!("w{i}")).collect();
    let context = words.join(" ");
    let answer_start: usize = words[..140].iter().map(|w| w.len() + 1).sum();
    let vocab = Vocab::build([context.as_str(), "Ent"], 1, None);
    let (ids, layout) = encode_source(&vocab, "Ent", &context, 128).unwrap();
    assert_eq!(ids.len(), 128);
    // hand offset table: entity at 0, separator at 1, context word k at 2 + k
    assert_eq!(layout.context_start, 2);
    assert_eq!(layout.context_spans[125], (answer_start - 15 * 5, answer_start - 15 * 5 + 4));
    assert!(matches!(align_span(&context, "w140", answer_start, &layout), Err(Error::Alignment(_))));
    let early = words[..5].iter().map(|w| w.len() + 1).sum();
    let bits = align_span(&context, "w5", early, &layout).unwrap();
    assert_eq!(bits.iter().position(|&b| b == 1), Some(2 + 5));
    assert_eq!(bits.iter().filter(|&&b| b == 1).count(), 1);
}

#[test]
fn single_file_input_and_explicit_dev() {
    let f = fixture();
    let (c, files) = load_squad_corpus(&f.join("train-v2.0.json"), None).unwrap();
    assert_eq!((c.train.len(), c.dev.len(), files.len()), (150, 0, 1));
    let (c, files) = load_squad_corpus(&f.join("train-v2.0.json"), Some(&f.join("dev-v2.0.json"))).unwrap();
    assert_eq!((c.dev.len(), files.len()), (50, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adding_records_never_removes_samples(keep in prop::collection::vec(any::<bool>(), 150), extra in 0usize..50) {
        let c = corpus();
        let subset: Vec<RawQA> = c.train.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r.clone()).collect();
        let bigger: Vec<RawQA> = subset.iter().cloned().chain(c.dev.iter().take(extra).cloned()).collect();
        let small = build_dataset(&SquadCorpus { train: subset, dev: vec![] }, &ner(), &BuildConfig::default()).unwrap();
        let large = build_dataset(&SquadCorpus { train: bigger, dev: vec![] }, &ner(), &BuildConfig::default()).unwrap();
        let ids = |o: &ecqg_core::data::BuildOutput| -> HashSet<String> {
            o.train.iter().chain(&o.validation).map(|s| s.id.clone()).collect()
        };
        prop_assert!(ids(&small).is_subset(&ids(&large)));
    }

    #[test]
    fn alignment_bits_lie_in_context(start in 0usize..60, len in 1usize..12) {
        let context = "Beyonce rose to fame in the late 1990s as lead singer of Destiny's Child.";
        let n = context.chars().count();
        let start = start.min(n - 1);
        let len = len.min(n - start);
        let answer = char_slice(context, start, len).unwrap();
        prop_assume!(!answer.trim().is_empty());
        let vocab = Vocab::build([context, "Beyonce"], 1, None);
        let (_, layout) = encode_source(&vocab, "Beyonce", context, 128).unwrap();
        let bits = align_span(context, &answer, start, &layout).unwrap();
        prop_assert!(bits.contains(&1));
        prop_assert!(bits[..layout.context_start].iter().all(|&b| b == 0));
        // each set bit's token overlaps the answer characters
        let toks = pretokenize(context);
        for (i, &b) in bits.iter().enumerate().skip(layout.context_start) {
            let t = &toks[i - layout.context_start];
            let overlaps = t.start < start + len && start < t.end;
            prop_assert_eq!(b == 1, overlaps);
        }
    }
}
