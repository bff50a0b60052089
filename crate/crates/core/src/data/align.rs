use super::char_slice;
use crate::error::{Error, Result};

/// Where the context tokens sit inside an `entity <sep> context` input.
///
/// `context_spans[k]` is the character range of the k-th context token that
/// survived truncation; it occupies input position `context_start + k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLayout {
    pub len: usize,
    pub context_start: usize,
    pub context_spans: Vec<(usize, usize)>,
}

/// Maps a character-level answer span to per-token labels over the whole input.
///
/// A token is labelled 1 iff its character range overlaps
/// `[answer_start, answer_start + len(answer_text))`. Entity and separator
/// positions are always 0.
pub fn align_span(context: &str, answer_text: &str, answer_start: usize, layout: &SourceLayout) -> Result<Vec<u8>> {
    let answer_len = answer_text.chars().count();
    match char_slice(context, answer_start, answer_len) {
        Some(s) if s == answer_text => {}
        _ => {
            return Err(Error::Precondition(format!(
                "answer {answer_text:?} is not at offset {answer_start} of the context"
            )))
        }
    }
    if layout.context_start + layout.context_spans.len() > layout.len {
        return Err(Error::Precondition("layout spans exceed input length".into()));
    }
    let end = answer_start + answer_len;
    let mut bits = vec![0u8; layout.len];
    let mut any = false;
    for (k, &(s, e)) in layout.context_spans.iter().enumerate() {
        if s < end && answer_start < e {
            bits[layout.context_start + k] = 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::Alignment(format!(
            "answer {answer_text:?} at {answer_start} lies outside the {} retained context tokens",
            layout.context_spans.len()
        )));
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::pretokenize;

    fn layout(context: &str, entity_tokens: usize, max_len: usize) -> SourceLayout {
        let start = entity_tokens + 1;
        let spans: Vec<_> = pretokenize(context).into_iter().map(|t| (t.start, t.end)).take(max_len - start).collect();
        SourceLayout { len: start + spans.len(), context_start: start, context_spans: spans }
    }

    #[test]
    fn single_token_answer() {
        let ctx = "Beyonce rose to fame in 1998 .";
        let bits = align_span(ctx, "1998", 24, &layout(ctx, 1, 128)).unwrap();
        assert_eq!(bits.iter().filter(|&&b| b == 1).count(), 1);
        assert_eq!(bits[2 + 5], 1);
    }

    #[test]
    fn multi_token_answer_sets_contiguous_bits() {
        let ctx = "a b c d e f g h i";
        // tokens f g h are context positions 5, 6, 7
        let l = SourceLayout {
            len: 9,
            context_start: 0,
            context_spans: pretokenize(ctx).into_iter().map(|t| (t.start, t.end)).collect(),
        };
        let bits = align_span(ctx, "f g h", 10, &l).unwrap();
        let set: Vec<usize> = bits.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect();
        assert_eq!(set, vec![5, 6, 7]);
    }

    #[test]
    fn truncated_answer_is_an_alignment_error() {
        // 200 single-char words; the answer is word 150, beyond 128 input tokens
        let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let ctx = words.join(" ");
        // hand offset table: word i starts at sum of lengths of previous words plus spaces
        let start: usize = words[..150].iter().map(|w| w.len() + 1).sum();
        assert_eq!(&ctx[start..start + 4], "w150");
        let l = layout(&ctx, 2, 128);
        assert_eq!(l.context_spans.len(), 125);
        assert!(matches!(align_span(&ctx, "w150", start, &l), Err(Error::Alignment(_))));
        // the last retained token (w124) still aligns
        let last: usize = words[..124].iter().map(|w| w.len() + 1).sum();
        let bits = align_span(&ctx, "w124", last, &l).unwrap();
        assert_eq!(bits[127], 1);
    }

    #[test]
    fn partial_overlap_counts() {
        let ctx = "late 1990s";
        let l = layout(ctx, 1, 128);
        let bits = align_span(ctx, "te 19", 2, &l).unwrap();
        assert_eq!(bits, vec![0, 0, 1, 1]);
    }
}
