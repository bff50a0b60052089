#![allow(dead_code)]

pub mod oracle;

use ecqg_core::model::TokenBatch;
use rand::Rng;

/// A random but well-formed batch: every row has at least 2 source tokens,
/// at least 1 question token and one answer bit.
pub fn random_batch(rng: &mut impl Rng, b: usize, c: usize, q: usize, vocab: usize) -> TokenBatch {
    let mut out = TokenBatch {
        input_ids: vec![],
        attention_mask: vec![],
        focus_bits: vec![],
        answer_bits: vec![],
        question_ids: vec![],
        question_mask: vec![],
        ids: vec![],
    };
    for i in 0..b {
        let len = rng.random_range(2.min(c)..=c);
        let qlen = rng.random_range(1..=q);
        let mut ids: Vec<usize> = (0..c).map(|_| rng.random_range(5..vocab)).collect();
        ids[0] = rng.random_range(5..vocab);
        if len > 1 {
            ids[1] = 4;
        }
        let mask: Vec<u8> = (0..c).map(|j| u8::from(j < len)).collect();
        for (j, id) in ids.iter_mut().enumerate() {
            if j >= len {
                *id = 0;
            }
        }
        let start = rng.random_range(0..len);
        let end = rng.random_range(start..len);
        let bits: Vec<u8> = (0..c).map(|j| u8::from(j >= start && j <= end)).collect();
        let qids: Vec<usize> = (0..q)
            .map(|j| match j.cmp(&(qlen - 1)) {
                std::cmp::Ordering::Less => rng.random_range(5..vocab),
                std::cmp::Ordering::Equal => 3,
                std::cmp::Ordering::Greater => 0,
            })
            .collect();
        out.input_ids.push(ids);
        out.attention_mask.push(mask);
        out.focus_bits.push(bits.clone());
        out.answer_bits.push(bits);
        out.question_ids.push(qids);
        out.question_mask.push((0..q).map(|j| u8::from(j < qlen)).collect());
        out.ids.push(format!("r{i}"));
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
