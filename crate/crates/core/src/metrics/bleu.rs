use std::collections::HashMap;

/// Corpus BLEU smoothing for zero n-gram matches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// A zero precision at any order makes the score 0.
    #[default]
    None,
    /// Adds 0.1 to zero numerators.
    Epsilon,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches and the candidate n-gram count of one pair.
fn modified_precision(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let clipped = cand.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
    (clipped, cand.values().sum())
}

/// Corpus-level BLEU-`n` with uniform weights and brevity penalty, on `[0, 1]`.
///
/// Follows the common corpus formulation: precisions are pooled over the
/// corpus and the brevity penalty compares total candidate and reference
/// lengths. A sentence shorter than `n` adds nothing to the order-`n`
/// denominator, so an identity corpus scores 1 whenever any sentence has
/// `n` tokens.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<String>)], n: usize, smoothing: Smoothing) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must lie in 1..=4");
    let mut num = vec![0usize; n + 1];
    let mut den = vec![0usize; n + 1];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, reference) in pairs {
        for k in 1..=n {
            let (a, b) = modified_precision(cand, reference, k);
            num[k] += a;
            den[k] += b;
        }
        c_len += cand.len();
        r_len += reference.len();
    }
    if num[1] == 0 {
        return 0.0;
    }
    let bp = if c_len > r_len {
        1.0
    } else if c_len == 0 {
        0.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let mut log_sum = 0.0;
    for k in 1..=n {
        if den[k] == 0 {
            return 0.0;
        }
        let p = match (num[k], smoothing) {
            (0, Smoothing::None) => return 0.0,
            (0, Smoothing::Epsilon) => 0.1 / den[k] as f64,
            (m, _) => m as f64 / den[k] as f64,
        };
        log_sum += p.ln() / n as f64;
    }
    bp * log_sum.exp()
}
