use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};

pub const ALPHA: f64 = 0.9;
pub const BETA: f64 = 3.0;
pub const GAMMA: f64 = 0.5;

/// Greedy one-to-one matching of equal keys: hypothesis words are visited
/// from last to first and each takes the highest unused reference position.
/// Returns matched (hyp, ref) original indices and the leftovers of both sides.
fn match_keys(hyp: &[(usize, String)], reference: &[(usize, String)]) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, (_, w)) in reference.iter().enumerate() {
        positions.entry(w.as_str()).or_default().push(j);
    }
    let mut matched = Vec::new();
    let mut hyp_used = vec![false; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    for i in (0..hyp.len()).rev() {
        if let Some(j) = positions.get_mut(hyp[i].1.as_str()).and_then(Vec::pop) {
            hyp_used[i] = true;
            ref_used[j] = true;
            matched.push((hyp[i].0, reference[j].0));
        }
    }
    let left = |used: &[bool]| (0..used.len()).filter(|&k| !used[k]).collect();
    (matched, left(&hyp_used), left(&ref_used))
}

fn count_chunks(matches: &[(usize, usize)]) -> usize {
    let mut chunks = 1;
    for w in matches.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    chunks
}

/// Sentence METEOR with exact and stem matching (Snowball English stemmer),
/// on `[0, 1]`. Inputs are lowercased before matching.
pub fn meteor(hypothesis: &[String], reference: &[String]) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    let hyp: Vec<(usize, String)> = hypothesis.iter().map(|w| w.to_lowercase()).enumerate().collect();
    let reference: Vec<(usize, String)> = reference.iter().map(|w| w.to_lowercase()).enumerate().collect();
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (mut matches, hyp_left, ref_left) = match_keys(&hyp, &reference);
    let stem = |side: &[(usize, String)], keep: &[usize]| -> Vec<(usize, String)> {
        keep.iter().map(|&k| (side[k].0, stemmer.stem(&side[k].1).into_owned())).collect()
    };
    let (stem_matches, _, _) = match_keys(&stem(&hyp, &hyp_left), &stem(&reference, &ref_left));
    matches.extend(stem_matches);
    if matches.is_empty() {
        return 0.0;
    }
    matches.sort_by_key(|m| m.0);
    let m = matches.len() as f64;
    let precision = m / hyp.len() as f64;
    let recall = m / reference.len() as f64;
    let fmean = precision * recall / (ALPHA * precision + (1.0 - ALPHA) * recall);
    let frag = count_chunks(&matches) as f64 / m;
    (1.0 - GAMMA * frag.powf(BETA)) * fmean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn no_match_is_zero() {
        assert_eq!(meteor(&t("non matching hypothesis"), &t("this is a cat")), 0.0);
        assert_eq!(meteor(&[], &t("a")), 0.0);
    }

    #[test]
    fn identity_has_a_single_chunk() {
        // m = 5, P = R = 1, one chunk: (1 - 0.5 * (1/5)^3)
        let s = t("when did beyonce become popular");
        assert!((meteor(&s, &s) - (1.0 - 0.5 * 0.2f64.powi(3))).abs() < 1e-12);
    }

    #[test]
    fn stems_match_after_exact() {
        assert!(meteor(&t("running"), &t("runs")) > 0.0);
    }
}
