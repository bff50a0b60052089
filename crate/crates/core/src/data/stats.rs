use serde::{Deserialize, Serialize};

use super::{EcqgSample, Split};

/// Size and whitespace-word length statistics of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub split: Split,
    pub size: usize,
    pub entity_len_mean: f64,
    pub entity_len_min: usize,
    pub entity_len_max: usize,
    pub context_len_mean: f64,
    pub context_len_min: usize,
    pub context_len_max: usize,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn summary(lengths: impl Iterator<Item = usize>) -> (f64, usize, usize) {
    let (mut n, mut sum, mut min, mut max) = (0usize, 0usize, usize::MAX, 0usize);
    for l in lengths {
        n += 1;
        sum += l;
        min = min.min(l);
        max = max.max(l);
    }
    if n == 0 {
        return (0.0, 0, 0);
    }
    (round2(sum as f64 / n as f64), min, max)
}

/// Whitespace word counts; means rounded to two decimals. The `split` field
/// defaults to train and is set by the caller.
pub fn compute_stats(samples: &[EcqgSample]) -> DatasetStats {
    let (em, emin, emax) = summary(samples.iter().map(|s| s.entity.split_whitespace().count()));
    let (cm, cmin, cmax) = summary(samples.iter().map(|s| s.context.split_whitespace().count()));
    DatasetStats {
        split: Split::Train,
        size: samples.len(),
        entity_len_mean: em,
        entity_len_min: emin,
        entity_len_max: emax,
        context_len_mean: cm,
        context_len_min: cmin,
        context_len_max: cmax,
    }
}
