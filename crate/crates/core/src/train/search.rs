use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_with_seed, TrainConfig};
use crate::data::EcqgSample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_records, write_text_records, EvalReport, EvalSettings, ScoreRow, TextRecord};
use crate::model::{Checkpoint, DecodeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRun {
    pub learning_rate: f64,
    pub best_validation_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSearch {
    pub best: f64,
    pub runs: Vec<LrRun>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::NonFiniteGradient(_))
}

/// Runs `run` for every rate and keeps the one with the lowest returned
/// validation loss. Diverged runs are eliminated; other errors propagate.
/// Ties keep the earlier rate.
pub fn select_learning_rate(grid: &[f64], mut run: impl FnMut(f64) -> Result<f64>) -> Result<LrSearch> {
    if grid.is_empty() {
        return Err(Error::Config("learning-rate grid is empty".into()));
    }
    let mut runs = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut last_divergence = None;
    for &lr in grid {
        match run(lr) {
            Ok(loss) if loss.is_finite() => {
                if best.is_none_or(|(_, b)| loss < b) {
                    best = Some((lr, loss));
                }
                runs.push(LrRun { learning_rate: lr, best_validation_loss: Some(loss), error: None });
            }
            Ok(loss) => runs.push(LrRun {
                learning_rate: lr,
                best_validation_loss: None,
                error: Some(format!("validation loss {loss}")),
            }),
            Err(e) if is_divergence(&e) => {
                warn!("learning rate {lr} diverged: {e}");
                runs.push(LrRun { learning_rate: lr, best_validation_loss: None, error: Some(e.to_string()) });
                last_divergence = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((lr, _)) => Ok(LrSearch { best: lr, runs }),
        None => Err(last_divergence.unwrap_or_else(|| Error::Divergence {
            epoch: 0,
            step: 0,
            message: "no learning rate produced a finite validation loss".into(),
            dump: None,
        })),
    }
}

/// One training run per rate in `config.lr_grid`, first seed, selected by
/// best validation `loss_total`.
pub fn lr_search(train: &[EcqgSample], validation: &[EcqgSample], config: &TrainConfig) -> Result<LrSearch> {
    select_learning_rate(&config.lr_grid, |lr| {
        let cfg = TrainConfig { learning_rate: lr, ..config.clone() };
        let (_, history) = train_with_seed(train, validation, &cfg, cfg.seeds[0], None)?;
        Ok(history.best_validation_loss)
    })
}

/// Generates one question per sample, in input order.
pub fn predict(ckpt: &Checkpoint, samples: &[EcqgSample], opts: &DecodeOptions) -> Result<Vec<TextRecord>> {
    samples
        .par_iter()
        .map(|s| {
            Ok(TextRecord { id: s.id.clone(), text: ckpt.model.generate(&ckpt.vocab, &s.entity, &s.context, opts)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub per_seed: Vec<SeedReport>,
    pub mean: ScoreRow,
}

/// Trains once per seed, scores generated test questions, and averages the
/// corpus metrics. With `out`, each seed writes `seed_<s>/` (checkpoint,
/// history, predictions, report) and the average goes to `summary.json`.
pub fn multi_seed(
    train: &[EcqgSample],
    validation: &[EcqgSample],
    test: &[EcqgSample],
    config: &TrainConfig,
    opts: &DecodeOptions,
    out: Option<&Path>,
) -> Result<MultiSeedReport> {
    let references: Vec<TextRecord> =
        test.iter().map(|s| TextRecord { id: s.id.clone(), text: s.question.clone() }).collect();
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let dir = out.map(|o| o.join(format!("seed_{seed}")));
        let (ckpt, history) = train_with_seed(train, validation, config, seed, dir.as_deref())?;
        let preds = predict(&ckpt, test, opts)?;
        let report = evaluate_records(&preds, &references, EvalSettings::default())?;
        if let Some(d) = &dir {
            write_text_records(&d.join("predictions.jsonl"), &preds)?;
            std::fs::write(d.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        }
        per_seed.push(SeedReport { seed, best_epoch: history.best_epoch, report });
    }
    let rows: Vec<ScoreRow> = per_seed.iter().map(|s| s.report.scores()).collect();
    let result = MultiSeedReport { mean: ScoreRow::mean(&rows)?, per_seed };
    if let Some(o) = out {
        std::fs::write(o.join("summary.json"), serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_grid_returns_its_rate() {
        let s = select_learning_rate(&[2e-5], |_| Ok(3.0)).unwrap();
        assert_eq!(s.best, 2e-5);
    }

    #[test]
    fn diverged_rates_are_eliminated() {
        let s = select_learning_rate(&[1e-5, 1e-4], |lr| {
            if lr > 5e-5 {
                Err(Error::Divergence { epoch: 1, step: 3, message: "nan".into(), dump: None })
            } else {
                Ok(9.0)
            }
        })
        .unwrap();
        assert_eq!(s.best, 1e-5);
        assert!(s.runs[1].error.is_some());
        let all_bad = select_learning_rate(&[1e-4], |_| Err(Error::NonFiniteGradient("w".into())));
        assert!(matches!(all_bad, Err(Error::NonFiniteGradient(_))));
        let other = select_learning_rate(&[1e-4, 1e-5], |_| Err(Error::Config("x".into())));
        assert!(matches!(other, Err(Error::Config(_))));
    }

    #[test]
    fn picks_argmin() {
        let losses = [3.0, 1.5, 2.0, 1.5];
        let grid = [1e-5, 2e-5, 5e-5, 1e-4];
        let s = select_learning_rate(&grid, |lr| Ok(losses[grid.iter().position(|&g| g == lr).unwrap()])).unwrap();
        assert_eq!(s.best, 2e-5);
    }
}
