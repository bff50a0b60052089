//! Loss functions over plain arrays.
//!
//! The probability-based entry points mirror the graph losses used in
//! training and serve as their reference.

use ndarray::{ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::config::check_lambda;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub qg: f64,
    pub cf: Option<f64>,
    pub qv: Option<f64>,
}

impl LossParts {
    pub fn total(&self, lambda1: f64, lambda2: f64) -> f64 {
        let mut t = self.qg;
        if let Some(cf) = self.cf {
            t += lambda1 * cf;
        }
        if let Some(qv) = self.qv {
            t += lambda2 * qv;
        }
        t
    }
}

fn view3(t: &Tensor) -> Result<ArrayView3<'_, f64>> {
    t.view().into_dimensionality().map_err(|_| Error::Shape(format!("expected a rank-3 tensor, got {:?}", t.shape())))
}

fn check_rows(name: &str, rows: &[Vec<u8>], b: usize, w: usize) -> Result<()> {
    if rows.len() != b || rows.iter().any(|r| r.len() != w) {
        return Err(Error::Shape(format!("{name} is not [{b} x {w}]")));
    }
    Ok(())
}

/// Two-class token cross-entropy on log-probabilities `[B, C, 2]`; class 0 is
/// the positive class. Averaged over unmasked tokens, or, with `literal`,
/// `-sum(bit * log p0)` over the batch divided by `B`.
pub fn token_ce_from_log(logp: ArrayView3<'_, f64>, bits: &[Vec<u8>], mask: &[Vec<u8>], literal: bool) -> Result<f64> {
    let (b, c, k) = logp.dim();
    if k != 2 {
        return Err(Error::Shape(format!("expected two classes, got {k}")));
    }
    check_rows("bits", bits, b, c)?;
    check_rows("mask", mask, b, c)?;
    let n: usize = mask.iter().flatten().filter(|&&m| m == 1).count();
    if n == 0 {
        return Err(Error::Input("every token is masked; the token loss is undefined".into()));
    }
    let mut sum = 0.0;
    for i in 0..b {
        for j in 0..c {
            if mask[i][j] == 0 {
                continue;
            }
            if literal {
                if bits[i][j] == 1 {
                    sum -= logp[[i, j, 0]];
                }
            } else {
                sum -= logp[[i, j, if bits[i][j] == 1 { 0 } else { 1 }]];
            }
        }
    }
    Ok(if literal { sum / b as f64 } else { sum / n as f64 })
}

/// Mean negative log-likelihood of the gold ids over unmasked positions.
pub fn nll_from_log(logp: ArrayView3<'_, f64>, ids: &[Vec<usize>], mask: &[Vec<u8>]) -> Result<f64> {
    let (b, q, v) = logp.dim();
    check_rows("question mask", mask, b, q)?;
    if ids.len() != b || ids.iter().any(|r| r.len() != q) {
        return Err(Error::Shape(format!("question ids are not [{b} x {q}]")));
    }
    let m: usize = mask.iter().flatten().filter(|&&x| x == 1).count();
    if m == 0 {
        return Err(Error::Input("no unmasked question token".into()));
    }
    let mut sum = 0.0;
    for i in 0..b {
        for j in 0..q {
            if mask[i][j] == 1 {
                let id = ids[i][j];
                if id >= v {
                    return Err(Error::Contract(format!("token id {id} outside vocabulary of {v}")));
                }
                sum -= logp[[i, j, id]];
            }
        }
    }
    Ok(sum / m as f64)
}

/// Content-focus loss on class probabilities `[B, C, 2]`.
pub fn cf_loss(h_f: &Tensor, focus_bits: &[Vec<u8>], mask: &[Vec<u8>], literal: bool) -> Result<f64> {
    token_ce_from_log(view3(&h_f.mapv(f64::ln))?, focus_bits, mask, literal)
}

/// Verification loss; same contract as [`cf_loss`] with answer bits as targets.
pub fn qv_loss(h_a: &Tensor, answer_bits: &[Vec<u8>], mask: &[Vec<u8>], literal: bool) -> Result<f64> {
    token_ce_from_log(view3(&h_a.mapv(f64::ln))?, answer_bits, mask, literal)
}

/// Question-generation loss on decoding distributions `[B, Q, V]`.
pub fn qg_loss(p_q: &Tensor, question_ids: &[Vec<usize>], question_mask: &[Vec<u8>]) -> Result<f64> {
    nll_from_log(view3(&p_q.mapv(f64::ln))?, question_ids, question_mask)
}

pub fn total_loss(l_qg: f64, l_cf: f64, l_qv: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    check_lambda(lambda1, lambda2)?;
    Ok(l_qg + lambda1 * l_cf + lambda2 * l_qv)
}

/// Per-row losses of a batch, each computed as if the row were alone.
pub(crate) fn per_row<T: Clone>(rows: &[Vec<T>], i: usize) -> Vec<Vec<T>> {
    vec![rows[i].clone()]
}

pub(crate) fn row3(t: &Tensor, i: usize) -> Result<ArrayView3<'_, f64>> {
    Ok(view3(t)?.index_axis_move(Axis(0), i).insert_axis(Axis(0)))
}
