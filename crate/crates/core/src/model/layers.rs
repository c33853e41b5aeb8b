//! Differentiable building blocks of the ranking model, written as free
//! functions over a [`Tape`] so they can be checked in isolation.

use crate::diffkernel::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Concatenated per-level token embeddings: `tables[k]` is `[K, d_token]`,
/// `codes[i][k]` the level-`k` index of row `i`. Returns `[B, L * d_token]`.
pub fn sid_embed(tape: &mut Tape, tables: &[Var], codes: &[Vec<Option<usize>>]) -> Result<Var> {
    if codes.iter().any(|c| c.len() != tables.len()) {
        return Err(Error::Shape {
            op: "sid_embed",
            detail: format!("{} tables but a code of different length", tables.len()),
        });
    }
    let parts = tables
        .iter()
        .enumerate()
        .map(|(k, &table)| {
            let idx: Vec<Option<usize>> = codes.iter().map(|c| c[k]).collect();
            tape.gather(table, &idx)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&parts)
}

/// `softmax(((target W_q) . (seq W_k)) / sqrt(d))` over unmasked positions.
///
/// `target: [B, D]`, `seq: [B, T, D]`, `w_q, w_k: [D, d]`, `mask: B * T`.
/// The keys are never materialized: `(t W_q) W_k^T` is dotted with raw rows.
pub fn intra_attention(tape: &mut Tape, target: Var, seq: Var, w_q: Var, w_k: Var, mask: &[bool]) -> Result<Var> {
    let d = tape.value(w_q).cols();
    if tape.value(w_k).cols() != d {
        return Err(Error::Shape {
            op: "intra_attention",
            detail: format!(
                "query dim {d} vs key dim {}",
                tape.value(w_k).cols()
            ),
        });
    }
    let q = tape.matmul(target, w_q)?;
    let qk = tape.matmul_t(q, w_k)?;
    let scores = tape.batched_matvec(seq, qk)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    tape.softmax_rows(scaled, Some(mask))
}

/// `w * s_sid + (1 - w) * s_item` with `w: [B, 1]`.
pub fn fuse_attention(tape: &mut Tape, s_sid: Var, s_item: Var, w: Var) -> Result<Var> {
    if tape.value(s_sid).shape() != tape.value(s_item).shape() {
        return Err(Error::Shape {
            op: "fuse_attention",
            detail: format!(
                "{:?} vs {:?}",
                tape.value(s_sid).shape(),
                tape.value(s_item).shape()
            ),
        });
    }
    let one_minus = tape.affine(w, -1.0, 1.0)?;
    let a = tape.scale_rows(s_sid, w)?;
    let b = tape.scale_rows(s_item, one_minus)?;
    tape.add(a, b)
}

/// Applies one distribution to both raw sequences; no value projection.
pub fn pool_sequences(tape: &mut Tape, s: Var, h_sid: Var, h_item: Var) -> Result<(Var, Var)> {
    Ok((tape.weighted_sum(s, h_sid)?, tape.weighted_sum(s, h_item)?))
}

/// Indices of the first occurrence of each id, in order.
pub fn dedup_first(ids: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    (0..ids.len()).filter(|&i| seen.insert(ids[i])).collect()
}

/// Gate-weighted InfoNCE with cosine similarity and in-batch negatives.
///
/// `w` enters as constants, so no gradient reaches the gate from here.
pub fn contrastive_loss(tape: &mut Tape, e_sid: Var, e_item: Var, w: &[f64], tau: f64) -> Result<Var> {
    let n = tape.value(e_sid).rows();
    if w.len() != n || tape.value(e_item).rows() != n {
        return Err(Error::Shape {
            op: "contrastive_loss",
            detail: format!(
                "{n} sid rows, {} item rows, {} weights",
                tape.value(e_item).rows(),
                w.len()
            ),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let sim = tape.cosine_matrix(e_sid, e_item)?;
    let logits = tape.scale(sim, 1.0 / tau)?;
    let log_p = tape.log_softmax_rows(logits)?;
    let pos = tape.diag(log_p)?;
    let weighted = tape.mul_const(pos, &Tensor::vector(w.to_vec()))?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0 / n as f64)
}

/// `l_rank + lambda * l_cl`; with `lambda == 0` the contrastive term is
/// dropped entirely.
pub fn total_loss(tape: &mut Tape, l_rank: Var, l_cl: Option<Var>, lambda: f64) -> Result<Var> {
    match l_cl {
        Some(l_cl) if lambda != 0.0 => {
            let s = tape.scale(l_cl, lambda)?;
            tape.add(l_rank, s)
        }
        _ => Ok(l_rank),
    }
}
