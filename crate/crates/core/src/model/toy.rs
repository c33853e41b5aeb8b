//! A 2-user, 4-item model small enough for exhaustive finite differences.

use rand::Rng as _;

use super::config::{LossConfig, ModelConfig, Variant};
use super::data::Example;
use super::net::GateSid;
use crate::diffkernel::{grad_check, GradCheckOptions, GradCheckReport, Tape};
use crate::error::Result;
use crate::rng;
use crate::rqvae::{SemanticId, SidTable};
use crate::synthcorpus::{StatFeatures, N_STATS};

pub struct ToyProblem {
    pub model: GateSid,
    pub batch: Vec<Example>,
    pub sids: SidTable,
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        n_items: 4,
        n_users: 2,
        levels: 2,
        codes_per_level: 3,
        d_token: 2,
        d_item: 4,
        d_attn: 3,
        gate_hidden: vec![3],
        head_hidden: vec![5, 4],
        use_user_embedding: true,
        d_user: 2,
        l_max: 3,
        init_std: 0.5,
        ..ModelConfig::default()
    }
}

/// Items 0 and 2 share a first-level code; the batch repeats item 1 and
/// includes an empty history.
pub fn toy_problem(variant: Variant, loss: LossConfig, seed: u64) -> Result<ToyProblem> {
    let codes = [[0, 1], [1, 2], [0, 2], [2, 0]];
    let rows = codes
        .iter()
        .enumerate()
        .map(|(item_id, c)| SemanticId { item_id, indices: c.to_vec() })
        .collect();
    let sids = SidTable::new(2, 3, rows)?;
    let mut model = GateSid::new(variant, &toy_config(), loss, &sids, seed)?;

    let mut r = rng::stream(seed, "toy/batch");
    // Zero biases can leave a ReLU exactly on its kink when every input
    // unit is inactive; finite differences are meaningless there.
    for id in model.store.ids() {
        let p = model.store.get_mut(id);
        if p.name.ends_with(".b") {
            p.value.data_mut().iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
    }
    let layout: [(usize, usize, &[usize], bool, bool); 6] = [
        (0, 1, &[0, 2, 3], true, true),
        (1, 1, &[2], false, false),
        (0, 3, &[], true, false),
        (1, 0, &[1, 3], true, true),
        (0, 2, &[0, 1], false, false),
        (1, 1, &[3, 0, 2], true, false),
    ];
    let batch = layout
        .iter()
        .map(|&(user, item, history, click, pay)| {
            let mut stats = [0.0; N_STATS];
            stats.iter_mut().for_each(|s| *s = r.random_range(-1.0..1.0));
            Example {
                user,
                item,
                history: history.to_vec(),
                raw_stats: StatFeatures::default(),
                stats,
                click,
                pay,
                day: 0,
            }
        })
        .collect();
    Ok(ToyProblem { model, batch, sids })
}

/// Checks the gradient of the total loss with respect to every trainable
/// parameter. Contrastive weights stay at their unperturbed gate values,
/// since the gate is not differentiated through that term.
pub fn full_loss_grad_check(problem: &ToyProblem, tolerance: f64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let ToyProblem { model, batch, .. } = problem;
    let w = {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, batch)?;
        tape.value(out.w).data().to_vec()
    };
    let mut store = model.store.clone();
    grad_check(
        |tape, store| {
            let out = model.forward_in(store, tape, batch)?;
            Ok(model.loss_with_weights(tape, batch, &out, Some(&w))?.total)
        },
        &mut store,
        tolerance,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_passes() {
        for v in Variant::ALL {
            let p = toy_problem(v, LossConfig::default(), 3).unwrap();
            let report = full_loss_grad_check(&p, 1e-4, &GradCheckOptions::default()).unwrap();
            assert!(report.all_passed(), "{v}: max rel error {}", report.max_rel_error());
        }
    }
}
