use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Fusion, GateInputs, LossConfig, ModelConfig, Variant};
use super::data::Example;
use super::layers::{contrastive_loss, dedup_first, fuse_attention, intra_attention, pool_sequences, sid_embed, total_loss};
use crate::diffkernel::{load_into, save_checkpoint, AdamWConfig, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{glorot, normal, Mlp};
use crate::rng;
use crate::rqvae::SidTable;
use crate::synthcorpus::{StatNormalizer, N_STATS};

#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    /// `[n_items + 1, d_item]`; row 0 is the frozen zero pad.
    pub item: ParamId,
    /// One `[K, d_token]` table per level.
    pub sid: Vec<ParamId>,
    pub user: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub q_sid: ParamId,
    pub k_sid: ParamId,
    pub q_item: ParamId,
    pub k_item: ParamId,
}

/// Tape handles produced by one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub ctr_logit: Var,
    pub ctcvr_logit: Var,
    /// `[B, 1]`.
    pub w: Var,
    pub e_sid: Var,
    pub e_item: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub rank: Var,
    pub contrastive: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p_ctr: f64,
    pub p_ctcvr: f64,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub variant: Variant,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub normalizer: StatNormalizer,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct GateSid {
    pub config: ModelConfig,
    pub variant: Variant,
    pub loss: LossConfig,
    pub store: ParamStore,
    pub tables: EmbeddingTables,
    /// Absent for the frozen-average variant.
    pub gate: Option<Mlp>,
    pub attention: AttentionParams,
    pub head: Mlp,
    /// Row-major `[n_items, levels]` code indices.
    codes: Vec<usize>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Builds the configured model. Parameters are drawn from per-group streams
/// of `seed`, so variants sharing a group share its initial values.
pub fn make_variant(
    name: &str,
    config: &ModelConfig,
    loss: LossConfig,
    sids: &SidTable,
    seed: u64,
) -> Result<GateSid> {
    GateSid::new(name.parse()?, config, loss, sids, seed)
}

impl GateSid {
    pub fn new(variant: Variant, config: &ModelConfig, loss: LossConfig, sids: &SidTable, seed: u64) -> Result<Self> {
        config.validate()?;
        let loss = variant.loss(loss);
        loss.validate()?;
        if sids.len() != config.n_items
            || sids.levels() != config.levels
            || sids.codes_per_level() != config.codes_per_level
        {
            return Err(Error::Config(format!(
                "SID table ({} items, {} levels, {} codes) does not match model ({} items, {} levels, {} codes)",
                sids.len(),
                sids.levels(),
                sids.codes_per_level(),
                config.n_items,
                config.levels,
                config.codes_per_level
            )));
        }
        let codes = sids.rows().iter().flat_map(|s| s.indices.iter().copied()).collect();
        let c = config;
        let mut store = ParamStore::new();

        let mut r = rng::stream(seed, "model/item");
        let mut item_init = normal(&mut r, &[c.n_items + 1, c.d_item], c.init_std);
        item_init.row_mut(0).fill(0.0);
        let item = store.add("emb.item", item_init)?;
        store.get_mut(item).frozen_rows = vec![0];
        store.get_mut(item).decay = c.decay_embeddings;

        let mut r = rng::stream(seed, "model/sid");
        let sid = (0..c.levels)
            .map(|k| {
                let id = store.add(format!("emb.sid.{k}"), normal(&mut r, &[c.codes_per_level, c.d_token], c.init_std))?;
                store.get_mut(id).decay = c.decay_embeddings;
                Ok(id)
            })
            .collect::<Result<Vec<_>>>()?;

        let user = if c.use_user_embedding {
            let mut r = rng::stream(seed, "model/user");
            let id = store.add("emb.user", normal(&mut r, &[c.n_users, c.d_user], c.init_std))?;
            store.get_mut(id).decay = c.decay_embeddings;
            Some(id)
        } else {
            None
        };

        let mut r = rng::stream(seed, "model/attention");
        let attention = AttentionParams {
            q_sid: store.add("attn.q_sid", glorot(&mut r, c.d_sid(), c.d_attn))?,
            k_sid: store.add("attn.k_sid", glorot(&mut r, c.d_sid(), c.d_attn))?,
            q_item: store.add("attn.q_item", glorot(&mut r, c.d_item, c.d_attn))?,
            k_item: store.add("attn.k_item", glorot(&mut r, c.d_item, c.d_attn))?,
        };

        let mut r = rng::stream(seed, "model/head");
        let mut head_in = 2 * c.d_sid() + 2 * c.d_item + N_STATS + if c.use_user_embedding { c.d_user } else { 0 };
        if c.head_interactions {
            head_in += c.d_sid() + c.d_item;
        }
        let mut dims = vec![head_in];
        dims.extend(&c.head_hidden);
        dims.push(2);
        let head = Mlp::new(&mut store, "head", &dims, &mut r)?;

        let gate = if variant.fusion() == Fusion::Average {
            None
        } else {
            let mut r = rng::stream(seed, "model/gate");
            let gate_in = match variant.gate_inputs() {
                GateInputs::Both => c.d_item + N_STATS,
                GateInputs::ItemOnly => c.d_item,
                GateInputs::StatsOnly => N_STATS,
            };
            let mut dims = vec![gate_in];
            dims.extend(&c.gate_hidden);
            dims.push(1);
            let mlp = Mlp::new(&mut store, "gate", &dims, &mut r)?;
            let out_bias = mlp.layers.last().expect("at least one layer").bias;
            store.get_mut(out_bias).value.data_mut()[0] = c.gate_bias_init;
            Some(mlp)
        };

        // Parameters that never reach the ranking loss stay fixed.
        if variant.fusion() == Fusion::ItemOnly {
            for id in [attention.q_sid, attention.k_sid] {
                store.get_mut(id).requires_grad = false;
            }
            for id in gate.iter().flat_map(Mlp::param_ids) {
                store.get_mut(id).requires_grad = false;
            }
        }

        Ok(Self {
            config: c.clone(),
            variant,
            loss,
            store,
            tables: EmbeddingTables { item, sid, user },
            gate,
            attention,
            head,
            codes,
        })
    }

    pub fn sid_of(&self, item: usize) -> &[usize] {
        let l = self.config.levels;
        &self.codes[item * l..(item + 1) * l]
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.config.n_items {
            return Err(Error::IndexOutOfRange {
                what: "item id",
                index: item,
                size: self.config.n_items,
            });
        }
        Ok(())
    }

    fn sid_codes(&self, items: &[Option<usize>]) -> Vec<Vec<Option<usize>>> {
        items
            .iter()
            .map(|o| match o {
                Some(i) => self.sid_of(*i).iter().map(|&k| Some(k)).collect(),
                None => vec![None; self.config.levels],
            })
            .collect()
    }

    /// Gate output `[B, 1]` for target embeddings `e_item: [B, d_item]` and
    /// normalized statistics `stats: [B, N_STATS]`.
    pub fn gate_weight(&self, tape: &mut Tape, e_item: Var, stats: Var) -> Result<Var> {
        self.gate_weight_in(&self.store, tape, e_item, stats)
    }

    fn gate_weight_in(&self, store: &ParamStore, tape: &mut Tape, e_item: Var, stats: Var) -> Result<Var> {
        let b = tape.value(e_item).rows();
        let Some(gate) = &self.gate else {
            return tape.constant(Tensor::new(vec![b, 1], vec![0.5; b])?);
        };
        let input = match self.variant.gate_inputs() {
            GateInputs::Both => tape.concat_cols(&[e_item, stats])?,
            GateInputs::ItemOnly => e_item,
            GateInputs::StatsOnly => stats,
        };
        let logit = gate.forward(tape, store, input)?;
        tape.sigmoid(logit)
    }

    pub fn forward(&self, tape: &mut Tape, batch: &[Example]) -> Result<ForwardOutput> {
        self.forward_in(&self.store, tape, batch)
    }

    /// As [`GateSid::forward`] with parameter values taken from `store`,
    /// which must share this model's layout.
    pub fn forward_in(&self, store: &ParamStore, tape: &mut Tape, batch: &[Example]) -> Result<ForwardOutput> {
        let c = &self.config;
        let (b, t) = (batch.len(), c.l_max);
        if b == 0 {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut targets = Vec::with_capacity(b);
        let mut hist = Vec::with_capacity(b * t);
        let mut mask = Vec::with_capacity(b * t);
        let mut stats = Vec::with_capacity(b * N_STATS);
        for ex in batch {
            self.check_item(ex.item)?;
            if ex.history.len() > t {
                return Err(Error::Shape {
                    op: "forward",
                    detail: format!("history length {} exceeds l_max {t}", ex.history.len()),
                });
            }
            targets.push(Some(ex.item));
            for p in 0..t {
                let h = ex.history.get(p).copied();
                if let Some(h) = h {
                    self.check_item(h)?;
                }
                hist.push(h);
                // An empty history attends to one pad slot, which pools to zero.
                mask.push(h.is_some() || (p == 0 && ex.history.is_empty()));
            }
            stats.extend_from_slice(&ex.stats);
        }

        let item_table = tape.param(store, self.tables.item);
        let shift = |v: &[Option<usize>]| -> Vec<Option<usize>> { v.iter().map(|o| o.map(|i| i + 1)).collect() };
        let e_item = tape.gather(item_table, &shift(&targets))?;
        let h_item = tape.gather(item_table, &shift(&hist))?;
        let h_item = tape.reshape(h_item, &[b, t, c.d_item])?;

        let sid_tables: Vec<Var> = self.tables.sid.iter().map(|&id| tape.param(store, id)).collect();
        let e_sid = sid_embed(tape, &sid_tables, &self.sid_codes(&targets))?;
        let h_sid = sid_embed(tape, &sid_tables, &self.sid_codes(&hist))?;
        let h_sid = tape.reshape(h_sid, &[b, t, c.d_sid()])?;

        let stats = tape.constant(Tensor::new(vec![b, N_STATS], stats)?)?;
        let w = self.gate_weight_in(store, tape, e_item, stats)?;

        let a = self.attention;
        let wq_item = tape.param(store, a.q_item);
        let wk_item = tape.param(store, a.k_item);
        let s_item = intra_attention(tape, e_item, h_item, wq_item, wk_item, &mask)?;
        let s_fused = match self.variant.fusion() {
            Fusion::ItemOnly => s_item,
            Fusion::Gated | Fusion::Average => {
                let wq_sid = tape.param(store, a.q_sid);
                let wk_sid = tape.param(store, a.k_sid);
                let s_sid = intra_attention(tape, e_sid, h_sid, wq_sid, wk_sid, &mask)?;
                fuse_attention(tape, s_sid, s_item, w)?
            }
        };
        let (p_sid, p_item) = pool_sequences(tape, s_fused, h_sid, h_item)?;

        let mut parts = vec![p_sid, p_item, e_sid, e_item, stats];
        if c.head_interactions {
            parts.push(tape.mul(p_sid, e_sid)?);
            parts.push(tape.mul(p_item, e_item)?);
        }
        if let Some(user) = self.tables.user {
            let table = tape.param(store, user);
            let idx = batch
                .iter()
                .map(|ex| {
                    if ex.user >= c.n_users {
                        return Err(Error::IndexOutOfRange {
                            what: "user id",
                            index: ex.user,
                            size: c.n_users,
                        });
                    }
                    Ok(Some(ex.user))
                })
                .collect::<Result<Vec<_>>>()?;
            parts.push(tape.gather(table, &idx)?);
        }
        let head_in = tape.concat_cols(&parts)?;
        let out = self.head.forward(tape, store, head_in)?;
        Ok(ForwardOutput {
            ctr_logit: tape.slice_cols(out, 0, 1)?,
            ctcvr_logit: tape.slice_cols(out, 1, 1)?,
            w,
            e_sid,
            e_item,
        })
    }

    /// Joint ranking loss plus the gate-weighted contrastive term.
    pub fn loss(&self, tape: &mut Tape, batch: &[Example], out: &ForwardOutput) -> Result<LossOutput> {
        self.loss_with_weights(tape, batch, out, None)
    }

    /// As [`GateSid::loss`]; `cl_weights`, one per batch record, replaces the
    /// gate values that weight the contrastive term.
    pub fn loss_with_weights(
        &self,
        tape: &mut Tape,
        batch: &[Example],
        out: &ForwardOutput,
        cl_weights: Option<&[f64]>,
    ) -> Result<LossOutput> {
        if cl_weights.is_some_and(|w| w.len() != batch.len()) {
            return Err(Error::Invalid("one contrastive weight per record required".into()));
        }
        let clicks: Vec<f64> = batch.iter().map(|e| f64::from(u8::from(e.click))).collect();
        let pays: Vec<f64> = batch.iter().map(|e| f64::from(u8::from(e.click && e.pay))).collect();
        let l_ctr = tape.bce_with_logits(out.ctr_logit, &clicks)?;
        let l_ctcvr = tape.bce_with_logits(out.ctcvr_logit, &pays)?;
        let rank = tape.add(l_ctr, l_ctcvr)?;
        let contrastive = if self.loss.lambda > 0.0 {
            let items: Vec<usize> = batch.iter().map(|e| e.item).collect();
            let keep = dedup_first(&items);
            let idx: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
            let es = tape.gather(out.e_sid, &idx)?;
            let ei = tape.gather(out.e_item, &idx)?;
            let wv = cl_weights.unwrap_or(tape.value(out.w).data());
            let w: Vec<f64> = keep.iter().map(|&i| wv[i]).collect();
            Some(contrastive_loss(tape, es, ei, &w, self.loss.tau)?)
        } else {
            None
        };
        let total = total_loss(tape, rank, contrastive, self.loss.lambda)?;
        Ok(LossOutput {
            total,
            rank,
            contrastive,
        })
    }

    /// Inference in chunks; pure with respect to the model.
    pub fn predict(&self, examples: &[Example], chunk: usize) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(examples.len());
        for batch in examples.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let f = self.forward(&mut tape, batch)?;
            let (ctr, ctcvr, w) = (tape.value(f.ctr_logit), tape.value(f.ctcvr_logit), tape.value(f.w));
            for i in 0..batch.len() {
                out.push(Prediction {
                    p_ctr: sigmoid(ctr.data()[i]),
                    p_ctcvr: sigmoid(ctcvr.data()[i]),
                    w: w.data()[i],
                });
            }
        }
        Ok(out)
    }

    /// Single-record forward: `(pCTR, pCTCVR, w, e_sid, e_item)`.
    pub fn rank_forward(&self, example: &Example) -> Result<(f64, f64, f64, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, std::slice::from_ref(example))?;
        Ok((
            sigmoid(tape.value(f.ctr_logit).item()),
            sigmoid(tape.value(f.ctcvr_logit).item()),
            tape.value(f.w).item(),
            tape.value(f.e_sid).data().to_vec(),
            tape.value(f.e_item).data().to_vec(),
        ))
    }

    /// Gate weight of each item given its normalized statistics.
    pub fn gate_values(&self, items: &[usize], stats: &[[f64; N_STATS]]) -> Result<Vec<f64>> {
        if items.len() != stats.len() || items.is_empty() {
            return Err(Error::Invalid(format!(
                "gate_values: {} items, {} stat rows",
                items.len(),
                stats.len()
            )));
        }
        for &i in items {
            self.check_item(i)?;
        }
        let mut tape = Tape::new();
        let table = tape.param(&self.store, self.tables.item);
        let idx: Vec<Option<usize>> = items.iter().map(|&i| Some(i + 1)).collect();
        let e_item = tape.gather(table, &idx)?;
        let flat: Vec<f64> = stats.iter().flatten().copied().collect();
        let stats = tape.constant(Tensor::new(vec![items.len(), N_STATS], flat)?)?;
        let w = self.gate_weight(&mut tape, e_item, stats)?;
        Ok(tape.value(w).data().to_vec())
    }

    /// Item-id embedding rows for items `0..n_items`.
    pub fn item_embeddings(&self) -> Vec<Vec<f64>> {
        let t = self.store.value(self.tables.item);
        (1..=self.config.n_items).map(|r| t.row(r).to_vec()).collect()
    }

    /// Concatenated SID embeddings for items `0..n_items`.
    pub fn sid_embeddings(&self) -> Vec<Vec<f64>> {
        (0..self.config.n_items)
            .map(|i| {
                self.sid_of(i)
                    .iter()
                    .zip(&self.tables.sid)
                    .flat_map(|(&k, &id)| self.store.value(id).row(k).to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn save(&self, stem: &Path, optimizer: Option<(&AdamWConfig, u64)>, normalizer: &StatNormalizer, seed: u64) -> Result<()> {
        let meta = ModelMetadata {
            variant: self.variant,
            model: self.config.clone(),
            loss: self.loss,
            normalizer: normalizer.clone(),
            seed,
        };
        save_checkpoint(stem, &self.store, optimizer, serde_json::to_value(meta)?)
    }

    /// Rebuilds the architecture from the manifest and loads the weights.
    pub fn load(stem: &Path, sids: &SidTable) -> Result<(Self, ModelMetadata)> {
        let (manifest, _) = crate::diffkernel::read_checkpoint(stem)?;
        let meta: ModelMetadata = serde_json::from_value(manifest.metadata).map_err(|e| Error::Format {
            path: stem.to_path_buf(),
            reason: format!("model metadata: {e}"),
        })?;
        let mut model = Self::new(meta.variant, &meta.model, meta.loss, sids, meta.seed)?;
        load_into(stem, &mut model.store)?;
        Ok((model, meta))
    }
}
