//! Residual-quantized autoencoder training.
//!
//! Loss per batch is `mse(decode(z_q), x) + beta * mse(z, sg(z_q))`, with the
//! straight-through estimator carrying the reconstruction gradient past the
//! quantizer. Codebooks are initialized by k-means on each level's residuals
//! and then tracked by exponential moving averages of assigned residuals.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, CodebookHeader};
use super::kmeans::{count_distinct, kmeans_fit};
use super::sid::{SemanticId, SidTable};
use crate::diffkernel::{self, AdamW, AdamWConfig, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeInit {
    Glorot,
    /// Encoder keeps the first `latent_dim` coordinates, decoder writes them
    /// back. Only valid without hidden layers.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqVaeConfig {
    pub levels: usize,
    pub codes_per_level: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub kmeans_iters: usize,
    pub init: AeInit,
    pub freeze_codebook: bool,
}

impl Default for RqVaeConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            codes_per_level: 64,
            latent_dim: 16,
            hidden: vec![32],
            beta: 0.25,
            lr: 2e-3,
            batch_size: 256,
            epochs: 10,
            ema_decay: 0.9,
            kmeans_iters: 25,
            init: AeInit::Glorot,
            freeze_codebook: false,
        }
    }
}

/// Encoder/decoder MLPs and the commitment weight.
#[derive(Clone, Debug)]
pub struct AutoencoderParams {
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub content_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
}

impl AutoencoderParams {
    pub fn new(content_dim: usize, config: &RqVaeConfig, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut enc_dims = vec![content_dim];
        enc_dims.extend(&config.hidden);
        enc_dims.push(config.latent_dim);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = Mlp::new(&mut store, "encoder", &enc_dims, rng)?;
        let decoder = Mlp::new(&mut store, "decoder", &dec_dims, rng)?;
        let mut ae = Self {
            store,
            encoder,
            decoder,
            content_dim,
            latent_dim: config.latent_dim,
            hidden: config.hidden.clone(),
            beta: config.beta,
        };
        if config.init == AeInit::Identity {
            if !config.hidden.is_empty() || config.latent_dim > content_dim {
                return Err(Error::Invalid(
                    "identity init needs no hidden layers and latent_dim <= content_dim".into(),
                ));
            }
            let (enc, dec) = (ae.encoder.layers[0].weight, ae.decoder.layers[0].weight);
            let d = config.latent_dim;
            let enc_w = ae.store.get_mut(enc).value.data_mut();
            enc_w.fill(0.0);
            for i in 0..d {
                enc_w[i * d + i] = 1.0;
            }
            let dec_w = ae.store.get_mut(dec).value.data_mut();
            dec_w.fill(0.0);
            for i in 0..d {
                dec_w[i * content_dim + i] = 1.0;
            }
        }
        Ok(ae)
    }

    pub fn encode_values(&self, content: &Tensor) -> Result<Tensor> {
        if content.cols() != self.content_dim {
            return Err(Error::Shape {
                op: "encode",
                detail: format!("content dim {} vs {}", content.cols(), self.content_dim),
            });
        }
        let mut tape = Tape::new();
        let x = tape.constant(content.clone())?;
        let z = self.encoder.forward(&mut tape, &self.store, x)?;
        Ok(tape.value(z).clone())
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "content_dim": self.content_dim,
            "latent_dim": self.latent_dim,
            "hidden": self.hidden,
            "beta": self.beta,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RqVae {
    pub autoencoder: AutoencoderParams,
    pub codebook: Codebook,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RqVaeReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_recon: Vec<f64>,
    pub epoch_commit: Vec<f64>,
    /// Codes actually used per level by the final assignment, as a fraction.
    pub utilization: Vec<f64>,
    /// Codes k-means could place per level (less than requested when data is scarce).
    pub effective_codes: Vec<usize>,
    pub reseeded_codes: usize,
    /// Mean squared latent error when decoding with the first `l` levels, l = 1..=L.
    pub quantization_error_by_depth: Vec<f64>,
}

struct EmaState {
    counts: Vec<f64>,
    sums: Vec<f64>,
}

fn jitter(rng: &mut Rng, v: &mut [f64], scale: f64) {
    for x in v {
        let n: f64 = StandardNormal.sample(rng);
        *x += scale * n;
    }
}

/// Fits one level's learnable codes to `residuals` with k-means.
fn init_level(
    codebook: &mut Codebook,
    level: usize,
    residuals: &Tensor,
    kmeans_iters: usize,
    rng: &mut Rng,
) -> Result<usize> {
    let first = usize::from(level > 0);
    let wanted = codebook.codes_per_level() - first;
    let distinct = count_distinct(residuals);
    let k = wanted.min(distinct);
    if k < wanted {
        log::warn!("rqvae level {}: only {distinct} distinct residuals, using {k} of {wanted} codes", level + 1);
    }
    let fit = kmeans_fit(residuals, k, kmeans_iters, rng)?;
    for c in 0..k {
        codebook.code_mut(level, first + c).copy_from_slice(fit.centroids.row(c));
    }
    // Spare codes start near random residuals; they are dead until reseeded.
    let scale = 1e-3 * (residuals.data().iter().map(|v| v * v).sum::<f64>() / residuals.len() as f64).sqrt();
    for c in k..wanted {
        let src = rng.random_range(0..residuals.rows());
        let code = codebook.code_mut(level, first + c);
        code.copy_from_slice(residuals.row(src));
        jitter(rng, code, scale.max(1e-9));
    }
    Ok(k)
}

fn quantize_all(codebook: &Codebook, z: &Tensor) -> Result<Vec<super::codebook::RqEncoding>> {
    (0..z.rows()).map(|i| codebook.rq_encode(z.row(i))).collect()
}

/// Pushes apart codes that sit within 1e-9 of an earlier code of the same level.
fn separate_duplicates(codebook: &mut Codebook, rng: &mut Rng) {
    for level in 0..codebook.levels() {
        for b in 1..codebook.codes_per_level() {
            loop {
                let clash = (0..b).any(|a| {
                    super::kmeans::sq_dist(codebook.code(level, a), codebook.code(level, b)).sqrt() <= 1e-9
                });
                if !clash || codebook.is_pinned(level, b) {
                    break;
                }
                jitter(rng, codebook.code_mut(level, b), 1e-6);
            }
        }
    }
}

pub fn train_rqvae(content: &Tensor, config: &RqVaeConfig, seed: u64) -> Result<(RqVae, RqVaeReport)> {
    let n = content.rows();
    let (levels, k_codes, dz) = (config.levels, config.codes_per_level, config.latent_dim);
    if n == 0 || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Invalid("rqvae: need items, batch_size > 0 and epochs > 0".into()));
    }
    if n < 10 * k_codes {
        log::warn!("rqvae: {n} items for {k_codes} codes per level; codebooks will be sparsely populated");
    }
    let mut rng = rng::stream(seed, "rqvae");
    let mut ae = AutoencoderParams::new(content.cols(), config, &mut rng)?;
    let mut codebook = Codebook::zeros(levels, k_codes, dz)?;
    let mut report = RqVaeReport::default();

    // Level-by-level k-means on the residuals of the initial encoder.
    let z0 = ae.encode_values(content)?;
    let mut residual = z0.clone();
    for level in 0..levels {
        let k = init_level(&mut codebook, level, &residual, config.kmeans_iters, &mut rng)?;
        report.effective_codes.push(k);
        for i in 0..n {
            let (c, _) = codebook.nearest(level, residual.row(i));
            let code = codebook.code(level, c).to_vec();
            residual.row_mut(i).iter_mut().zip(&code).for_each(|(r, c)| *r -= c);
        }
    }
    let mut ema: Vec<EmaState> = (0..levels)
        .map(|l| EmaState {
            counts: vec![1.0; k_codes],
            sums: (0..k_codes).flat_map(|k| codebook.code(l, k).to_vec()).collect(),
        })
        .collect();

    let opt_cfg = AdamWConfig {
        lr: config.lr,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(opt_cfg, &ae.store);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut usage = vec![vec![0usize; k_codes]; levels];
        let mut last_inputs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); levels];
        let (mut tot, mut rec, mut com, mut batches) = (0.0, 0.0, 0.0, 0usize);

        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| content.row(i).to_vec()).collect();
            let x_val = Tensor::from_rows(&rows)?;
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone())?;
            let z = ae.encoder.forward(&mut tape, &ae.store, x)?;
            let encodings = quantize_all(&codebook, tape.value(z))?;

            let mut zq = Vec::with_capacity(chunk.len() * dz);
            for enc in &encodings {
                zq.extend(codebook.rq_decode(&enc.indices)?);
            }
            let zq = Tensor::new(vec![chunk.len(), dz], zq)?;
            let shift: Vec<f64> = zq.data().iter().zip(tape.value(z).data()).map(|(q, z)| q - z).collect();
            let z_st = tape.add_const(z, &Tensor::new(vec![chunk.len(), dz], shift)?)?;
            let x_hat = ae.decoder.forward(&mut tape, &ae.store, z_st)?;
            let recon = tape.mse(x_hat, &x_val)?;
            let commit = tape.mse(z, &zq)?;
            let commit_w = tape.scale(commit, config.beta)?;
            let loss = tape.add(recon, commit_w)?;

            let loss_v = tape.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::Divergence(format!("rqvae epoch {epoch}: loss {loss_v}")));
            }
            tot += loss_v;
            rec += tape.value(recon).item();
            com += tape.value(commit).item();
            batches += 1;

            ae.store.zero_grad();
            tape.backward(loss, &mut ae.store)?;
            opt.step(&mut ae.store)?;

            for level in 0..levels {
                last_inputs[level].clear();
                let mut counts = vec![0usize; k_codes];
                let mut sums = vec![0.0; k_codes * dz];
                for enc in &encodings {
                    let k = enc.indices[level];
                    let r = &enc.residuals[level];
                    counts[k] += 1;
                    sums[k * dz..(k + 1) * dz].iter_mut().zip(r).for_each(|(s, v)| *s += v);
                    last_inputs[level].push(r.clone());
                }
                for k in 0..k_codes {
                    usage[level][k] += counts[k];
                }
                if config.freeze_codebook {
                    continue;
                }
                let g = config.ema_decay;
                let state = &mut ema[level];
                for k in 0..k_codes {
                    if codebook.is_pinned(level, k) {
                        continue;
                    }
                    state.counts[k] = g * state.counts[k] + (1.0 - g) * counts[k] as f64;
                    let s = &mut state.sums[k * dz..(k + 1) * dz];
                    s.iter_mut()
                        .zip(&sums[k * dz..(k + 1) * dz])
                        .for_each(|(m, v)| *m = g * *m + (1.0 - g) * v);
                    if state.counts[k] > 1e-12 {
                        let c = state.counts[k];
                        let code: Vec<f64> = s.iter().map(|m| m / c).collect();
                        codebook.code_mut(level, k).copy_from_slice(&code);
                    }
                }
            }
        }

        report.epoch_loss.push(tot / batches as f64);
        report.epoch_recon.push(rec / batches as f64);
        report.epoch_commit.push(com / batches as f64);
        log::debug!("rqvae epoch {epoch}: loss {:.6}", tot / batches as f64);

        if !config.freeze_codebook && epoch + 1 < config.epochs {
            for level in 0..levels {
                let pool = &last_inputs[level];
                let mut picks: Vec<usize> = (0..pool.len()).collect();
                picks.shuffle(&mut rng);
                let mut next = picks.into_iter();
                for k in 0..k_codes {
                    if usage[level][k] > 0 || codebook.is_pinned(level, k) {
                        continue;
                    }
                    let Some(src) = next.next() else { break };
                    let mut code = pool[src].clone();
                    jitter(&mut rng, &mut code, 1e-6);
                    codebook.code_mut(level, k).copy_from_slice(&code);
                    ema[level].counts[k] = 1.0;
                    ema[level].sums[k * dz..(k + 1) * dz].copy_from_slice(&code);
                    report.reseeded_codes += 1;
                }
            }
        }
    }
    separate_duplicates(&mut codebook, &mut rng);

    let model = RqVae {
        autoencoder: ae,
        codebook,
    };
    let z = model.autoencoder.encode_values(content)?;
    let encodings = quantize_all(&model.codebook, &z)?;
    report.utilization = utilization(&model.codebook, &encodings);
    report.quantization_error_by_depth = error_by_depth(&model.codebook, &z, &encodings)?;
    Ok((model, report))
}

fn utilization(codebook: &Codebook, encodings: &[super::codebook::RqEncoding]) -> Vec<f64> {
    (0..codebook.levels())
        .map(|l| {
            let mut used = vec![false; codebook.codes_per_level()];
            for e in encodings {
                used[e.indices[l]] = true;
            }
            used.iter().filter(|&&u| u).count() as f64 / codebook.codes_per_level() as f64
        })
        .collect()
}

/// Mean of `||z - sum_{l<=depth} c_l||^2` for each depth.
pub fn error_by_depth(codebook: &Codebook, z: &Tensor, encodings: &[super::codebook::RqEncoding]) -> Result<Vec<f64>> {
    let n = z.rows() as f64;
    let mut out = Vec::with_capacity(codebook.levels());
    for depth in 1..=codebook.levels() {
        let mut total = 0.0;
        for (i, e) in encodings.iter().enumerate() {
            let mut approx = vec![0.0; codebook.dim()];
            for (l, &k) in e.indices.iter().take(depth).enumerate() {
                approx.iter_mut().zip(codebook.code(l, k)).for_each(|(a, c)| *a += c);
            }
            total += super::kmeans::sq_dist(z.row(i), &approx);
        }
        out.push(total / n);
    }
    Ok(out)
}

/// Assigns every item (row of `content`, item id = row index) its semantic ID.
pub fn assign_sids(content: &Tensor, model: &RqVae) -> Result<SidTable> {
    let z = model.autoencoder.encode_values(content)?;
    let rows = (0..z.rows())
        .map(|i| {
            Ok(SemanticId {
                item_id: i,
                indices: model.codebook.rq_encode(z.row(i))?.indices,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SidTable::new(model.codebook.levels(), model.codebook.codes_per_level(), rows)
}

impl RqVae {
    /// Writes `<dir>/rqvae_ae.{json,bin}` and `<dir>/codebook.{json,bin}`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        diffkernel::save_checkpoint(
            &dir.join("rqvae_ae"),
            &self.autoencoder.store,
            None,
            self.autoencoder.metadata(),
        )?;
        let header = CodebookHeader {
            levels: self.codebook.levels(),
            codes_per_level: self.codebook.codes_per_level(),
            latent_dim: self.codebook.dim(),
            beta: self.autoencoder.beta,
            seed,
        };
        self.codebook.save(&dir.join("codebook"), &header)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (codebook, header) = Codebook::load(&dir.join("codebook"))?;
        let stem = dir.join("rqvae_ae");
        let (manifest, _) = diffkernel::read_checkpoint(&stem)?;
        let meta = &manifest.metadata;
        let field = |k: &str| {
            meta.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format {
                    path: stem.with_extension("json"),
                    reason: format!("metadata field `{k}` missing"),
                })
        };
        let hidden = meta
            .get("hidden")
            .and_then(|v| serde_json::from_value::<Vec<usize>>(v.clone()).ok())
            .unwrap_or_default();
        let config = RqVaeConfig {
            latent_dim: field("latent_dim")?,
            hidden,
            beta: header.beta,
            ..Default::default()
        };
        let mut ae = AutoencoderParams::new(field("content_dim")?, &config, &mut rng::stream(0, "load"))?;
        diffkernel::load_into(&stem, &mut ae.store)?;
        if ae.latent_dim != codebook.dim() {
            return Err(Error::Invalid("autoencoder latent dim does not match codebook".into()));
        }
        Ok(Self {
            autoencoder: ae,
            codebook,
        })
    }
}
