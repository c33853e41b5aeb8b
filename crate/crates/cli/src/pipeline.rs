//! One function per subcommand. Each reads its inputs from the configured
//! directories, writes its artifacts atomically and returns a JSON summary.

use std::fmt::Write as _;
use std::path::PathBuf;

use gatesid_core::diffkernel::{GradCheckOptions, Tensor};
use gatesid_core::eval::{evaluate, gate_age_curve, gate_curve_csv, longest_non_increasing, run_ablation_with};
use gatesid_core::io::write_atomic;
use gatesid_core::model::{
    full_loss_grad_check, toy_problem, train_model, Dataset, GateSid, ModelMetadata, Variant,
};
use gatesid_core::rqvae::{assign_sids, train_rqvae, RqVae, SidTable};
use gatesid_core::synthcorpus::{
    cold_ctr_affinity_correlation, content_probe_auc, generate_corpus, load_corpus, save_corpus, CorpusData,
};
use gatesid_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Relative error bound for `grad-check`.
pub const GRAD_TOLERANCE: f64 = 1e-4;

pub struct Layout<'a> {
    cfg: &'a RunConfig,
}

impl<'a> Layout<'a> {
    pub fn new(cfg: &'a RunConfig) -> Self {
        Self { cfg }
    }

    pub fn corpus(&self) -> PathBuf {
        self.cfg.paths.corpus_dir.clone()
    }

    pub fn rqvae(&self) -> PathBuf {
        self.cfg.paths.artifacts_dir.join("rqvae")
    }

    pub fn sids(&self) -> PathBuf {
        self.cfg.paths.artifacts_dir.join("sids.csv")
    }

    pub fn model(&self, variant: Variant) -> PathBuf {
        self.cfg.paths.artifacts_dir.join("models").join(variant.name())
    }

    pub fn ablation_model(&self, variant: Variant, seed: u64) -> PathBuf {
        self.cfg.paths.artifacts_dir.join("ablation").join(format!("{variant}_s{seed}"))
    }

    pub fn embeddings(&self, variant: Variant, kind: &str) -> PathBuf {
        self.cfg.paths.artifacts_dir.join("embeddings").join(format!("{variant}_{kind}.csv"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.cfg.paths.reports_dir.join(name)
    }
}

fn write_json(path: &std::path::Path, v: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn content_matrix(data: &CorpusData) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = data.items.iter().map(|i| i.content.clone()).collect();
    Tensor::from_rows(&rows)
}

fn load_sids(cfg: &RunConfig) -> Result<SidTable> {
    SidTable::load(&Layout::new(cfg).sids(), cfg.rqvae.codes_per_level)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = load_corpus(&Layout::new(cfg).corpus())?;
    Dataset::build(&data, cfg.corpus.l_max)
}

fn load_model(cfg: &RunConfig, sids: &SidTable) -> Result<(GateSid, ModelMetadata)> {
    let stem = Layout::new(cfg).model(cfg.variant);
    GateSid::load(&stem, sids)
}

pub fn gen_data(cfg: &RunConfig) -> Result<Value> {
    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    let dir = Layout::new(cfg).corpus();
    save_corpus(&dir, &corpus, cfg.seed)?;
    let clicks = corpus.impressions.iter().filter(|r| r.click).count();
    let pays = corpus.impressions.iter().filter(|r| r.pay).count();
    let new_age = cfg.eval.new_age;
    let popular_age = cfg.eval.popular_age;
    Ok(json!({
        "command": "gen-data",
        "dir": dir,
        "items": corpus.items.len(),
        "impressions": corpus.impressions.len(),
        "click_rate": clicks as f64 / corpus.impressions.len() as f64,
        "pay_rate": pays as f64 / corpus.impressions.len() as f64,
        "content_probe_auc_new": content_probe_auc(&corpus, |a| a < new_age),
        "content_probe_auc_popular": content_probe_auc(&corpus, |a| a > popular_age),
        "cold_ctr_affinity_r": cold_ctr_affinity_correlation(&corpus, new_age, 10),
    }))
}

pub fn train_rqvae_cmd(cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(cfg);
    let data = load_corpus(&layout.corpus())?;
    let (model, report) = train_rqvae(&content_matrix(&data)?, &cfg.rqvae, cfg.seed)?;
    model.save(&layout.rqvae(), cfg.seed)?;
    write_json(&layout.report("rqvae.json"), &report)?;
    Ok(json!({
        "command": "train-rqvae",
        "dir": layout.rqvae(),
        "final_loss": report.epoch_loss.last(),
        "utilization": report.utilization,
        "quantization_error_by_depth": report.quantization_error_by_depth,
    }))
}

pub fn encode_sids(cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(cfg);
    let data = load_corpus(&layout.corpus())?;
    let model = RqVae::load(&layout.rqvae())?;
    let sids = assign_sids(&content_matrix(&data)?, &model)?;
    sids.save(&layout.sids())?;
    let mut distinct: Vec<&Vec<usize>> = sids.rows().iter().map(|s| &s.indices).collect();
    distinct.sort();
    distinct.dedup();
    Ok(json!({
        "command": "encode-sids",
        "path": layout.sids(),
        "items": sids.len(),
        "distinct_sids": distinct.len(),
    }))
}

pub fn train(cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(cfg);
    let data = load_dataset(cfg)?;
    let sids = load_sids(cfg)?;
    let mc = cfg.model_config(data.n_items, data.n_users);
    let (model, report) = train_model(&data, &sids, &mc, cfg.loss, cfg.variant, &cfg.train, cfg.seed)?;
    let stem = layout.model(cfg.variant);
    model.save(&stem, Some((&cfg.train.optimizer, report.steps)), &data.normalizer, cfg.seed)?;
    write_json(&layout.report(&format!("train_{}.json", cfg.variant)), &report)?;
    Ok(json!({
        "command": "train",
        "variant": cfg.variant,
        "checkpoint": stem,
        "steps": report.steps,
        "epoch_total": report.epoch_total,
    }))
}

pub fn eval(cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(cfg);
    let data = load_dataset(cfg)?;
    let sids = load_sids(cfg)?;
    let (model, meta) = load_model(cfg, &sids)?;
    let report = evaluate(&model, &data, meta.seed, &cfg.eval)?;
    let path = layout.report(&format!("eval_{}.json", cfg.variant));
    write_json(&path, &report)?;
    Ok(json!({
        "command": "eval",
        "variant": cfg.variant,
        "report": path,
        "ctr_auc": report.ctr.all.auc,
        "ctr_gauc": report.ctr.all.gauc,
        "ctcvr_auc": report.ctcvr.all.auc,
        "ctcvr_gauc": report.ctcvr.all.gauc,
        "gate_gap": report.gate.gap,
        "alignment": report.alignment.score,
    }))
}

/// Trains every configured cell and saves its checkpoint, or with
/// `from_artifacts` loads previously saved cell checkpoints instead.
pub fn ablate(cfg: &RunConfig, from_artifacts: bool) -> Result<Value> {
    let layout = Layout::new(cfg);
    let data = load_dataset(cfg)?;
    let sids = load_sids(cfg)?;
    let mc = cfg.model_config(data.n_items, data.n_users);
    let (variants, seeds) = (&cfg.ablate.variants, &cfg.ablate.seeds);
    let matrix = run_ablation_with(&data, variants, seeds, &cfg.eval, |variant, seed| {
        let stem = layout.ablation_model(variant, seed);
        if from_artifacts {
            return GateSid::load(&stem, &sids).map(|(m, _)| m);
        }
        let (model, report) = train_model(&data, &sids, &mc, cfg.loss, variant, &cfg.train, seed)?;
        model.save(&stem, Some((&cfg.train.optimizer, report.steps)), &data.normalizer, seed)?;
        Ok(model)
    });
    write_json(&layout.report("ablation.json"), &matrix)?;
    write_atomic(&layout.report("ablation_summary.csv"), matrix.summary_csv().as_bytes())?;
    write_atomic(&layout.report("ablation_cells.csv"), matrix.cells_csv().as_bytes())?;
    let failed = matrix.cells.iter().filter(|c| c.error.is_some()).count();
    Ok(json!({
        "command": "ablate",
        "cells": matrix.cells.len(),
        "failed_cells": failed,
        "summary": matrix.summary,
    }))
}

pub fn gate_curve(cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(cfg);
    let data = load_dataset(cfg)?;
    let sids = load_sids(cfg)?;
    let (model, _) = load_model(cfg, &sids)?;
    let items: Vec<usize> = (0..data.n_items).collect();
    let w = model.gate_values(&items, &data.item_stats_on_test_day())?;
    let curve = gate_age_curve(&data.item_ages, &w, &cfg.eval.age_edges);
    let csv = layout.report(&format!("gate_curve_{}.csv", cfg.variant));
    write_atomic(&csv, gate_curve_csv(&curve).as_bytes())?;
    let means: Vec<Option<f64>> = curve.iter().map(|b| b.mean_w).collect();
    write_json(&layout.report(&format!("gate_curve_{}.json", cfg.variant)), &curve)?;
    Ok(json!({
        "command": "gate-curve",
        "variant": cfg.variant,
        "csv": csv,
        "mean_w": means,
        "longest_non_increasing": longest_non_increasing(&means),
    }))
}

fn embedding_csv(rows: &[Vec<f64>]) -> String {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = String::from("item_id");
    for d in 1..=dim {
        let _ = write!(out, ",v{d}");
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn export_emb(cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(cfg);
    let sids = load_sids(cfg)?;
    let (model, _) = load_model(cfg, &sids)?;
    let item = layout.embeddings(cfg.variant, "item");
    let sid = layout.embeddings(cfg.variant, "sid");
    write_atomic(&item, embedding_csv(&model.item_embeddings()).as_bytes())?;
    write_atomic(&sid, embedding_csv(&model.sid_embeddings()).as_bytes())?;
    Ok(json!({
        "command": "export-emb",
        "variant": cfg.variant,
        "item_embeddings": item,
        "sid_embeddings": sid,
        "items": model.config.n_items,
    }))
}

/// Finite-difference check of the full loss for every variant on the toy
/// model. Fails with [`Error::Invalid`] when any parameter exceeds the bound.
pub fn grad_check(cfg: &RunConfig) -> Result<Value> {
    let mut results = Vec::new();
    for v in Variant::ALL {
        let problem = toy_problem(v, cfg.loss, cfg.seed)?;
        let report = full_loss_grad_check(&problem, GRAD_TOLERANCE, &GradCheckOptions::default())?;
        results.push((v, report));
    }
    let reports: Vec<Value> = results
        .iter()
        .map(|(v, r)| json!({ "variant": v, "report": r }))
        .collect();
    write_json(&Layout::new(cfg).report("grad_check.json"), &reports)?;
    let max = results.iter().map(|(_, r)| r.max_rel_error()).fold(0.0, f64::max);
    let passed = results.iter().all(|(_, r)| r.all_passed());
    if !passed {
        return Err(Error::Invalid(format!(
            "gradient check failed: max relative error {max:e} exceeds {GRAD_TOLERANCE:e}"
        )));
    }
    Ok(json!({
        "command": "grad-check",
        "variants": results.len(),
        "tolerance": GRAD_TOLERANCE,
        "max_rel_error": max,
        "all_passed": passed,
    }))
}
