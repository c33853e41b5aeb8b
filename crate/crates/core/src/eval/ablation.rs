use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::{evaluate, EvalReport, EvalSettings};
use crate::error::Result;
use crate::model::{train_model, Dataset, GateSid, LossConfig, ModelConfig, TrainConfig, Variant};
use crate::rqvae::SidTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub seed: u64,
    pub report: Option<EvalReport>,
    /// Set when producing or scoring the model failed.
    pub error: Option<String>,
}

/// Means across the seeds whose cell succeeded and defined the metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds_ok: usize,
    pub ctr_auc: Option<f64>,
    pub ctr_gauc: Option<f64>,
    pub ctcvr_auc: Option<f64>,
    pub ctcvr_gauc: Option<f64>,
    pub ctr_auc_new: Option<f64>,
    pub ctr_auc_popular: Option<f64>,
    pub gate_gap: Option<f64>,
    pub alignment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub seeds: Vec<u64>,
    /// Variant-major: `cells[v * seeds.len() + s]`.
    pub cells: Vec<AblationCell>,
    pub summary: Vec<VariantSummary>,
}

fn mean_of(reports: &[&EvalReport], f: impl Fn(&EvalReport) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(variant: Variant, cells: &[AblationCell]) -> VariantSummary {
    let ok: Vec<&EvalReport> = cells.iter().filter_map(|c| c.report.as_ref()).collect();
    VariantSummary {
        variant,
        seeds_ok: ok.len(),
        ctr_auc: mean_of(&ok, |r| r.ctr.all.auc),
        ctr_gauc: mean_of(&ok, |r| r.ctr.all.gauc),
        ctcvr_auc: mean_of(&ok, |r| r.ctcvr.all.auc),
        ctcvr_gauc: mean_of(&ok, |r| r.ctcvr.all.gauc),
        ctr_auc_new: mean_of(&ok, |r| r.ctr.new.auc),
        ctr_auc_popular: mean_of(&ok, |r| r.ctr.popular.auc),
        gate_gap: mean_of(&ok, |r| r.gate.gap),
        alignment: mean_of(&ok, |r| Some(r.alignment.score)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

impl AblationMatrix {
    pub fn summary_for(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per variant with seed means.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "variant,seeds_ok,ctr_auc,ctr_gauc,ctcvr_auc,ctcvr_gauc,ctr_auc_new,ctr_auc_popular,gate_gap,alignment\n",
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.variant,
                s.seeds_ok,
                opt(s.ctr_auc),
                opt(s.ctr_gauc),
                opt(s.ctcvr_auc),
                opt(s.ctcvr_gauc),
                opt(s.ctr_auc_new),
                opt(s.ctr_auc_popular),
                opt(s.gate_gap),
                opt(s.alignment)
            );
        }
        out
    }

    /// One row per cell; failed cells carry only the error.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("variant,seed,ctr_auc,ctr_gauc,ctcvr_auc,ctcvr_gauc,gate_gap,alignment,error\n");
        for c in &self.cells {
            let r = c.report.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.variant,
                c.seed,
                opt(r.and_then(|r| r.ctr.all.auc)),
                opt(r.and_then(|r| r.ctr.all.gauc)),
                opt(r.and_then(|r| r.ctcvr.all.auc)),
                opt(r.and_then(|r| r.ctcvr.all.gauc)),
                opt(r.and_then(|r| r.gate.gap)),
                opt(r.map(|r| r.alignment.score)),
                c.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        out
    }
}

/// Evaluates every `(variant, seed)` cell with models from `produce`.
/// A failing cell records its error and the sweep continues.
pub fn run_ablation_with(
    data: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
    settings: &EvalSettings,
    mut produce: impl FnMut(Variant, u64) -> Result<GateSid>,
) -> AblationMatrix {
    let mut cells = Vec::with_capacity(variants.len() * seeds.len());
    for &variant in variants {
        for &seed in seeds {
            let outcome = produce(variant, seed).and_then(|m| evaluate(&m, data, seed, settings));
            if let Err(e) = &outcome {
                log::warn!("ablation cell {variant}/{seed} failed: {e}");
            }
            cells.push(AblationCell {
                variant,
                seed,
                error: outcome.as_ref().err().map(|e| e.to_string()),
                report: outcome.ok(),
            });
        }
    }
    let summary = variants
        .iter()
        .zip(cells.chunks(seeds.len().max(1)))
        .map(|(&v, chunk)| summarize(v, chunk))
        .collect();
    AblationMatrix {
        seeds: seeds.to_vec(),
        cells,
        summary,
    }
}

/// Trains every cell from scratch and evaluates it.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    data: &Dataset,
    sids: &SidTable,
    variants: &[Variant],
    seeds: &[u64],
    model_config: &ModelConfig,
    loss: LossConfig,
    train: &TrainConfig,
    settings: &EvalSettings,
) -> AblationMatrix {
    run_ablation_with(data, variants, seeds, settings, |variant, seed| {
        train_model(data, sids, model_config, loss, variant, train, seed).map(|(m, _)| m)
    })
}
