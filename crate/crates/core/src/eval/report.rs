use serde::{Deserialize, Serialize};

use super::curve::{gate_age_curve, GateBin};
use super::metrics::{alignment_score, auc, gauc, Alignment};
use crate::error::{Error, Result};
use crate::model::{Dataset, GateSid, Prediction, Variant};
use crate::synthcorpus::{maturity_of, Maturity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Items online fewer than this many days are new.
    pub new_age: usize,
    /// Items online more than this many days are popular.
    pub popular_age: usize,
    /// Interior edges of the gate-age curve.
    pub age_edges: Vec<usize>,
    pub chunk: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            new_age: 20,
            popular_age: 300,
            age_edges: vec![5, 20, 60, 300],
            chunk: 1024,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.new_age == 0 || self.new_age >= self.popular_age {
            return Err(Error::Config(format!(
                "maturity thresholds must satisfy 0 < new ({}) < popular ({})",
                self.new_age, self.popular_age
            )));
        }
        if self.age_edges.is_empty() || self.age_edges[0] == 0 || self.age_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "age edges must be positive and strictly increasing, got {:?}",
                self.age_edges
            )));
        }
        if self.chunk == 0 {
            return Err(Error::Config("eval chunk must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub records: usize,
    pub positives: usize,
    pub users: usize,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
}

impl BucketMetrics {
    pub fn compute(scores: &[f64], labels: &[bool], users: &[usize]) -> Self {
        let mut distinct = users.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        Self {
            records: scores.len(),
            positives: labels.iter().filter(|&&l| l).count(),
            users: distinct.len(),
            auc: auc(scores, labels),
            gauc: gauc(scores, labels, users),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub all: BucketMetrics,
    pub new: BucketMetrics,
    pub popular: BucketMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub new_items: usize,
    pub popular_items: usize,
    pub mean_new: Option<f64>,
    pub mean_popular: Option<f64>,
    /// `mean_new - mean_popular`.
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub seed: u64,
    pub settings: EvalSettings,
    pub test_records: usize,
    pub ctr: TaskMetrics,
    /// Label is click and pay.
    pub ctcvr: TaskMetrics,
    pub gate: GateSummary,
    pub gate_curve: Vec<GateBin>,
    pub alignment: Alignment,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn task_metrics(scores: &[f64], labels: &[bool], users: &[usize], maturity: &[Maturity]) -> TaskMetrics {
    let subset = |m: Maturity| {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| maturity[i] == m).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let u: Vec<usize> = idx.iter().map(|&i| users[i]).collect();
        BucketMetrics::compute(&s, &l, &u)
    };
    TaskMetrics {
        all: BucketMetrics::compute(scores, labels, users),
        new: subset(Maturity::New),
        popular: subset(Maturity::Popular),
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores the test day of `data` and summarizes the gate and embeddings.
///
/// Record buckets use the target item's age on the test day.
pub fn evaluate(model: &GateSid, data: &Dataset, seed: u64, settings: &EvalSettings) -> Result<EvalReport> {
    settings.validate()?;
    if model.config.n_items != data.n_items {
        return Err(Error::Invalid(format!(
            "model has {} items, dataset has {}",
            model.config.n_items, data.n_items
        )));
    }
    let preds: Vec<Prediction> = model.predict(&data.test, settings.chunk)?;
    let users: Vec<usize> = data.test.iter().map(|e| e.user).collect();
    let maturity: Vec<Maturity> = data
        .test
        .iter()
        .map(|e| maturity_of(data.item_ages[e.item], settings.new_age, settings.popular_age))
        .collect();
    let ctr_s: Vec<f64> = preds.iter().map(|p| p.p_ctr).collect();
    let ctr_y: Vec<bool> = data.test.iter().map(|e| e.click).collect();
    let cvr_s: Vec<f64> = preds.iter().map(|p| p.p_ctcvr).collect();
    let cvr_y: Vec<bool> = data.test.iter().map(|e| e.click && e.pay).collect();

    let items: Vec<usize> = (0..data.n_items).collect();
    let w = model.gate_values(&items, &data.item_stats_on_test_day())?;
    let pick = |m: Maturity| -> Vec<f64> {
        items
            .iter()
            .filter(|&&i| maturity_of(data.item_ages[i], settings.new_age, settings.popular_age) == m)
            .map(|&i| w[i])
            .collect()
    };
    let (w_new, w_pop) = (pick(Maturity::New), pick(Maturity::Popular));
    let (mean_new, mean_popular) = (mean(&w_new), mean(&w_pop));
    let gate = GateSummary {
        new_items: w_new.len(),
        popular_items: w_pop.len(),
        mean_new,
        mean_popular,
        gap: mean_new.zip(mean_popular).map(|(a, b)| a - b),
    };

    Ok(EvalReport {
        variant: model.variant,
        seed,
        settings: settings.clone(),
        test_records: data.test.len(),
        ctr: task_metrics(&ctr_s, &ctr_y, &users, &maturity),
        ctcvr: task_metrics(&cvr_s, &cvr_y, &users, &maturity),
        gate,
        gate_curve: gate_age_curve(&data.item_ages, &w, &settings.age_edges),
        alignment: alignment_score(&model.sid_embeddings(), &model.item_embeddings()),
    })
}
