//! Diagnostics that check the corpus plants the intended signals.

use super::generate::Corpus;
use crate::eval::metrics::auc;

/// One-feature logistic regression fitted by Newton's method.
pub fn fit_logistic_1d(x: &[f64], y: &[bool]) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..50 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
            let r = p - f64::from(u8::from(yi));
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        // Small ridge keeps the Hessian invertible on separable data.
        let (h00, h11) = (h00 + 1e-9, h11 + 1e-9);
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-18 {
            break;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        a -= da;
        b -= db;
        if da.abs() + db.abs() < 1e-12 {
            break;
        }
    }
    (a, b)
}

/// AUC of a logistic probe on ground-truth content affinity, over the
/// impressions whose item age on that day passes `keep`.
pub fn content_probe_auc(corpus: &Corpus, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let days = corpus.config.days;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (r, &aff) in corpus.impressions.iter().zip(&corpus.content_affinity) {
        let age = corpus.items[r.target_item_id].age_on(r.day(), days).unwrap_or(0);
        if keep(age) {
            x.push(aff);
            y.push(r.click);
        }
    }
    let (a, b) = fit_logistic_1d(&x, &y);
    let scores: Vec<f64> = x.iter().map(|v| a + b * v).collect();
    auc(&scores, &y)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation between content affinity and empirical CTR on
/// impressions of items younger than `new_age`, aggregated into `bins`
/// equal-count affinity quantiles.
pub fn cold_ctr_affinity_correlation(corpus: &Corpus, new_age: usize, bins: usize) -> Option<f64> {
    let days = corpus.config.days;
    let mut pairs: Vec<(f64, bool)> = corpus
        .impressions
        .iter()
        .zip(&corpus.content_affinity)
        .filter(|(r, _)| corpus.items[r.target_item_id].age_on(r.day(), days).is_some_and(|a| a < new_age))
        .map(|(r, &a)| (a, r.click))
        .collect();
    if pairs.len() < bins || bins < 2 {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for chunk in pairs.chunks(pairs.len().div_ceil(bins)) {
        let n = chunk.len() as f64;
        xs.push(chunk.iter().map(|p| p.0).sum::<f64>() / n);
        ys.push(chunk.iter().filter(|p| p.1).count() as f64 / n);
    }
    pearson(&xs, &ys)
}
