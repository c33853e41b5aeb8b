use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Probability that a random positive outscores a random negative, ties
/// counting one half, via the mid-rank sum. `None` for single-class input.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie group spanning ranks [lo, hi] gets (lo + hi) / 2.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid_rank * group_pos as f64;
        i = j + 1;
    }
    let p = pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Some(u / (p * neg as f64))
}

/// Impression-weighted mean of per-user AUC over users that have both
/// classes. Users are visited in ascending id order.
pub fn gauc(scores: &[f64], labels: &[bool], users: &[usize]) -> Option<f64> {
    assert!(
        scores.len() == labels.len() && labels.len() == users.len(),
        "gauc: input lengths differ"
    );
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &u) in users.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for idx in groups.values() {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        if let Some(a) = auc(&s, &l) {
            num += a * idx.len() as f64;
            den += idx.len() as f64;
        }
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub score: f64,
    pub pairs: usize,
    pub skipped: usize,
}

/// Mean cosine similarity over `(a[i], b[i])` pairs; zero-norm pairs are
/// skipped and counted.
pub fn alignment_score<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Alignment {
    assert_eq!(a.len(), b.len(), "alignment_score: unequal pair counts");
    let (mut total, mut pairs, mut skipped) = (0.0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_ref(), y.as_ref());
        assert_eq!(x.len(), y.len(), "alignment_score: unequal dimensions");
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            skipped += 1;
            continue;
        }
        total += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (nx * ny);
        pairs += 1;
    }
    Alignment {
        score: if pairs > 0 { total / pairs as f64 } else { 0.0 },
        pairs,
        skipped,
    }
}
