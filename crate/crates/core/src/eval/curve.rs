use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Gate statistics for items whose age falls in `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateBin {
    pub lo: usize,
    /// `None` for the open last bin.
    pub hi: Option<usize>,
    pub items: usize,
    pub mean_w: Option<f64>,
    /// 10th, 20th, ..., 90th percentiles (nearest rank).
    pub deciles: Option<Vec<f64>>,
}

/// Age bins `[0, e0), [e0, e1), ..., [e_last, inf)` for strictly increasing
/// positive edges.
pub fn age_bins(edges: &[usize]) -> Vec<(usize, Option<usize>)> {
    let mut bins = Vec::with_capacity(edges.len() + 1);
    let mut lo = 0;
    for &e in edges {
        bins.push((lo, Some(e)));
        lo = e;
    }
    bins.push((lo, None));
    bins
}

pub fn bin_of(age: usize, edges: &[usize]) -> usize {
    edges.partition_point(|&e| e <= age)
}

fn deciles(sorted: &[f64]) -> Vec<f64> {
    (1..10)
        .map(|q| {
            let rank = (q * sorted.len()).div_ceil(10).max(1);
            sorted[rank - 1]
        })
        .collect()
}

/// Mean gate weight per age bin. Empty bins report `None`.
pub fn gate_age_curve(ages: &[usize], w: &[f64], edges: &[usize]) -> Vec<GateBin> {
    assert_eq!(ages.len(), w.len(), "gate_age_curve: ages and weights differ in length");
    let bins = age_bins(edges);
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins.len()];
    for (&a, &wi) in ages.iter().zip(w) {
        members[bin_of(a, edges)].push(wi);
    }
    bins.into_iter()
        .zip(members)
        .map(|((lo, hi), mut m)| {
            m.sort_by(f64::total_cmp);
            let n = m.len();
            GateBin {
                lo,
                hi,
                items: n,
                mean_w: (n > 0).then(|| m.iter().sum::<f64>() / n as f64),
                deciles: (n > 0).then(|| deciles(&m)),
            }
        })
        .collect()
}

pub fn gate_curve_csv(curve: &[GateBin]) -> String {
    let mut out = String::from("age_lo,age_hi,items,mean_w\n");
    for b in curve {
        let hi = b.hi.map_or(String::new(), |h| h.to_string());
        let w = b.mean_w.map_or(String::new(), |v| format!("{v:?}"));
        let _ = writeln!(out, "{},{hi},{},{w}", b.lo, b.items);
    }
    out
}

/// Length of the longest non-increasing subsequence of the present values.
pub fn longest_non_increasing(values: &[Option<f64>]) -> usize {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    let mut best = vec![1usize; v.len()];
    for i in 0..v.len() {
        for j in 0..i {
            if v[j] >= v[i] {
                best[i] = best[i].max(best[j] + 1);
            }
        }
    }
    best.into_iter().max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_partition_ages() {
        let edges = [5, 20, 60, 300];
        assert_eq!(age_bins(&edges).len(), 5);
        assert_eq!(bin_of(0, &edges), 0);
        assert_eq!(bin_of(4, &edges), 0);
        assert_eq!(bin_of(5, &edges), 1);
        assert_eq!(bin_of(299, &edges), 3);
        assert_eq!(bin_of(300, &edges), 4);
        assert_eq!(bin_of(10_000, &edges), 4);
        let ages: Vec<usize> = (0..500).collect();
        let curve = gate_age_curve(&ages, &vec![0.5; 500], &edges);
        assert_eq!(curve.iter().map(|b| b.items).sum::<usize>(), 500);
    }

    #[test]
    fn flat_weights_give_flat_curve() {
        let curve = gate_age_curve(&[1, 10, 30, 100, 400], &[0.5; 5], &[5, 20, 60, 300]);
        assert!(curve.iter().all(|b| b.mean_w == Some(0.5)));
    }

    #[test]
    fn empty_bin_is_absent() {
        let curve = gate_age_curve(&[1, 400], &[0.9, 0.1], &[5, 20, 60, 300]);
        assert_eq!(curve[1].mean_w, None);
        assert_eq!(curve[0].deciles.as_ref().unwrap().len(), 9);
    }

    #[test]
    fn non_increasing_run_length() {
        let v = |x: &[f64]| x.iter().map(|&a| Some(a)).collect::<Vec<_>>();
        assert_eq!(longest_non_increasing(&v(&[0.9, 0.8, 0.8, 0.5, 0.2])), 5);
        assert_eq!(longest_non_increasing(&v(&[0.5, 0.9, 0.8, 0.3, 0.2])), 4);
        assert_eq!(longest_non_increasing(&v(&[0.1, 0.2, 0.3])), 1);
        assert_eq!(longest_non_increasing(&[None, Some(0.4), None]), 1);
    }
}
