//! Brute-force reference implementations.

use std::collections::BTreeMap;

use gatesid_core::rng::stream;
use gatesid_core::rqvae::Codebook;
use rand_distr::{Distribution, StandardNormal};

/// O(n^2) pair enumeration with ties worth one half.
pub fn brute_auc(s: &[f64], y: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Impression-weighted mean of brute-force per-user AUC.
pub fn composed_gauc(s: &[f64], y: &[bool], u: &[usize]) -> Option<f64> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &user) in u.iter().enumerate() {
        groups.entry(user).or_default().push(i);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for idx in groups.values() {
        let gs: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let gy: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        if let Some(a) = brute_auc(&gs, &gy) {
            num += a * idx.len() as f64;
            den += idx.len() as f64;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Random codebook with the zero code pinned at index 0 of levels after the first.
pub fn random_codebook(seed: u64, levels: usize, k: usize, dim: usize) -> Codebook {
    let mut r = stream(seed, "codes");
    let mut codes = Vec::with_capacity(levels * k * dim);
    for l in 0..levels {
        let scale = 1.0 / (l + 1) as f64;
        for c in 0..k {
            for _ in 0..dim {
                let v: f64 = StandardNormal.sample(&mut r);
                codes.push(if l > 0 && c == 0 { 0.0 } else { scale * v });
            }
        }
    }
    Codebook::from_codes(levels, k, dim, codes).unwrap()
}

pub fn brute_nearest(cb: &Codebook, level: usize, r: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..cb.codes_per_level() {
        if sq(cb.code(level, k), r) < sq(cb.code(level, best), r) {
            best = k;
        }
    }
    best
}
