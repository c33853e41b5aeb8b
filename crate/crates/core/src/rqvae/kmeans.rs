use std::collections::HashSet;

use rand::Rng as _;

use crate::diffkernel::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct KMeansFit {
    /// `[k, dim]`.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Within-cluster squared error after each assignment pass.
    pub sse_history: Vec<f64>,
}

impl KMeansFit {
    pub fn final_sse(&self) -> f64 {
        *self.sse_history.last().expect("at least one pass")
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest row of `centroids` to `x`; ties go to the lowest index.
pub(crate) fn nearest(centroids: &Tensor, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.rows() {
        let d = sq_dist(centroids.row(k), x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn count_distinct(vectors: &Tensor) -> usize {
    let mut seen = HashSet::new();
    for i in 0..vectors.rows() {
        let key: Vec<u64> = vectors.row(i).iter().map(|v| v.to_bits()).collect();
        seen.insert(key);
    }
    seen.len()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// An empty cluster keeps its previous centroid, so the squared error never
/// increases between passes.
pub fn kmeans_fit(vectors: &Tensor, k: usize, iters: usize, rng: &mut Rng) -> Result<KMeansFit> {
    let n = vectors.rows();
    let dim = vectors.cols();
    if k == 0 {
        return Err(Error::Invalid("kmeans: k must be positive".into()));
    }
    let distinct = count_distinct(vectors);
    if distinct < k {
        return Err(Error::Invalid(format!(
            "kmeans: {distinct} distinct vectors, need at least {k}"
        )));
    }

    // k-means++: already-chosen points have zero weight, so picks are distinct.
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(vectors.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(vectors.row(i), vectors.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        let pick = pick.expect("distinct points remain");
        centroids.extend_from_slice(vectors.row(pick));
        let new_c = &centroids[c * dim..(c + 1) * dim];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(vectors.row(i), new_c));
        }
    }
    let mut centroids = Tensor::new(vec![k, dim], centroids)?;

    let mut assignments = vec![usize::MAX; n];
    let mut sse_history = Vec::new();
    for _ in 0..iters.max(1) {
        let mut changed = false;
        let mut sse = 0.0;
        for (i, slot) in assignments.iter_mut().enumerate() {
            let (c, d) = nearest(&centroids, vectors.row(i));
            sse += d;
            if *slot != c {
                *slot = c;
                changed = true;
            }
        }
        sse_history.push(sse);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(vectors.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = centroids.row_mut(c);
                for (r, s) in row.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *r = s / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        sse_history,
    })
}
