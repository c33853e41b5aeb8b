use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::sq_dist;
use crate::error::{Error, Result};
use crate::io::{f64s_to_le_bytes, le_bytes_to_f64s, manifest_and_blob, read_required, read_required_string, write_atomic};

/// Stacked residual codebooks: `levels x codes_per_level x dim`.
///
/// At every level after the first, code 0 is the zero vector and is never
/// trained, so choosing it leaves the residual unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    levels: usize,
    codes_per_level: usize,
    dim: usize,
    codes: Vec<f64>,
}

/// Result of residual quantization of one latent.
#[derive(Clone, Debug, PartialEq)]
pub struct RqEncoding {
    pub indices: Vec<usize>,
    /// `residuals[0]` is the input; `residuals[l]` is what is left after
    /// level `l` (1-based), so there are `levels + 1` entries.
    pub residuals: Vec<Vec<f64>>,
}

impl RqEncoding {
    pub fn final_residual(&self) -> &[f64] {
        self.residuals.last().expect("non-empty")
    }
}

impl Codebook {
    pub fn zeros(levels: usize, codes_per_level: usize, dim: usize) -> Result<Self> {
        if levels == 0 || codes_per_level < 2 || dim == 0 {
            return Err(Error::Invalid(format!(
                "codebook needs levels >= 1, codes >= 2, dim >= 1 (got {levels}, {codes_per_level}, {dim})"
            )));
        }
        Ok(Self {
            levels,
            codes_per_level,
            dim,
            codes: vec![0.0; levels * codes_per_level * dim],
        })
    }

    pub fn from_codes(levels: usize, codes_per_level: usize, dim: usize, codes: Vec<f64>) -> Result<Self> {
        let mut cb = Self::zeros(levels, codes_per_level, dim)?;
        if codes.len() != cb.codes.len() {
            return Err(Error::Shape {
                op: "codebook",
                detail: format!("{} values for {levels}x{codes_per_level}x{dim}", codes.len()),
            });
        }
        cb.codes = codes;
        for l in 1..levels {
            if cb.code(l, 0).iter().any(|&v| v != 0.0) {
                return Err(Error::Invalid(format!(
                    "code 0 of level {} must be the zero vector",
                    l + 1
                )));
            }
        }
        Ok(cb)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codes_per_level(&self) -> usize {
        self.codes_per_level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn raw(&self) -> &[f64] {
        &self.codes
    }

    /// `level` is 0-based.
    pub fn code(&self, level: usize, k: usize) -> &[f64] {
        let off = (level * self.codes_per_level + k) * self.dim;
        &self.codes[off..off + self.dim]
    }

    pub(crate) fn code_mut(&mut self, level: usize, k: usize) -> &mut [f64] {
        let off = (level * self.codes_per_level + k) * self.dim;
        &mut self.codes[off..off + self.dim]
    }

    /// True when `(level, k)` is a pinned zero code.
    pub fn is_pinned(&self, level: usize, k: usize) -> bool {
        level > 0 && k == 0
    }

    /// Exhaustive nearest code at `level`; ties go to the lowest index.
    pub fn nearest(&self, level: usize, r: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.codes_per_level {
            let d = sq_dist(self.code(level, k), r);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn rq_encode(&self, z: &[f64]) -> Result<RqEncoding> {
        if z.len() != self.dim {
            return Err(Error::Shape {
                op: "rq_encode",
                detail: format!("latent of length {} for codebook dim {}", z.len(), self.dim),
            });
        }
        let mut indices = Vec::with_capacity(self.levels);
        let mut residuals = Vec::with_capacity(self.levels + 1);
        residuals.push(z.to_vec());
        for level in 0..self.levels {
            let r = residuals.last().expect("non-empty");
            let (k, _) = self.nearest(level, r);
            let next = r.iter().zip(self.code(level, k)).map(|(a, c)| a - c).collect();
            indices.push(k);
            residuals.push(next);
        }
        Ok(RqEncoding { indices, residuals })
    }

    /// Sum of the selected code at each level.
    pub fn rq_decode(&self, indices: &[usize]) -> Result<Vec<f64>> {
        if indices.len() != self.levels {
            return Err(Error::Shape {
                op: "rq_decode",
                detail: format!("{} indices for {} levels", indices.len(), self.levels),
            });
        }
        let mut out = vec![0.0; self.dim];
        for (level, &k) in indices.iter().enumerate() {
            if k >= self.codes_per_level {
                return Err(Error::IndexOutOfRange {
                    what: "rq_decode",
                    index: k,
                    size: self.codes_per_level,
                });
            }
            for (o, c) in out.iter_mut().zip(self.code(level, k)) {
                *o += c;
            }
        }
        Ok(out)
    }

    /// Smallest pairwise distance between codes of the same level.
    pub fn min_code_separation(&self, level: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.codes_per_level {
            for b in a + 1..self.codes_per_level {
                best = best.min(sq_dist(self.code(level, a), self.code(level, b)).sqrt());
            }
        }
        best
    }

    pub fn save(&self, stem: &Path, header: &CodebookHeader) -> Result<()> {
        let (json, bin) = manifest_and_blob(stem);
        let mut blob = Vec::new();
        f64s_to_le_bytes(&self.codes, &mut blob);
        write_atomic(&bin, &blob)?;
        write_atomic(&json, serde_json::to_string_pretty(header)?.as_bytes())?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(Self, CodebookHeader)> {
        let (json, bin) = manifest_and_blob(stem);
        let header: CodebookHeader = serde_json::from_str(&read_required_string(&json)?)?;
        let codes = le_bytes_to_f64s(&read_required(&bin)?).ok_or_else(|| Error::Format {
            path: bin.clone(),
            reason: "length not a multiple of 8".into(),
        })?;
        let cb = Self::from_codes(header.levels, header.codes_per_level, header.latent_dim, codes)?;
        Ok((cb, header))
    }
}

/// JSON header stored next to the little-endian code array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookHeader {
    pub levels: usize,
    pub codes_per_level: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub seed: u64,
}
