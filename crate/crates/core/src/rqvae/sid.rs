use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_required_string, write_atomic};

/// Hierarchical code of one item: one index per residual level.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SemanticId {
    pub item_id: usize,
    pub indices: Vec<usize>,
}

/// One [`SemanticId`] per item, indexed by item id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SidTable {
    levels: usize,
    codes_per_level: usize,
    rows: Vec<SemanticId>,
}

impl SidTable {
    pub fn new(levels: usize, codes_per_level: usize, rows: Vec<SemanticId>) -> Result<Self> {
        for (pos, sid) in rows.iter().enumerate() {
            if sid.item_id != pos {
                return Err(Error::Invalid(format!(
                    "SID rows must be dense and ordered by item id; row {pos} has id {}",
                    sid.item_id
                )));
            }
            if sid.indices.len() != levels {
                return Err(Error::Invalid(format!(
                    "item {pos}: {} indices for {levels} levels",
                    sid.indices.len()
                )));
            }
            if let Some(&bad) = sid.indices.iter().find(|&&k| k >= codes_per_level) {
                return Err(Error::IndexOutOfRange {
                    what: "semantic id",
                    index: bad,
                    size: codes_per_level,
                });
            }
        }
        Ok(Self {
            levels,
            codes_per_level,
            rows,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codes_per_level(&self) -> usize {
        self.codes_per_level
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, item_id: usize) -> Option<&SemanticId> {
        self.rows.get(item_id)
    }

    pub fn rows(&self) -> &[SemanticId] {
        &self.rows
    }

    /// CSV with header `item_id,s1,...,sL`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_id");
        for l in 1..=self.levels {
            write!(out, ",s{l}").unwrap();
        }
        out.push('\n');
        for sid in &self.rows {
            write!(out, "{}", sid.item_id).unwrap();
            for k in &sid.indices {
                write!(out, ",{k}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &Path, codes_per_level: usize) -> Result<Self> {
        let text = read_required_string(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let levels = header.split(',').count().saturating_sub(1);
        if levels == 0 || !header.starts_with("item_id,") {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields = line
                .split(',')
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
            if fields.len() != levels + 1 {
                return Err(bad(format!("line {}: expected {} fields", n + 2, levels + 1)));
            }
            rows.push(SemanticId {
                item_id: fields[0],
                indices: fields[1..].to_vec(),
            });
        }
        Self::new(levels, codes_per_level, rows)
    }
}
