use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub levels: usize,
    pub codes_per_level: usize,
    pub d_token: usize,
    /// Must equal `levels * d_token` so both embeddings share one space.
    pub d_item: usize,
    pub d_attn: usize,
    pub gate_hidden: Vec<usize>,
    /// Hidden widths of the ranking head; two outputs follow.
    pub head_hidden: Vec<usize>,
    pub use_user_embedding: bool,
    pub d_user: usize,
    pub l_max: usize,
    pub init_std: f64,
    /// Whether decoupled weight decay applies to the embedding tables.
    pub decay_embeddings: bool,
    /// Initial bias of the gate's output unit; `sigmoid` of it is the
    /// starting semantic weight.
    pub gate_bias_init: f64,
    /// Adds `h_sid * e_sid` and `h_item * e_item` (elementwise) to the head input.
    pub head_interactions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_users: 500,
            levels: 4,
            codes_per_level: 64,
            d_token: 8,
            d_item: 32,
            d_attn: 16,
            gate_hidden: vec![16],
            head_hidden: vec![64, 32],
            use_user_embedding: false,
            d_user: 8,
            l_max: 20,
            init_std: 0.1,
            decay_embeddings: true,
            gate_bias_init: 0.0,
            head_interactions: true,
        }
    }
}

impl ModelConfig {
    pub fn d_sid(&self) -> usize {
        self.levels * self.d_token
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.n_items == 0 || self.levels == 0 || self.codes_per_level == 0 || self.l_max == 0 {
            return bad("n_items, levels, codes_per_level and l_max must be positive".into());
        }
        if self.d_token == 0 || self.d_attn == 0 {
            return bad("d_token and d_attn must be positive".into());
        }
        if self.d_item != self.d_sid() {
            return bad(format!(
                "d_item ({}) must equal levels * d_token ({})",
                self.d_item,
                self.d_sid()
            ));
        }
        if self.use_user_embedding && (self.n_users == 0 || self.d_user == 0) {
            return bad("user embedding needs n_users and d_user > 0".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive".into());
        }
        if !self.gate_bias_init.is_finite() {
            return bad("gate_bias_init must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, lambda: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// How the two intra-modal attention distributions are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Gated,
    /// Item-stream attention drives both pooled sequences.
    ItemOnly,
    /// Gate frozen at 0.5.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateInputs {
    Both,
    ItemOnly,
    StatsOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoGrca,
    NoGfsa,
    GateItemOnly,
    GateStatsOnly,
    AvgFusion,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoGrca,
        Variant::NoGfsa,
        Variant::GateItemOnly,
        Variant::GateStatsOnly,
        Variant::AvgFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGrca => "no_grca",
            Variant::NoGfsa => "no_gfsa",
            Variant::GateItemOnly => "gate_item_only",
            Variant::GateStatsOnly => "gate_stats_only",
            Variant::AvgFusion => "avg_fusion",
        }
    }

    pub fn fusion(self) -> Fusion {
        match self {
            Variant::NoGfsa => Fusion::ItemOnly,
            Variant::AvgFusion => Fusion::Average,
            _ => Fusion::Gated,
        }
    }

    pub fn gate_inputs(self) -> GateInputs {
        match self {
            Variant::GateItemOnly => GateInputs::ItemOnly,
            Variant::GateStatsOnly => GateInputs::StatsOnly,
            _ => GateInputs::Both,
        }
    }

    /// Loss settings after the variant's overrides.
    pub fn loss(self, base: LossConfig) -> LossConfig {
        match self {
            Variant::NoGrca => LossConfig { lambda: 0.0, ..base },
            _ => base,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}
