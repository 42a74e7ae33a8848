use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Erm,
    GroupDro,
    Jtt,
    Subg,
    Dfr,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Erm, Strategy::GroupDro, Strategy::Jtt, Strategy::Subg, Strategy::Dfr];

    pub fn requires_groups(self) -> bool {
        matches!(self, Strategy::GroupDro | Strategy::Subg | Strategy::Dfr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Erm => "erm",
            Strategy::GroupDro => "groupdro",
            Strategy::Jtt => "jtt",
            Strategy::Subg => "subg",
            Strategy::Dfr => "dfr",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// Keys understood in [`TrainConfig::strategy_params`].
pub mod params {
    /// GroupDRO exponentiated-gradient step size.
    pub const DRO_ETA: &str = "dro_eta";
    /// JTT upsampling factor for the stage-1 error set.
    pub const JTT_LAMBDA: &str = "jtt_lambda";
    /// Fraction of `epochs` spent in JTT stage 1.
    pub const JTT_STAGE1_FRACTION: &str = "jtt_stage1_fraction";
    /// Epochs for DFR head retraining (defaults to [`DEFAULT_DFR_EPOCHS`]).
    /// The head trains on precomputed features of a small balanced subset,
    /// so many passes are cheap and it needs them to converge.
    pub const DFR_EPOCHS: &str = "dfr_epochs";
    /// Learning rate for DFR head retraining (defaults to `learning_rate`).
    pub const DFR_LR: &str = "dfr_lr";

    /// Number of balanced subsets whose DFR heads are averaged.
    pub const DFR_SUBSETS: &str = "dfr_subsets";

    pub const DEFAULT_DFR_EPOCHS: usize = 300;
    pub const DEFAULT_DFR_SUBSETS: usize = 10;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy_params: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Erm,
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            strategy_params: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    /// Settings that converge on 32×32 synthetic data in seconds on one core.
    pub fn desk() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.02,
            ..Self::default()
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.dro_eta() < 0.0 || self.jtt_lambda() < 1.0 {
            return Err(Error::InvalidConfig("dro_eta must be ≥ 0 and jtt_lambda ≥ 1".into()));
        }
        Ok(())
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.strategy_params.get(key).copied().unwrap_or(default)
    }

    pub fn dro_eta(&self) -> f64 {
        self.param(params::DRO_ETA, 0.01)
    }

    pub fn jtt_lambda(&self) -> f64 {
        self.param(params::JTT_LAMBDA, 20.0)
    }

    pub fn jtt_stage1_epochs(&self) -> usize {
        let frac = self.param(params::JTT_STAGE1_FRACTION, 0.1);
        ((self.epochs as f64 * frac).round() as usize).max(1)
    }

    pub fn dfr_epochs(&self) -> usize {
        self.param(params::DFR_EPOCHS, params::DEFAULT_DFR_EPOCHS as f64).max(1.0) as usize
    }

    pub fn dfr_subsets(&self) -> usize {
        self.param(params::DFR_SUBSETS, params::DEFAULT_DFR_SUBSETS as f64).max(1.0) as usize
    }

    pub fn dfr_lr(&self) -> f64 {
        self.param(params::DFR_LR, self.learning_rate)
    }

    pub fn hash(&self) -> String {
        aspire_core::hash::json_hash(self)
    }
}
