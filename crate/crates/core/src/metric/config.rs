//! Architecture configuration for the metric network.

use serde::{Deserialize, Serialize};

use crate::diff::checkpoint::fnv1a64;
use crate::error::{Error, Result};

/// Category labels of the tri-partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Real,
    Syn,
    Misc,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Real, Category::Syn, Category::Misc];

    pub fn index(self) -> usize {
        match self {
            Category::Real => 0,
            Category::Syn => 1,
            Category::Misc => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Real => "real",
            Category::Syn => "syn",
            Category::Misc => "misc",
        }
    }

    pub fn parse(s: &str) -> Result<Category> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(Category::Real),
            "syn" => Ok(Category::Syn),
            "misc" => Ok(Category::Misc),
            other => Err(Error::invalid(format!("unknown category '{other}'"))),
        }
    }
}

/// Hyperparameters of the two-level set-abstraction extractor and the
/// classifier/adversary heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricArchConfig {
    /// Query counts of the two abstraction levels.
    pub q1: usize,
    pub q2: usize,
    /// Neighbor counts of the two abstraction levels.
    pub k1: usize,
    pub k2: usize,
    /// Shared-MLP widths per level.
    pub mlp1: Vec<usize>,
    pub mlp2: Vec<usize>,
    /// Hidden width of every head.
    pub head_hidden: usize,
    /// Dropout rate applied after each head's hidden layer in training.
    pub dropout: f64,
    /// Classifier output width (number of categories).
    pub u_c: usize,
    /// Adversary output widths per category (number of datasets within).
    pub u_a: [usize; 3],
    /// Negative slope of the leaky rectifiers.
    pub leak: f64,
}

impl Default for MetricArchConfig {
    fn default() -> Self {
        MetricArchConfig::paper()
    }
}

impl MetricArchConfig {
    /// Full-scale configuration: Q1=2048/K1=20, Q2=256/K2=10.
    pub fn paper() -> Self {
        MetricArchConfig {
            q1: 2048,
            q2: 256,
            k1: 20,
            k2: 10,
            mlp1: vec![64, 64, 128],
            mlp2: vec![128, 128, 256],
            head_hidden: 128,
            dropout: 0.5,
            u_c: 3,
            u_a: [2, 2, 3],
            leak: 0.2,
        }
    }

    /// Desk-scale preset used by tests and acceptance runs: same widths,
    /// smaller query/neighbor counts.
    pub fn desk() -> Self {
        MetricArchConfig {
            q1: 256,
            q2: 64,
            k1: 16,
            k2: 8,
            ..MetricArchConfig::paper()
        }
    }

    /// Tiny configuration for gradient checks and unit tests.
    pub fn mini() -> Self {
        MetricArchConfig {
            q1: 16,
            q2: 8,
            k1: 8,
            k2: 4,
            mlp1: vec![8, 8, 12],
            mlp2: vec![12, 12, 16],
            head_hidden: 10,
            dropout: 0.5,
            u_c: 3,
            u_a: [2, 2, 3],
            leak: 0.2,
        }
    }

    /// Feature width of the latent representation.
    pub fn feature_width(&self) -> usize {
        *self.mlp2.last().expect("mlp2 must not be empty")
    }

    /// Input channel count of the second abstraction level (xyz + level-1
    /// features).
    pub fn level2_in(&self) -> usize {
        3 + *self.mlp1.last().expect("mlp1 must not be empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.q2 > self.q1 {
            return Err(Error::invalid("q2 must not exceed q1"));
        }
        if self.q1 == 0 || self.k1 == 0 || self.k2 == 0 || self.q2 == 0 {
            return Err(Error::invalid("query and neighbor counts must be positive"));
        }
        if self.mlp1.is_empty() || self.mlp2.is_empty() {
            return Err(Error::invalid("mlp width lists must not be empty"));
        }
        if self.mlp1.iter().chain(self.mlp2.iter()).any(|&w| w == 0) {
            return Err(Error::invalid("mlp widths must be positive"));
        }
        if self.u_c != 3 {
            return Err(Error::invalid("the classifier is tri-category (u_c = 3)"));
        }
        if self.u_a.iter().any(|&u| u == 0) {
            return Err(Error::invalid("adversary widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    /// Stable digest of the architecture, stored in checkpoints and checked
    /// on load.
    pub fn digest(&self) -> u64 {
        let canon = format!(
            "metric q1={} q2={} k1={} k2={} mlp1={:?} mlp2={:?} hidden={} dropout={} u_c={} u_a={:?} leak={}",
            self.q1, self.q2, self.k1, self.k2, self.mlp1, self.mlp2, self.head_hidden,
            self.dropout, self.u_c, self.u_a, self.leak
        );
        fnv1a64(canon.as_bytes())
    }
}
