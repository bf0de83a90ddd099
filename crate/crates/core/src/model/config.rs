use serde::{Deserialize, Serialize};

use crate::error::{DotError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Gd,
    /// Adaptive moments with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

/// When the target kNN graph is rebuilt from the current target features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSchedule {
    /// Once per epoch over the whole target set; batches use the induced subgraph.
    Epoch,
    /// For every batch, from the batch's own features.
    Batch,
}

/// Every tunable of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the target prediction entropy.
    pub lambda1: f64,
    /// Weight of the target kNN locality term.
    pub lambda2: f64,
    /// Weight of the source same-label locality term on transformed features.
    pub lambda3: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub knn_k: usize,
    pub target_graph: GraphSchedule,
    /// Divide each locality term by its number of (ordered) edges.
    pub normalize_lpp: bool,
    pub optimizer: OptimizerKind,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Points per domain used for the per-epoch W2 estimate.
    pub w2_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.1,
            lambda2: 1.0,
            lambda3: 1.0,
            learning_rate: 1e-3,
            epochs: 100,
            pretrain_epochs: 100,
            pretrain_learning_rate: 1e-2,
            batch_source: 16,
            batch_target: 16,
            knn_k: 5,
            target_graph: GraphSchedule::Epoch,
            normalize_lpp: false,
            optimizer: OptimizerKind::Adam,
            hidden_dim: 32,
            feature_dim: 16,
            seed: 0,
            w2_sample: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DotError::Parameter(m));
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("pretrain_learning_rate", self.pretrain_learning_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        for (name, v) in [
            ("batch_source", self.batch_source),
            ("batch_target", self.batch_target),
            ("knn_k", self.knn_k),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("w2_sample", self.w2_sample),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Same run with the three regularisers switched off.
    pub fn attention_only(&self) -> TrainConfig {
        TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..self.clone()
        }
    }
}
