//! Projection nets, classifier, the joint objective and the training loop.

mod checkpoint;
mod config;
mod loss;
mod net;
mod optim;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{GraphSchedule, OptimizerKind, TrainConfig};
pub use loss::{record_objective, tce_loss, total_loss, LossTerms, ObjectiveInputs, ObjectiveVars};
pub use net::{Activation, ClassifierHead, DenseLayer, ProjectionNet};
pub use optim::Optimizer;
pub use params::{init_target_from_source, ModelParams, ParamVars};
pub use train::{
    argmax_rows, evaluate, predict, pretrain_source, train, train_source_only, TrainOutcome,
};
