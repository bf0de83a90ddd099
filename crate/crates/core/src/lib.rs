//! Domain-level attention for unsupervised domain adaptation.
//!
//! Source samples attend over target samples; the attention-weighted target
//! features stand in for the source features when training the classifier.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod attention;
pub mod data;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod ot;
pub mod rng;

pub use attention::{attention_map, oracle_attention, transport_features, AttentionMap};
pub use error::{DotError, ErrorKind, Result};
pub use numeric::{FeatureMatrix, Matrix};
