//! Semi-supervised classifier training from a few labeled instances plus bags
//! of unlabeled instances annotated only with class proportions.
//!
//! Each round predicts every bag, compares the predicted class ratio with the
//! annotated one, and turns the comparison into pseudo labels: positive labels
//! for the most confident instances of classes whose share agrees, and
//! negative ("not this class") labels for the least confident instances of
//! classes that are over-predicted. Negative labels can accumulate across
//! rounds, which stops predictions from oscillating between wrong classes.

pub mod cli;
pub mod data;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod proportions;

pub use domain::{
    Bag, BagId, Dataset, Instance, InstanceId, ItemKind, LabeledBatchItem, Origin, Prediction,
    Proportion, PseudoLabelState, SourceId,
};
pub use error::{Error, Result};
