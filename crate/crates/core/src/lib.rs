//! Shallow unsupervised domain adaptation: reweighting, mapping, subspace and
//! transport-based methods, base classifiers, and unsupervised scorers.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod kernel;
pub mod linalg;
pub mod mapping;
pub mod methods;
pub mod metrics;
pub mod optim;
pub mod ot;
pub mod otherda;
pub mod reweight;
pub mod scorers;
pub mod sim;
pub mod split;
pub mod stats;
pub mod subspace;

pub use dataset::{DomainDataset, PredictionSet, MASKED};
pub use error::{Error, Result};
