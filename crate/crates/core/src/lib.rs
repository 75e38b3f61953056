//! Particle crushing pipeline: tessellated particle generation, bonded-cell
//! compression, Weibull characteristic strength, morphology and fragment-graph
//! features, a hybrid GNN + MLP strength regressor and gradient attribution.

pub mod attribution;
pub mod dataset;
pub mod features;
pub mod geometry;
pub mod graphset;
pub mod learn;
pub mod simulator;
pub mod tessellation;
pub mod tolerances;
pub mod weibull;
