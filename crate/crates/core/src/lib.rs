//! Federated knowledge-graph completion with shared latent dictionaries.
//!
//! Every client factors its entity and relation embeddings into a shared
//! `r x r` dictionary and a private loading matrix, and scores triples with a
//! CP-factored trilinear model. Only the dictionaries and the three fusion
//! matrices are averaged by the server; loadings stay on the client.
//!
//! - [`tensor`]: dense matrices, order-3 tensors, mode-n products.
//! - [`data`]: triple files, vocabularies, client partitions, 1-N batches.
//! - [`model`]: parameters, scores, losses, analytic gradients, Adam.
//! - [`federation`]: round protocol and training driver.
//! - [`eval`]: filtered link-prediction ranking, MRR and Hit@k.
//! - [`synthetic`]: planted low-rank knowledge graphs for tests and smoke runs.
//! - [`gradcheck`]: finite-difference verification of the gradients.

pub mod data;
pub mod eval;
pub mod federation;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
