//! Dialogue-based medication recommendation.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//! QA dialogue graph construction, the utterance encoder, graph attention layers,
//! the knowledge graph with TransR pretraining and K-hop sampling, the end-to-end
//! recommender with its trainer, the evaluation metrics, the TF-IDF baseline and
//! the synthetic corpus generator. File formats and the CLI live in the
//! `dialrec` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod baseline;
pub mod corpus;
pub mod encoder;
mod error;
pub mod gat;
pub mod kg;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod qa_graph;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::Matrix;
