//! Book-scale coreference toolkit.
//!
//! Covers the character-seeded annotation pipeline (initialize, refine,
//! windowed and grouped expansion), coreference scoring (MUC, B³, CEAF-φ4,
//! CoNLL-F1) under full-book, split, and windowed-gold settings, corpus
//! statistics, and a replay simulator for incremental-memory policies.
//! Neural annotators are reached through the traits in [`pipeline`].

pub mod error;
pub mod formats;
pub mod harness;
pub mod memsim;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod windowing;

pub use error::{ComponentError, Error, Result};
pub use formats::{CorpusFile, Entry};
pub use model::{union, validate, ClusterKey, ClusterSet, Document, Mention, Stage, ValidationReport};
