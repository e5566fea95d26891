//! Field files, synthetic corpora, batch solving, evaluation and the
//! annotation service.

pub mod batch;
pub mod corpus;
pub mod evaluate;
pub mod format;
pub mod manifest;
#[cfg(feature = "annotation")]
pub mod service;
#[cfg(feature = "annotation")]
pub mod store;
