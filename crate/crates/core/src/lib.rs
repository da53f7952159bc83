//! Decomposition-driven retrieval for statement autoformalization.
//!
//! An informal statement is split into sub-queries, each sub-query retrieves
//! library premises, a few library theorems that use those premises are
//! chosen as worked examples, and everything is assembled into a prompt for
//! a formalizer model whose outputs are checked by an external verifier.

pub mod config;
pub mod corpus;
pub mod decompose;
pub mod demo;
pub mod embedding;
pub mod evaluate;
pub mod formalize;
pub mod illustrate;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod retrieve;
