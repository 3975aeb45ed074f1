//! Query-aware demonstration generation and evaluation over pluggable
//! text-generation backends.
//!
//! The crate is organized around the workflow it implements:
//!
//! - [`model`] — shared domain types (tool specs, function calls, instances).
//! - [`toolcall`] — parsing, serializing, and validating function-call text.
//! - [`scoring`] — exact/partial tool accuracy, math exact match, and error
//!   categorization.
//! - [`prompts`] — the prompt template registry and demo formatting.
//! - [`backend`] — the text-generation interface: live HTTP, scripted mock,
//!   and a record/replay cache.
//! - [`pipelines`] — the four-step self-demonstration workflow and the
//!   baseline prompting strategies.
//! - [`retrieval`] — BM25 sparse retrieval and the embedding-retriever
//!   contract.
//! - [`costing`] — per-step token ledgers and dollar-cost accounting.
//! - [`dataset`] — corpus cleaning, OOD instance assembly, and file IO.

pub mod backend;
pub mod costing;
pub mod dataset;
pub mod model;
pub mod pipelines;
pub mod prompts;
pub mod retrieval;
pub mod scoring;
pub mod toolcall;
