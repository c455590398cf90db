//! Argument-aware event linking.
//!
//! Queries are tagged with event arguments, serialized into marker-annotated
//! token sequences, matched against a knowledge base by a dense bi-encoder
//! (or BM25), and re-ranked by a cross-scorer that can also choose NIL when
//! the event is not in the knowledge base. Synthetic out-of-KB training
//! queries are produced by rewriting the tagged arguments of in-KB queries.

pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod formatting;
pub mod io;
pub mod kb;
pub mod llm;
pub mod neggen;
pub mod prompt;
pub mod rerank;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod token;
pub mod training;

pub use error::{Error, Result};
pub use extraction::{Argument, EventQuery, Pos, Span, TaggedQuery};
pub use kb::{KbEntry, KnowledgeBase, Label, NIL};
pub use token::{Marker, Token};
