//! Helper-assertion inference for Dafny programs.
//!
//! The crate is organized along the repair pipeline:
//!
//! - [`source`]: line-addressed programs, declaration spans and whole-line edits.
//! - [`verifier`]: verifier backends and diagnostic classification.
//! - [`mutator`]: benchmark construction by removing assertions from verified code.
//! - [`localize`]: heuristic, LLM and hybrid localization of missing assertions.
//! - [`retrieve`]: in-context example selection (TF-IDF, embeddings, blended).
//! - [`infer`]: candidate generation prompts, attempt enumeration and the repair loop.
//! - [`evaluate`]: experiment runs, position verdicts and report tables.
//! - [`llm`]: chat/embedding providers, offline stubs and caches.

mod lexer;
pub mod source;

pub use source::{
    AssertionRecord, InsertEdit, InsertionPoint, MethodKind, MethodSpan, PointSource, SourceError,
    SourceProgram,
};
pub mod verifier;
pub mod llm;
pub mod mutator;
pub mod retrieve;
mod hash;
pub mod prompt;
pub mod localize;
pub mod infer;
pub mod evaluate;
