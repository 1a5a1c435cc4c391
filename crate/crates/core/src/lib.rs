//! Context-aware retrieval-augmented prompt engine for code generation.

pub mod cli;
pub mod context;
pub mod eval;
pub mod index;
pub mod llm;
pub mod params;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod train;
