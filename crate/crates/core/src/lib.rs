//! Type-aware, coverage-guided unit test generation for Python projects.
//!
//! The pipeline indexes a project, builds a static call graph, summarizes
//! every function bottom-up and top-down, stores the summaries in a
//! retrieval knowledge base, resolves parameter types from call instances
//! or duck-typed usage, and then asks a chat model for pytest files round
//! after round, repairing failures and targeting uncovered lines.

pub mod callgraph;
pub mod config;
pub mod coverage;
pub mod generate;
pub mod index;
pub mod kb;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod resolve;
pub mod summarize;

/// Scalar used for embeddings.
pub type Score = f32;
/// Scalar used for similarity and MMR arithmetic.
pub type Similarity = f64;
/// Unit-normalized embedding vector.
pub type Embedding = Vec<Score>;

pub use callgraph::{build_call_graph, pre_existing_instances, CallGraph, CallInstance};
pub use config::RunConfig;
pub use coverage::{CoverageReport, ExecutionResult, Executor};
pub use generate::{GeneratedTest, IterationReport, Prompt, TestStatus};
pub use index::{index_project, resolve_module_path, CodeUnit, ProjectIndex};
pub use kb::{KBDocument, KnowledgeBase};
pub use llm::{ChatBackend, ChatRequest, Llm};
pub use resolve::{ArgumentPlan, ParamFeature, TypeHypothesis};
pub use summarize::FunctionSummary;
