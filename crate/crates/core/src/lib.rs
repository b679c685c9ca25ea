//! Method extraction, storage, ranking and reuse for LLM interactions.
//!
//! Content seen in a conversation is classified as a method or not; methods
//! are stored as problem/solution pairs in a relevance tree, retrieved for
//! new requests, filtered by learned effectiveness, chosen by the model, and
//! applied as instructions ahead of the request.

pub mod composition;
pub mod config;
pub mod eval;
pub mod extraction;
pub mod floatfmt;
pub mod gateway;
pub mod model;
pub mod orchestrator;
pub mod persistence;
pub mod prompts;
pub mod ranking;
pub mod repository;
pub mod tree;

pub use config::Config;
pub use gateway::{Embedder, Gateway};
pub use model::{
    ContentSource, ExternalRef, Method, MethodFormat, MethodId, ProblemFeatures, ProblemStatement, RefinementEdge,
    Scope, ScoreCard, Solution, SolutionPart,
};
pub use orchestrator::{Orchestrator, OrchestratorError, QueryResponse, SessionTranscript};
pub use repository::Repository;
pub use tree::{MethodTree, NodeId, PlacementAdvice, TreeParams};
