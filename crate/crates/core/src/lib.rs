//! Retrieval harness for deep research agents.
//!
//! The crate runs ReAct-style agent episodes against a local corpus, builds
//! retrieval inputs from the agent's reasoning trace, synthesizes contrastive
//! training data through oracle reranking, and scores runs.
//!
//! Module map:
//!
//! - [`model`]: documents, trajectories, training instances, reports
//! - [`backends`]: OpenAI-compatible chat/embedding clients and offline stubs
//! - [`index`]: BM25 and flat dense indexes, snippets, persistence
//! - [`composer`]: trajectory transformations and retrieval prompts
//! - [`agent`]: the episode loop and action parsing
//! - [`synth`]: oracle reranking, instance harvesting, rejection sampling
//! - [`contrastive`]: the contrastive loss and its gradients
//! - [`eval`]: recall, judged accuracy, search-call statistics
//! - [`analysis`]: clue coverage and claim-noise analyses

pub mod agent;
pub mod analysis;
pub mod backends;
pub mod composer;
pub mod contrastive;
pub mod eval;
pub mod fixtures;
pub mod index;
pub mod io;
pub mod model;
pub mod synth;
pub mod templates;
pub mod tokenize;

pub use composer::{compose, render_retrieval_prompt, CompositionConfig};
pub use model::*;
