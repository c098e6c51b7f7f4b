//! Template-based question answering over an RDF knowledge base.
//!
//! Offline, question templates are aligned with (expanded) knowledge-base
//! predicates from a question/answer corpus by expectation-maximization.
//! Online, a question is linked to an entity, conceptualized into templates
//! and answered through the learned `P(predicate | template)`; complex
//! questions are first split into chains of simple ones.

pub mod answer;
pub mod concepts;
pub mod decompose;
pub mod entity_index;
pub mod error;
pub mod expansion;
pub mod extraction;
pub mod kb;
pub mod learner;
pub mod pipeline;
pub mod text;

pub use answer::{AnswerDistribution, AnswerEngine, NoAnswer};
pub use concepts::{ConceptGraph, Template};
pub use decompose::{decompose, decompose_bruteforce, Decomposition, PatternIndex};
pub use entity_index::{EntityDictionary, StaticHashArray};
pub use error::{Error, Result};
pub use kb::{ExpandedPredicate, KnowledgeBase, NodeId, PathPolicy, PredicateId, SpoPath, Triple};
pub use learner::{PredicateModel, TrainingSet};
pub use pipeline::{OnlineSystem, PipelineConfig};
