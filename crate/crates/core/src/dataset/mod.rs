//! Synthetic knowledge world, training corpus, query construction and
//! model evaluation, plus the optional remote alias resolver.

pub mod corpus;
pub mod evaluate;
mod names;
pub mod queries;
pub mod remote;
pub mod world;

use thiserror::Error;

pub use corpus::{generate_corpus, load_corpus, save_corpus, CorpusConfig, CorpusManifest};
pub use evaluate::{
    evaluate_queries, hallucination_set, EvalOutcome, EvalSettings, MatchRule, QueryLabel,
};
pub use queries::{build_query_set, QueryCandidate};
pub use remote::{merge_remote_objects, AliasFetcher, HttpFetcher, RemoteResolver};
pub use world::{generate_world, AliasMap, KnowledgeTriple, RelationSpec, World, WorldConfig};

use crate::model::{ModelError, VocabError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("world sizing error: {0}")]
    Sizing(String),
    #[error("template {template_idx} of relation {relation_id} is invalid: {reason}")]
    Template {
        relation_id: usize,
        template_idx: usize,
        reason: String,
    },
    #[error("malformed world data at line {line}: {reason}")]
    WorldFormat { line: usize, reason: String },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
