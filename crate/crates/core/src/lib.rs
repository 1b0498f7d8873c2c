//! Retrieval-augmented cross-lingual prompting: corpora, embedding index,
//! retrieval, prompt assembly, scoring backends, prediction strategies,
//! language similarity, correlation analysis and the experiment harness.

pub mod analysis;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod langsim;
pub mod predict;
pub mod prompt;
pub mod retrieval;
pub mod scorer;
pub mod synth;

pub use corpus::{builtin, Arity, Corpus, Label, PatternTemplate, Sample, TaskSpec, MASK};
pub use embedding::EmbeddingIndex;
pub use error::{Error, ErrorKind, Result};
pub use predict::{Mode, Prediction, Predictor, Strategy};
pub use prompt::{assemble_prompt, build_context, AssembledPrompt, PromptConfig};
pub use retrieval::{random_retrieve, retrieve_top_k, RetrievalHit};
pub use scorer::{
    CachedScorer, FixtureScorer, HashScorer, HttpScorer, ScoreRequest, ScoreVector, ScorerBackend,
};
