//! The incremental structured-language-model parser: word-parse prefixes,
//! derivations, and synchronous multi-stack beam search.

mod prefix;
mod search;
mod tree;

pub use prefix::{StackEntry, WordParsePrefix};
pub use search::{
    accumulate_counts, beam_parse, perplexity, replay, score_forest, search, string_probability,
    string_probability_with, BeamConfig, Parse, PerplexityReport, SearchOutcome, StringProbability,
};
pub use tree::{complete_forest, derivation_of, forest_derivation, HeadSide, ParseTree, Step, COMPLETION_LABEL};

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("no parse survived the search")]
    NoParse,
    #[error("empty sentence")]
    EmptySentence,
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("tree is not binarized: {0}")]
    NotBinarized(String),
    #[error("label '{0}' is not in the model vocabulary")]
    UnknownLabel(String),
    #[error("beam configuration: {0}")]
    Config(String),
}
