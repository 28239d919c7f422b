//! Annotated sentences, treebanks, vocabularies and the synthetic corpus
//! generator.

mod annotation;
mod generator;
mod treebank;
mod vocab;

use std::path::Path;

pub use annotation::{
    load_annotated_corpus, parse_annotation_line, write_annotated_corpus, AnnotatedSentence, Slot, Span,
};
pub use generator::{generate_synthetic_corpus, GeneratorConfig};
pub use treebank::{
    load_enriched_treebank, load_treebank, parse_tree_line, write_treebank, Provenance, Tree, TreebankSentence,
    HEAD_MARKER, SEM_SEPARATOR,
};
pub use vocab::{build_vocabularies, VocabKind, Vocabularies, Vocabulary, BOS, BOS_ID, EOS, EOS_ID, UNK, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("format error: {0}")]
    Format(String),
    #[error("overlapping slot spans {0} and {1}")]
    SpanOverlap(Span, Span),
    #[error("slot span {span} outside sentence of length {len}")]
    SpanOutOfRange { span: Span, len: usize },
    #[error("slot '{0}' covers the whole sentence")]
    SlotCoversSentence(String),
    #[error("syntactic label '{0}' contains the semantic separator '*'")]
    SemanticLabel(String),
    #[error("generator config: {0}")]
    Config(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn at_line(self, line: usize) -> CorpusError {
        CorpusError::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// The error with any line-number wrapping removed.
    pub fn root(&self) -> &CorpusError {
        match self {
            CorpusError::AtLine { source, .. } => source.root(),
            e => e,
        }
    }
}

/// Reads a UTF-8 file as numbered lines (1-based).
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(text.lines().enumerate().map(|(i, l)| (i + 1, l.to_string())).collect())
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CorpusError> {
    std::fs::write(path, text).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
