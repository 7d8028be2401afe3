//! Treebank ingestion, vocabulary and embeddings, batching, and the
//! synthetic negation corpus.

mod batch;
mod embeddings;
pub mod synthetic;
mod tree;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{encode_batch, Batch};
pub use embeddings::{load_embeddings, EmbeddingTable, RowSource, OOV_INIT_RANGE};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus};
pub use tree::{
    parse_treebank, LabeledTree, ParseError, ParseErrorKind, TreeContent, UnitMode, NUM_LABELS,
};
pub use vocab::{Vocabulary, UNKNOWN_ID, UNKNOWN_TOKEN};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error(
        "embedding line {line}: dimension {found}, expected {expected} (set by line {first_line})"
    )]
    Dimension {
        line: usize,
        found: usize,
        expected: usize,
        first_line: usize,
    },
    #[error("embedding line {line}: cannot parse {token:?} as a finite float")]
    BadFloat { line: usize, token: String },
    #[error("embedding file has no vectors")]
    EmptyEmbeddings,
    #[error("cannot encode an empty batch")]
    EmptyBatch,
    #[error("training unit has no tokens")]
    EmptyUnit,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A token sequence with its sentiment label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingUnit {
    pub tokens: Vec<String>,
    pub label: u8,
    pub is_full_sentence: bool,
}

impl TrainingUnit {
    /// Flat tree with neutral leaves, for writing units in treebank format.
    pub fn to_tree(&self) -> LabeledTree {
        LabeledTree::node(
            self.label,
            self.tokens
                .iter()
                .map(|t| LabeledTree::leaf(2, t.clone()))
                .collect(),
        )
    }
}

pub fn read_treebank(path: &Path) -> Result<Vec<LabeledTree>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_treebank(&text).map_err(|(line, source)| CorpusError::Parse { line, source })
}

pub fn units_from_trees(trees: &[LabeledTree], mode: UnitMode) -> Vec<TrainingUnit> {
    trees.iter().flat_map(|t| t.training_units(mode)).collect()
}
