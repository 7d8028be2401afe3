use super::{CorpusError, EmbeddingTable, TrainingUnit, Vocabulary};
use crate::tensor::Tensor;

/// Padded mini-batch: `inputs` is `[batch, max_len, d_in]`, padding rows are
/// zero and `mask` is false there.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// Copy of this batch padded out to `max_len` positions.
    pub fn padded_to(&self, max_len: usize) -> Batch {
        let (b, n, d) = (self.size(), self.max_len(), self.inputs.shape()[2]);
        assert!(max_len >= n, "cannot shrink a batch");
        let mut data = vec![0.0; b * max_len * d];
        let mut mask = vec![false; b * max_len];
        for i in 0..b {
            data[i * max_len * d..(i * max_len + n) * d]
                .copy_from_slice(&self.inputs.data()[i * n * d..(i + 1) * n * d]);
            mask[i * max_len..i * max_len + n].copy_from_slice(&self.mask[i * n..(i + 1) * n]);
        }
        Batch {
            inputs: Tensor::new(vec![b, max_len, d], data).expect("sized"),
            mask,
            lengths: self.lengths.clone(),
            labels: self.labels.clone(),
        }
    }
}

pub fn encode_batch(
    units: &[&TrainingUnit],
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
) -> Result<Batch, CorpusError> {
    if units.is_empty() {
        return Err(CorpusError::EmptyBatch);
    }
    if units.iter().any(|u| u.tokens.is_empty()) {
        return Err(CorpusError::EmptyUnit);
    }
    let b = units.len();
    let n = units.iter().map(|u| u.tokens.len()).max().unwrap_or(0);
    let d = embeddings.dim();
    let mut data = vec![0.0; b * n * d];
    let mut mask = vec![false; b * n];
    for (i, unit) in units.iter().enumerate() {
        for (j, tok) in unit.tokens.iter().enumerate() {
            let id = vocab.lookup(tok);
            let at = (i * n + j) * d;
            data[at..at + d].copy_from_slice(embeddings.row(id));
            mask[i * n + j] = true;
        }
    }
    Ok(Batch {
        inputs: Tensor::new(vec![b, n, d], data).expect("sized"),
        mask,
        lengths: units.iter().map(|u| u.tokens.len()).collect(),
        labels: units.iter().map(|u| u.label as usize).collect(),
    })
}
