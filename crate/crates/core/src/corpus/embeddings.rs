use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Vocabulary};
use crate::tensor::Tensor;

/// Range of the uniform draw for rows without a pretrained vector.
pub const OOV_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Pretrained,
    Random,
}

/// One fixed input vector per vocabulary id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vectors: Tensor,
    pub sources: Vec<RowSource>,
}

impl EmbeddingTable {
    /// Every row drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..vocab_size * dim)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        EmbeddingTable {
            vectors: Tensor::new(vec![vocab_size, dim], data).expect("sized"),
            sources: vec![RowSource::Random; vocab_size],
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn coverage(&self) -> usize {
        self.sources
            .iter()
            .filter(|s| **s == RowSource::Pretrained)
            .count()
    }
}

/// Reads `word v1 .. vd` lines. Vocabulary words found in the file (exact
/// match first, then lowercased) copy the file vector; the rest are drawn
/// uniformly from `[-0.05, 0.05]` with `seed`.
pub fn load_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    let wanted: HashSet<String> = vocab
        .words()
        .iter()
        .flat_map(|w| [w.clone(), w.to_lowercase()])
        .collect();
    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<(usize, usize)> = None;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CorpusError::BadFloat {
                        line: line_no,
                        token: tok.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        match dim {
            None => dim = Some((values.len(), line_no)),
            Some((d, first)) if d != values.len() => {
                return Err(CorpusError::Dimension {
                    line: line_no,
                    found: values.len(),
                    expected: d,
                    first_line: first,
                })
            }
            _ => {}
        }
        if values.is_empty() {
            return Err(CorpusError::Dimension {
                line: line_no,
                found: 0,
                expected: dim.map_or(0, |d| d.0),
                first_line: dim.map_or(line_no, |d| d.1),
            });
        }
        if wanted.contains(word) && !found.contains_key(word) {
            found.insert(word.to_string(), values);
        }
    }
    let dim = dim.ok_or(CorpusError::EmptyEmbeddings)?.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut sources = Vec::with_capacity(vocab.len());
    for (id, word) in vocab.words().iter().enumerate() {
        let hit = if id == super::vocab::UNKNOWN_ID {
            None
        } else {
            found.get(word).or_else(|| found.get(&word.to_lowercase()))
        };
        match hit {
            Some(v) => {
                data.extend_from_slice(v);
                sources.push(RowSource::Pretrained);
            }
            None => {
                data.extend((0..dim).map(|_| rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE)));
                sources.push(RowSource::Random);
            }
        }
    }
    Ok(EmbeddingTable {
        vectors: Tensor::new(vec![vocab.len(), dim], data).expect("sized"),
        sources,
    })
}
