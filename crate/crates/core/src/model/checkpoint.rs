use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AgtNetwork, ModelConfig, ModelError};
use crate::corpus::{EmbeddingTable, RowSource, Vocabulary};
use crate::tensor::Tensor;

const FORMAT: &str = "agt-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to run a trained model on new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: AgtNetwork,
    pub vocabulary: Vocabulary,
    pub embeddings: EmbeddingTable,
}

/// Tensor with its values stored as base64 little-endian `f64` bytes, which
/// keeps the round trip bit-exact.
#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

impl StoredTensor {
    fn encode(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        StoredTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(self) -> Result<(String, Tensor), CheckpointError> {
        let bytes = STANDARD
            .decode(self.data.as_bytes())
            .map_err(|e| CheckpointError::Format(format!("{}: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(CheckpointError::Format(format!(
                "{}: truncated data",
                self.name
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(self.shape, data)
            .map_err(|e| CheckpointError::Format(format!("{}: {e}", self.name)))?;
        Ok((self.name, t))
    }
}

#[derive(Serialize, Deserialize)]
struct StoredCheckpoint {
    format: String,
    version: u32,
    hyperparameters: ModelConfig,
    vocabulary: Vocabulary,
    embedding_sources: Vec<RowSource>,
    embeddings: StoredTensor,
    parameters: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), CheckpointError> {
        let stored = StoredCheckpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            hyperparameters: self.network.config.clone(),
            vocabulary: self.vocabulary.clone(),
            embedding_sources: self.embeddings.sources.clone(),
            embeddings: StoredTensor::encode("embeddings", &self.embeddings.vectors),
            parameters: self
                .network
                .param_names()
                .iter()
                .zip(self.network.params())
                .map(|(n, t)| StoredTensor::encode(n, t))
                .collect(),
        };
        let mut writer = BufWriter::new(writer);
        serde_json::to_writer_pretty(&mut writer, &stored)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, CheckpointError> {
        let stored: StoredCheckpoint = serde_json::from_reader(BufReader::new(reader))?;
        if stored.format != FORMAT || stored.version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported format {} v{}",
                stored.format, stored.version
            )));
        }
        let (_, vectors) = stored.embeddings.decode()?;
        if vectors.rank() != 2
            || vectors.shape()[0] != stored.vocabulary.len()
            || vectors.shape()[0] != stored.embedding_sources.len()
            || vectors.shape()[1] != stored.hyperparameters.input_dim
        {
            return Err(CheckpointError::Format(format!(
                "embedding shape {:?} does not match vocabulary/config",
                vectors.shape()
            )));
        }
        let params = stored
            .parameters
            .into_iter()
            .map(StoredTensor::decode)
            .collect::<Result<Vec<_>, _>>()?;
        let network = AgtNetwork::from_params(stored.hyperparameters, params)?;
        Ok(Checkpoint {
            network,
            vocabulary: stored.vocabulary,
            embeddings: EmbeddingTable {
                vectors,
                sources: stored.embedding_sources,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.to_writer(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_reader(File::open(path)?)
    }
}
