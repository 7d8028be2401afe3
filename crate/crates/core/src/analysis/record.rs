use serde::{Deserialize, Serialize};

use crate::corpus::{encode_batch, TrainingUnit};
use crate::model::{AgtNetwork, ForwardOptions};
use crate::training::{argmax, Data, TrainError};

/// Attention and gate activity of one sentence, captured in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tokens: Vec<String>,
    /// `L x N`; row `l` is layer `l`'s attention over the real tokens.
    pub attention: Vec<Vec<f64>>,
    /// Mean gate activation of layers `1..L` (layer 0 has no gate).
    pub gate_means: Vec<f64>,
    /// Full gate vectors of layers `1..L`, when captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<Vec<f64>>>,
    pub prediction: usize,
    pub gold: usize,
}

impl AttentionRecord {
    pub fn layers(&self) -> usize {
        self.attention.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The record without full gate vectors, as written to dump files.
    pub fn summary(&self) -> AttentionRecord {
        AttentionRecord {
            gates: None,
            ..self.clone()
        }
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.summary()).expect("records serialize")
    }
}

/// Runs `net` over `data` and records every unit.
pub fn capture_records(
    net: &AgtNetwork,
    data: Data<'_>,
    full_gates: bool,
) -> Result<Vec<AttentionRecord>, TrainError> {
    let mut out = Vec::with_capacity(data.units.len());
    for chunk in data.units.chunks(64) {
        let units: Vec<&TrainingUnit> = chunk.iter().collect();
        let batch = encode_batch(&units, data.vocabulary, data.embeddings)?;
        let fwd = net.forward(&batch, &ForwardOptions::eval())?;
        for (i, unit) in units.iter().enumerate() {
            let n = unit.tokens.len();
            let attention = fwd
                .attention
                .iter()
                .map(|a| a.row(i)[..n].to_vec())
                .collect();
            let gate_rows: Vec<Vec<f64>> = fwd.gates.iter().map(|g| g.row(i).to_vec()).collect();
            let gate_means = gate_rows
                .iter()
                .map(|g| g.iter().sum::<f64>() / g.len() as f64)
                .collect();
            out.push(AttentionRecord {
                tokens: unit.tokens.clone(),
                attention,
                gate_means,
                gates: full_gates.then_some(gate_rows),
                prediction: argmax(fwd.probs.row(i)),
                gold: unit.label as usize,
            });
        }
    }
    Ok(out)
}
