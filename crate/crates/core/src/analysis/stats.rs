use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::select::{normalize_attention, selected_runs};
use super::{AnalysisError, AttentionRecord};

/// Spans at or above this normalized weight count as "high" for spikiness.
pub const SPIKE_HIGH: f64 = 0.95;
/// Spans at or below this normalized weight count as "low" for spikiness.
pub const SPIKE_LOW: f64 = 0.05;

fn layer_count(records: &[AttentionRecord]) -> Result<usize, AnalysisError> {
    let first = records.first().ok_or(AnalysisError::Empty)?;
    let layers = first.layers();
    if let Some(bad) = records.iter().position(|r| r.layers() != layers) {
        return Err(AnalysisError::Inconsistent(format!(
            "record {bad} has {} layers, expected {layers}",
            records[bad].layers()
        )));
    }
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseLengthHistogram {
    pub layer: usize,
    /// span length -> number of spans
    pub counts: BTreeMap<usize, usize>,
    /// Mean span length, `0.0` when `empty`.
    pub mean: f64,
    pub empty: bool,
}

impl PhraseLengthHistogram {
    fn from_counts(layer: usize, counts: BTreeMap<usize, usize>) -> Self {
        let spans: usize = counts.values().sum();
        let total: usize = counts.iter().map(|(len, c)| len * c).sum();
        PhraseLengthHistogram {
            layer,
            mean: if spans == 0 {
                0.0
            } else {
                total as f64 / spans as f64
            },
            empty: spans == 0,
            counts,
        }
    }

    pub fn spans(&self) -> usize {
        self.counts.values().sum()
    }

    /// Histogram of the union of both span populations.
    pub fn merge(&self, other: &Self) -> Self {
        let mut counts = self.counts.clone();
        for (len, c) in &other.counts {
            *counts.entry(*len).or_default() += c;
        }
        Self::from_counts(self.layer, counts)
    }
}

/// Per-layer distribution of phrase lengths at `threshold`.
pub fn phrase_length_distribution(
    records: &[AttentionRecord],
    threshold: f64,
) -> Result<Vec<PhraseLengthHistogram>, AnalysisError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AnalysisError::Threshold(threshold));
    }
    let layers = layer_count(records)?;
    let mut counts = vec![BTreeMap::<usize, usize>::new(); layers];
    for record in records {
        for (l, row) in normalize_attention(record).iter().enumerate() {
            for (s, e) in selected_runs(row, threshold) {
                *counts[l].entry(e - s).or_default() += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(l, c)| PhraseLengthHistogram::from_counts(l, c))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spikiness {
    pub layer: usize,
    /// Fraction of normalized weights `>= 0.95`.
    pub high: f64,
    /// Fraction of normalized weights `<= 0.05`.
    pub low: f64,
}

/// Share of normalized attention weights near 1 and near 0, per layer,
/// pooled over every real token of every record.
pub fn attention_spikiness(records: &[AttentionRecord]) -> Result<Vec<Spikiness>, AnalysisError> {
    let layers = layer_count(records)?;
    let mut high = vec![0usize; layers];
    let mut low = vec![0usize; layers];
    let mut total = vec![0usize; layers];
    for record in records {
        for (l, row) in normalize_attention(record).iter().enumerate() {
            high[l] += row.iter().filter(|&&w| w >= SPIKE_HIGH).count();
            low[l] += row.iter().filter(|&&w| w <= SPIKE_LOW).count();
            total[l] += row.len();
        }
    }
    Ok((0..layers)
        .map(|l| {
            let n = total[l].max(1) as f64;
            Spikiness {
                layer: l,
                high: high[l] as f64 / n,
                low: low[l] as f64 / n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    /// Network layer index (gates exist from layer 1 up).
    pub layer: usize,
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

/// Linear interpolation between order statistics of sorted `values`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean and 10/50/90th percentiles of every gate component per layer,
/// pooled over records. Requires records captured with full gate vectors.
pub fn gate_activity_summary(records: &[AttentionRecord]) -> Result<Vec<GateStats>, AnalysisError> {
    layer_count(records)?;
    let gated = records[0].layers().saturating_sub(1);
    let mut pooled = vec![Vec::new(); gated];
    for (i, record) in records.iter().enumerate() {
        let gates = record
            .gates
            .as_ref()
            .ok_or(AnalysisError::MissingGates(i))?;
        if gates.len() != gated {
            return Err(AnalysisError::Inconsistent(format!(
                "record {i} has {} gate rows, expected {gated}",
                gates.len()
            )));
        }
        for (l, g) in gates.iter().enumerate() {
            pooled[l].extend_from_slice(g);
        }
    }
    Ok(pooled
        .into_iter()
        .enumerate()
        .map(|(l, mut values)| {
            values.sort_by(f64::total_cmp);
            GateStats {
                layer: l + 1,
                mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
                p10: percentile(&values, 0.1),
                p50: percentile(&values, 0.5),
                p90: percentile(&values, 0.9),
            }
        })
        .collect())
}

/// The `k` most frequently selected tokens per layer (ties broken
/// alphabetically).
pub fn top_selected_words(
    records: &[AttentionRecord],
    threshold: f64,
    k: usize,
) -> Result<Vec<Vec<(String, usize)>>, AnalysisError> {
    let layers = layer_count(records)?;
    let mut counts = vec![HashMap::<&str, usize>::new(); layers];
    for record in records {
        for (l, row) in normalize_attention(record).iter().enumerate() {
            for (i, &w) in row.iter().enumerate() {
                if w > threshold {
                    *counts[l].entry(record.tokens[i].as_str()).or_default() += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| {
            let mut v: Vec<(String, usize)> =
                c.into_iter().map(|(w, n)| (w.to_string(), n)).collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.truncate(k);
            v
        })
        .collect())
}
