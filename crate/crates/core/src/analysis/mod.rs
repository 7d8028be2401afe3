//! Compositional analysis of layer-wise attention: per-sentence min-max
//! normalization, word selection above a threshold, phrase composition from
//! consecutive selections, and pooled statistics and heatmaps.

mod heatmap;
mod record;
mod select;
mod stats;

use thiserror::Error;

pub use heatmap::{cell_fill, render_svg, render_text_grid, shade_level, SHADE_RAMP};
pub use record::{capture_records, AttentionRecord};
pub use select::{
    median, median_relaxed_select, normalize_attention, normalize_row, select_and_compose,
    selected_runs, PhraseSpan,
};
pub use stats::{
    attention_spikiness, gate_activity_summary, percentile, phrase_length_distribution,
    top_selected_words, GateStats, PhraseLengthHistogram, Spikiness, SPIKE_HIGH, SPIKE_LOW,
};

/// Selection threshold on normalized attention.
pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("no records to analyze")]
    Empty,
    #[error("record {0} was captured without gate vectors")]
    MissingGates(usize),
    #[error("inconsistent records: {0}")]
    Inconsistent(String),
}
