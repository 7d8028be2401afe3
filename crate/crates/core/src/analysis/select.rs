use serde::{Deserialize, Serialize};

use super::{AnalysisError, AttentionRecord};

/// A maximal run of selected tokens at one layer, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub layer: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl PhraseSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Min-max scaling to `[0, 1]`; a constant row maps to all zeros.
pub fn normalize_row(row: &[f64]) -> Vec<f64> {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if row.is_empty() || max == min {
        return vec![0.0; row.len()];
    }
    row.iter().map(|w| (w - min) / (max - min)).collect()
}

/// Per-layer min-max normalization within the sentence.
pub fn normalize_attention(record: &AttentionRecord) -> Vec<Vec<f64>> {
    record.attention.iter().map(|r| normalize_row(r)).collect()
}

/// `[start, end)` runs of positions whose value is strictly above `threshold`.
pub fn selected_runs(row: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in row.iter().enumerate() {
        match (v > threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, row.len()));
    }
    runs
}

/// Selects tokens above `threshold` at every layer and merges consecutive
/// selections into phrases, ordered by layer then position.
pub fn select_and_compose(
    normalized: &[Vec<f64>],
    tokens: &[String],
    threshold: f64,
) -> Result<Vec<PhraseSpan>, AnalysisError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AnalysisError::Threshold(threshold));
    }
    let mut spans = Vec::new();
    for (layer, row) in normalized.iter().enumerate() {
        for (start, end) in selected_runs(row, threshold) {
            let text = tokens
                .get(start..end)
                .map_or_else(String::new, |t| t.join(" "));
            spans.push(PhraseSpan {
                layer,
                start,
                end,
                text,
            });
        }
    }
    Ok(spans)
}

/// Median; even lengths average the two central order statistics.
pub fn median(row: &[f64]) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Positions strictly above the row median, ascending.
pub fn median_relaxed_select(row: &[f64]) -> Vec<usize> {
    let m = median(row);
    (0..row.len()).filter(|&i| row[i] > m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn normalization_examples() {
        let r = normalize_row(&[0.2, 0.4, 0.6]);
        assert!(
            (r[0] - 0.0).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12 && (r[2] - 1.0).abs() < 1e-12
        );
        assert_eq!(normalize_row(&[1.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(normalize_row(&[0.25; 4]), vec![0.0; 4]);
    }

    #[test]
    fn span_examples() {
        let spans = select_and_compose(&[vec![1.0, 0.97, 0.3, 0.96]], &toks(4), 0.95).unwrap();
        let ranges: Vec<_> = spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(ranges, vec![(0, 2), (3, 4)]);
        assert_eq!(spans[0].text, "w0 w1");

        assert!(select_and_compose(&[vec![0.95, 0.5, 0.0]], &toks(3), 0.95)
            .unwrap()
            .is_empty());

        let spans = select_and_compose(&[vec![1.0; 4]], &toks(4), 0.95).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (0, 4));
    }

    #[test]
    fn threshold_must_be_a_fraction() {
        assert!(matches!(
            select_and_compose(&[vec![1.0]], &toks(1), 1.5),
            Err(AnalysisError::Threshold(_))
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_relaxed_select(&[0.0, 0.5, 1.0]), vec![2]);
        assert!(median_relaxed_select(&[1.0, 1.0, 1.0]).is_empty());
        assert_eq!(median(&[0.0, 1.0]), 0.5);
        assert_eq!(median_relaxed_select(&[0.0, 1.0]), vec![1]);
    }
}
