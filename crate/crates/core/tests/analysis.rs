mod common;

use agt::analysis::{
    capture_records, median_relaxed_select, normalize_row, phrase_length_distribution,
    select_and_compose, AttentionRecord,
};
use agt::corpus::{generate_synthetic_corpus, EmbeddingTable, Vocabulary};
use agt::training::{Data, TrainConfig};
use common::{brute_median_select, brute_spans};
use proptest::prelude::*;

fn tokens(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![Just(0.0), Just(1.0), Just(0.95), 0.0f64..1.0],
        1..24,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn selection_matches_brute_force(rows in prop::collection::vec(row_strategy(), 1..4), threshold in 0.0f64..1.0) {
        let n = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(n, 0.5); r }).collect();
        let toks = tokens(n);
        let spans = select_and_compose(&rows, &toks, threshold).unwrap();
        let got: Vec<_> = spans.iter().map(|s| (s.layer, s.start, s.end, s.text.clone())).collect();
        prop_assert_eq!(got, brute_spans(&rows, &toks, threshold));
        for row in &rows {
            prop_assert_eq!(median_relaxed_select(row), brute_median_select(row));
        }
    }

    #[test]
    fn spans_partition_the_selected_tokens(row in row_strategy(), threshold in 0.0f64..1.0) {
        let toks = tokens(row.len());
        let spans = select_and_compose(std::slice::from_ref(&row), &toks, threshold).unwrap();
        let mut covered = vec![false; row.len()];
        let mut last_end = 0;
        for (k, s) in spans.iter().enumerate() {
            prop_assert!(s.start < s.end && s.end <= row.len());
            if k > 0 {
                // maximal runs: a gap of at least one unselected token
                prop_assert!(s.start > last_end);
            }
            last_end = s.end;
            for c in &mut covered[s.start..s.end] {
                prop_assert!(!*c);
                *c = true;
            }
        }
        for (i, &w) in row.iter().enumerate() {
            prop_assert_eq!(covered[i], w > threshold);
        }
    }

    #[test]
    fn normalization_is_idempotent_and_affine_invariant(row in prop::collection::vec(-5.0f64..5.0, 1..20), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let norm = normalize_row(&row);
        prop_assert!(norm.iter().all(|&w| (0.0..=1.0).contains(&w)));
        let again = normalize_row(&norm);
        for (x, y) in norm.iter().zip(&again) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let shifted: Vec<f64> = row.iter().map(|w| a * w + b).collect();
        let norm2 = normalize_row(&shifted);
        for (x, y) in norm.iter().zip(&norm2) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn median_selection_is_a_strict_subset(row in row_strategy()) {
        let picked = median_relaxed_select(&row);
        prop_assert!(picked.len() <= row.len() / 2);
        if row.iter().all(|&w| w == row[0]) {
            prop_assert!(picked.is_empty());
        }
    }
}

#[test]
fn constant_rows_select_nothing() {
    assert_eq!(normalize_row(&[0.25; 4]), vec![0.0; 4]);
    assert!(
        select_and_compose(&[normalize_row(&[0.25; 4])], &tokens(4), 0.0)
            .unwrap()
            .is_empty()
    );
}

#[test]
fn captured_records_are_consistent() {
    let c = generate_synthetic_corpus(60, 3);
    let vocab = Vocabulary::from_tokens(
        c.all_units()
            .flat_map(|u| u.tokens.iter().map(String::as_str)),
    );
    let table = EmbeddingTable::random(vocab.len(), 6, 1.0, 4);
    let config = TrainConfig {
        layers: 3,
        hidden: 5,
        ..TrainConfig::default()
    };
    let net = config.init_network(6).unwrap();
    let data = Data {
        units: &c.test,
        vocabulary: &vocab,
        embeddings: &table,
    };
    let records = capture_records(&net, data, true).unwrap();
    assert_eq!(records.len(), c.test.len());
    for (r, u) in records.iter().zip(&c.test) {
        assert_eq!(r.tokens, u.tokens);
        assert_eq!(r.gold, u.label as usize);
        assert_eq!(r.attention.len(), 3);
        assert_eq!(r.gate_means.len(), 2);
        for row in &r.attention {
            assert_eq!(row.len(), r.len());
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        let gates = r.gates.as_ref().unwrap();
        for (g, m) in gates.iter().zip(&r.gate_means) {
            assert!((g.iter().sum::<f64>() / g.len() as f64 - m).abs() <= 1e-12);
        }
        let line = r.to_json_line();
        let back: AttentionRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r.summary());
    }
    let hist = phrase_length_distribution(&records, 0.95).unwrap();
    assert_eq!(hist.len(), 3);
    // every sentence selects its argmax token, so each layer has at least one span per record
    assert!(hist.iter().all(|h| h.spans() >= records.len()));
}
