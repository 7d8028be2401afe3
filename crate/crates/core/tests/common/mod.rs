//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use agt::corpus::{Batch, LabeledTree, TreeContent};
use agt::model::{AgtNetwork, ModelConfig};
use agt::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config(d_in: usize, hidden: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        head_hidden: hidden,
        layers,
        dropout: 0.0,
        ..ModelConfig::new(d_in)
    }
}

pub fn net(d_in: usize, hidden: usize, layers: usize, seed: u64) -> AgtNetwork {
    AgtNetwork::new(config(d_in, hidden, layers), seed).unwrap()
}

/// Random inputs in [-1, 1] with the given real lengths, padded to the longest.
pub fn random_batch(lengths: &[usize], d_in: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = *lengths.iter().max().unwrap();
    let b = lengths.len();
    let mut data = vec![0.0; b * n * d_in];
    let mut mask = vec![false; b * n];
    for (i, &len) in lengths.iter().enumerate() {
        for j in 0..len {
            mask[i * n + j] = true;
            for k in 0..d_in {
                data[(i * n + j) * d_in + k] = rng.gen_range(-1.0..=1.0);
            }
        }
    }
    Batch {
        inputs: Tensor::new(vec![b, n, d_in], data).unwrap(),
        mask,
        lengths: lengths.to_vec(),
        labels: (0..b).map(|i| i % 5).collect(),
    }
}

/// The real-token rows of batch item `i`.
pub fn sentence(batch: &Batch, i: usize) -> Vec<Vec<f64>> {
    let (n, d) = (batch.max_len(), batch.inputs.shape()[2]);
    (0..batch.lengths[i])
        .map(|j| batch.inputs.data()[(i * n + j) * d..(i * n + j + 1) * d].to_vec())
        .collect()
}

fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|c| {
            let mut acc = b.map_or(0.0, |b| b.data()[c]);
            for (r, xr) in x.iter().enumerate() {
                acc += xr * w.data()[r * cols + c];
            }
            acc
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone)]
pub struct OracleOut {
    pub probs: Vec<f64>,
    pub attention: Vec<Vec<f64>>,
    pub selections: Vec<Vec<f64>>,
    pub gates: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

/// Attention of one selector over projected rows `b`: `(s, d)`.
pub fn oracle_attend(
    score_matrix: &Tensor,
    score_vector: &Tensor,
    b: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = b
        .iter()
        .map(|row| {
            let h = affine(row, score_matrix, None);
            h.iter()
                .zip(score_vector.data())
                .map(|(h, w)| h.tanh() * w)
                .sum()
        })
        .collect();
    let d = softmax(&scores);
    let mut s = vec![0.0; b[0].len()];
    for (row, w) in b.iter().zip(&d) {
        for (acc, v) in s.iter_mut().zip(row) {
            *acc += w * v;
        }
    }
    (s, d)
}

/// One gated step: `(y_l, T_l)`, with `gate` replacing `T` when given.
pub fn oracle_layer(
    net: &AgtNetwork,
    l: usize,
    y_prev: &[f64],
    s: &[f64],
    gate: Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let layer = &net.layers[l - 1];
    let t: Vec<f64> = match gate {
        Some(g) => vec![g; s.len()],
        None => affine(s, &layer.gate.weight, Some(&layer.gate.bias))
            .into_iter()
            .map(sigmoid)
            .collect(),
    };
    let joined: Vec<f64> = y_prev.iter().chain(s).copied().collect();
    let f = affine(
        &joined,
        &layer.transform_weight,
        Some(&layer.transform_bias),
    );
    let y = (0..s.len())
        .map(|k| f[k].tanh() * t[k] + y_prev[k] * (1.0 - t[k]))
        .collect();
    (y, t)
}

/// Eval-mode forward pass of one sentence, in scalar loops.
pub fn oracle_forward(net: &AgtNetwork, x: &[Vec<f64>], gate: Option<f64>) -> OracleOut {
    let b: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            affine(row, &net.projection.weight, Some(&net.projection.bias))
                .into_iter()
                .map(f64::tanh)
                .collect()
        })
        .collect();
    let mut out = OracleOut {
        probs: vec![],
        attention: vec![],
        selections: vec![],
        gates: vec![],
        ys: vec![],
    };
    for l in 0..net.config.layers {
        let k = net.config.max_selector_layer.map_or(l, |k| l.min(k));
        let (s, d) = if k == l {
            let sel = net.selector(l);
            oracle_attend(&sel.score_matrix, &sel.score_vector, &b)
        } else {
            (out.selections[k].clone(), out.attention[k].clone())
        };
        let y = if l == 0 {
            s.clone()
        } else {
            let (y, t) = oracle_layer(net, l, out.ys.last().unwrap(), &s, gate);
            out.gates.push(t);
            y
        };
        out.attention.push(d);
        out.selections.push(s);
        out.ys.push(y);
    }
    let h: Vec<f64> = affine(
        out.ys.last().unwrap(),
        &net.head.hidden_weight,
        Some(&net.head.hidden_bias),
    )
    .into_iter()
    .map(f64::tanh)
    .collect();
    out.probs = softmax(&affine(
        &h,
        &net.head.output_weight,
        Some(&net.head.output_bias),
    ));
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Straightforward per-token reimplementation of threshold selection.
pub fn brute_spans(
    normalized: &[Vec<f64>],
    tokens: &[String],
    threshold: f64,
) -> Vec<(usize, usize, usize, String)> {
    let mut out = Vec::new();
    for (layer, row) in normalized.iter().enumerate() {
        let mut i = 0;
        while i < row.len() {
            if row[i] > threshold {
                let start = i;
                while i < row.len() && row[i] > threshold {
                    i += 1;
                }
                out.push((layer, start, i, tokens[start..i].join(" ")));
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Positions above the median, found by counting instead of sorting.
pub fn brute_median_select(row: &[f64]) -> Vec<usize> {
    let n = row.len();
    // k-th order statistic: the value with exactly k smaller-or-tied entries below it
    let order_stat = |k: usize| -> f64 {
        for &v in row {
            let below = row.iter().filter(|&&u| u < v).count();
            let tied = row.iter().filter(|&&u| u == v).count();
            if below <= k && k < below + tied {
                return v;
            }
        }
        unreachable!()
    };
    let median = if n % 2 == 1 {
        order_stat(n / 2)
    } else {
        (order_stat(n / 2 - 1) + order_stat(n / 2)) / 2.0
    };
    (0..n).filter(|&i| row[i] > median).collect()
}

/// Random normalized row: min-max scaled with occasional exact ties and plateaus.
pub fn random_normalized_row(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(1..=20);
    let raw: Vec<f64> = (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => 1.0,
            1 => 0.0,
            _ => rng.gen::<f64>(),
        })
        .collect();
    agt::analysis::normalize_row(&raw)
}

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}",
        "[A-Za-z0-9'.,!?-]{1,6}",
        Just("-LRB-".to_string()),
        Just("n't".to_string()),
    ]
}

/// Arbitrary labeled binary-or-wider trees with word leaves.
pub fn arb_tree() -> impl Strategy<Value = LabeledTree> {
    let leaf = (0u8..5, token()).prop_map(|(label, w)| LabeledTree {
        label,
        content: TreeContent::Leaf(w),
    });
    leaf.prop_recursive(6, 48, 3, |inner| {
        (0u8..5, prop::collection::vec(inner, 1..=3)).prop_map(|(label, children)| LabeledTree {
            label,
            content: TreeContent::Children(children),
        })
    })
}
