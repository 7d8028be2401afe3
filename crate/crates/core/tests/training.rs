mod common;

use agt::corpus::{generate_synthetic_corpus, EmbeddingTable, TrainingUnit, UnitMode, Vocabulary};
use agt::model::ForwardOptions;
use agt::tensor::Tensor;
use agt::training::{
    evaluate, fit, predict, train_epoch, AdadeltaConfig, AdadeltaState, Data, TrainConfig,
};
use proptest::prelude::*;

struct Fixture {
    units: Vec<TrainingUnit>,
    dev: Vec<TrainingUnit>,
    vocab: Vocabulary,
    table: EmbeddingTable,
}

impl Fixture {
    fn synthetic(size: usize, seed: u64) -> Self {
        let c = generate_synthetic_corpus(size, seed);
        let vocab = Vocabulary::from_tokens(
            c.all_units()
                .flat_map(|u| u.tokens.iter().map(String::as_str)),
        );
        let table = EmbeddingTable::random(vocab.len(), 8, 1.0, seed + 1);
        Fixture {
            units: c.train,
            dev: c.test,
            vocab,
            table,
        }
    }

    fn train(&self) -> Data<'_> {
        self.data(&self.units)
    }

    fn data<'a>(&'a self, units: &'a [TrainingUnit]) -> Data<'a> {
        Data {
            units,
            vocabulary: &self.vocab,
            embeddings: &self.table,
        }
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        layers: 3,
        hidden: 8,
        epochs: 3,
        batch_size: 16,
        mode: UnitMode::SentencesOnly,
        optimizer: AdadeltaConfig {
            lr: 1.0,
            ..AdadeltaConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn batches_cover_the_epoch_once() {
    let f = Fixture::synthetic(130, 1);
    let units: Vec<TrainingUnit> = f.units.iter().cycle().take(101).cloned().collect();
    let config = TrainConfig {
        batch_size: 50,
        ..small_config()
    };
    let mut net = config.init_network(8).unwrap();
    let mut state = AdadeltaState::new(net.params(), config.optimizer);
    let m = train_epoch(&mut net, f.data(&units), &config, &mut state, 0).unwrap();
    assert_eq!(m.batch_sizes, vec![50, 50, 1]);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let f = Fixture::synthetic(120, 2);
    let config = small_config();
    let run = || {
        let net = config.init_network(8).unwrap();
        fit(net, f.train(), f.data(&f.dev), &config, |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.best, b.best);
    assert_eq!(a.best_epoch, b.best_epoch);
    let strip = |log: &[agt::training::EpochLog]| -> Vec<(f64, f64, f64)> {
        log.iter()
            .map(|e| (e.mean_train_loss, e.train_acc, e.dev_acc))
            .collect()
    };
    assert_eq!(strip(&a.log), strip(&b.log));
}

#[test]
fn loss_falls_on_a_small_set() {
    let f = Fixture::synthetic(120, 3);
    let units = &f.units[..32];
    let config = TrainConfig {
        epochs: 5,
        dropout: 0.0,
        ..small_config()
    };
    let net = config.init_network(8).unwrap();
    let out = fit(net, f.data(units), f.data(units), &config, |_| {}).unwrap();
    let first = out.log[0].mean_train_loss;
    let last = out.log[4].mean_train_loss;
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn best_epoch_is_the_recorded_best() {
    let f = Fixture::synthetic(120, 4);
    let config = TrainConfig {
        epochs: 6,
        ..small_config()
    };
    let net = config.init_network(8).unwrap();
    let out = fit(net, f.train(), f.data(&f.dev), &config, |_| {}).unwrap();
    let best = out
        .log
        .iter()
        .map(|e| e.dev_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_dev_acc, best);
    let first_best = out.log.iter().position(|e| e.dev_acc == best).unwrap() + 1;
    assert_eq!(out.best_epoch, first_best);
    assert_eq!(evaluate(&out.best, f.data(&f.dev)).unwrap(), best);
}

#[test]
fn zero_output_weights_predict_class_zero() {
    let f = Fixture::synthetic(60, 5);
    let mut net = small_config().init_network(8).unwrap();
    net.head.output_weight = Tensor::zeros(net.head.output_weight.shape());
    net.head.output_bias = Tensor::zeros(net.head.output_bias.shape());
    assert!(predict(&net, f.train()).unwrap().iter().all(|&p| p == 0));
}

#[test]
fn evaluate_ignores_unit_order() {
    let f = Fixture::synthetic(200, 6);
    let net = small_config().init_network(8).unwrap();
    let mut reversed = f.units.clone();
    reversed.reverse();
    assert_eq!(
        evaluate(&net, f.train()).unwrap(),
        evaluate(&net, f.data(&reversed)).unwrap()
    );
    assert!(evaluate(&net, f.data(&[])).is_err());
}

#[test]
fn ablated_network_shares_layer_zero_attention() {
    let f = Fixture::synthetic(120, 7);
    let config = TrainConfig {
        max_selector_layer: Some(0),
        epochs: 2,
        ..small_config()
    };
    let net = config.init_network(8).unwrap();
    let out = fit(net, f.train(), f.data(&f.dev), &config, |_| {}).unwrap();
    let units: Vec<&TrainingUnit> = f.dev.iter().take(10).collect();
    let batch = agt::corpus::encode_batch(&units, &f.vocab, &f.table).unwrap();
    let fwd = out.best.forward(&batch, &ForwardOptions::eval()).unwrap();
    for d in &fwd.attention[1..] {
        assert_eq!(d, &fwd.attention[0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn adadelta_moves_iff_gradient_nonzero(values in prop::collection::vec(-1.0f64..1.0, 1..6), zero_mask in prop::collection::vec(any::<bool>(), 6)) {
        let n = values.len();
        let start = Tensor::vector(values.clone());
        let grads: Vec<f64> = (0..n).map(|i| if zero_mask[i] { 0.0 } else { values[i] + 2.0 }).collect();
        let mut p = start.clone();
        let mut state = AdadeltaState::new([&p], AdadeltaConfig::default());
        state.step(&mut [&mut p], &[Tensor::vector(grads.clone())], &["p".to_string()]).unwrap();
        for ((now, before), g) in p.data().iter().zip(start.data()).zip(&grads) {
            prop_assert_eq!(now == before, *g == 0.0);
        }
        for acc in [&state.sq_grad, &state.sq_update] {
            prop_assert!(acc.iter().all(|t| t.data().iter().all(|&x| x >= 0.0)));
        }
    }
}
