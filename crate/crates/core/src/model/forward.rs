use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgtNetwork, LayerVars, ModelError, NetworkVars, SelectorVars};
use crate::corpus::Batch;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `seed`.
    Train {
        seed: u64,
    },
    Eval,
}

/// Replaces every transform gate with a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOverride {
    /// Pure carry: `y_l = y_{l-1}`.
    Closed,
    /// Pure transform: `y_l = f([y_{l-1}; s_l])`.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub gate_override: Option<GateOverride>,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            gate_override: None,
        }
    }

    pub fn train(seed: u64) -> Self {
        ForwardOptions {
            mode: Mode::Train { seed },
            gate_override: None,
        }
    }
}

/// Tape handles for everything a forward pass exposes.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub probs: Var,
    /// `d_l`, `[batch, N]`, one per layer.
    pub attention: Vec<Var>,
    /// `s_l`, `[batch, d]`, one per layer.
    pub selections: Vec<Var>,
    /// `T_l`, `[batch, d]`, for layers `1..L`.
    pub gates: Vec<Var>,
    /// `y_l` as passed upward (after dropout in train mode).
    pub representations: Vec<Var>,
}

/// Concrete values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: Tensor,
    pub attention: Vec<Tensor>,
    pub selections: Vec<Tensor>,
    pub gates: Vec<Tensor>,
    pub representations: Vec<Tensor>,
}

struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let factors = (0..tape.value(x).numel())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Ok(tape.scale(x, factors)?)
    }
}

impl AgtNetwork {
    /// `tanh(x W + b)` at every word position: `[b, N, d_in] -> [b, N, d]`.
    pub fn project(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        inputs: Var,
    ) -> Result<Var, ModelError> {
        let shape = tape.shape(inputs).to_vec();
        if shape.len() != 3 || shape[2] != self.config.input_dim {
            return Err(ModelError::Config(format!(
                "input shape {shape:?} does not match input_dim {}",
                self.config.input_dim
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        let flat = tape.reshape(inputs, &[b * n, shape[2]])?;
        let h = tape.matmul(flat, vars.projection_weight)?;
        let h = tape.add_row(h, vars.projection_bias)?;
        let h = tape.tanh(h);
        Ok(tape.reshape(h, &[b, n, self.config.hidden])?)
    }

    /// Scores `m_n = w · tanh(W B[n])`, attention `d = masked_softmax(m)`
    /// and selection `s = Σ_n d_n B[n]`. Returns `(s, d)`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        selector: SelectorVars,
        projected: Var,
        mask: &[bool],
    ) -> Result<(Var, Var), ModelError> {
        let shape = tape.shape(projected).to_vec();
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        let flat = tape.reshape(projected, &[b * n, d])?;
        let h = tape.matmul(flat, selector.score_matrix)?;
        let h = tape.tanh(h);
        let w = tape.reshape(selector.score_vector, &[d, 1])?;
        let scores = tape.matmul(h, w)?;
        let scores = tape.reshape(scores, &[b, n])?;
        let weights = tape.masked_softmax(scores, mask)?;
        let selection = tape.weighted_sum(weights, projected)?;
        Ok((selection, weights))
    }

    /// `T = σ(s W_t + b_t)`.
    pub fn gate_activation(
        &self,
        tape: &mut Tape,
        layer: &LayerVars,
        selection: Var,
    ) -> Result<Var, ModelError> {
        let z = tape.matmul(selection, layer.gate_weight)?;
        let z = tape.add_row(z, layer.gate_bias)?;
        Ok(tape.sigmoid(z))
    }

    /// `tanh([y_prev; s] W_f + b_f) ⊙ T + y_prev ⊙ (1 - T)`.
    pub fn combine(
        &self,
        tape: &mut Tape,
        layer: &LayerVars,
        y_prev: Var,
        selection: Var,
        gate: Var,
    ) -> Result<Var, ModelError> {
        let joined = tape.concat(y_prev, selection)?;
        let f = tape.matmul(joined, layer.transform_weight)?;
        let f = tape.add_row(f, layer.transform_bias)?;
        let f = tape.tanh(f);
        let fresh = tape.mul(f, gate)?;
        let carry_gate = tape.one_minus(gate);
        let carried = tape.mul(y_prev, carry_gate)?;
        Ok(tape.add(fresh, carried)?)
    }

    /// One gated layer `l >= 1` with its own attention. Returns `(y_l, d_l, T_l)`.
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        l: usize,
        y_prev: Var,
        projected: Var,
        mask: &[bool],
    ) -> Result<(Var, Var, Var), ModelError> {
        assert!(l >= 1 && l < self.layer_count(), "layer {l} has no gate");
        let (selection, weights) = self.attend(tape, vars.selectors[l], projected, mask)?;
        let layer = &vars.layers[l - 1];
        let gate = self.gate_activation(tape, layer, selection)?;
        let y = self.combine(tape, layer, y_prev, selection, gate)?;
        Ok((y, weights, gate))
    }

    /// `softmax(tanh(y W_1 + b_1) W_2 + b_2)`.
    fn head_forward(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        y: Var,
        dropout: &mut Dropout,
    ) -> Result<Var, ModelError> {
        let [w1, b1, w2, b2] = vars.head;
        let h = tape.matmul(y, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.tanh(h);
        let h = dropout.apply(tape, h)?;
        let logits = tape.matmul(h, w2)?;
        let logits = tape.add_row(logits, b2)?;
        Ok(tape.softmax(logits)?)
    }

    pub fn build_forward(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        inputs: Var,
        mask: &[bool],
        opts: &ForwardOptions,
    ) -> Result<ForwardVars, ModelError> {
        let mut dropout = Dropout {
            rate: self.config.dropout,
            rng: match opts.mode {
                Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
                Mode::Eval => None,
            },
        };
        let projected = self.project(tape, vars, inputs)?;
        let batch = tape.shape(projected)[0];
        let d = self.config.hidden;

        let mut attention = Vec::with_capacity(self.layer_count());
        let mut selections = Vec::with_capacity(self.layer_count());
        let mut gates = Vec::with_capacity(self.layers.len());
        let mut representations = Vec::with_capacity(self.layer_count());

        for l in 0..self.layer_count() {
            let source = self.config.selector_for(l);
            let (selection, weights) = if source == l {
                self.attend(tape, vars.selectors[l], projected, mask)?
            } else {
                (selections[source], attention[source])
            };
            attention.push(weights);
            selections.push(selection);

            let y = if l == 0 {
                selection
            } else {
                let layer = &vars.layers[l - 1];
                let gate = match opts.gate_override {
                    None => self.gate_activation(tape, layer, selection)?,
                    Some(GateOverride::Closed) => tape.constant(Tensor::zeros(&[batch, d])),
                    Some(GateOverride::Open) => tape.constant(Tensor::full(&[batch, d], 1.0)),
                };
                gates.push(gate);
                let y_prev = *representations.last().expect("layer 0 ran");
                self.combine(tape, layer, y_prev, selection, gate)?
            };
            representations.push(dropout.apply(tape, y)?);
        }

        let top = *representations.last().expect("at least one layer");
        let probs = self.head_forward(tape, vars, top, &mut dropout)?;
        Ok(ForwardVars {
            probs,
            attention,
            selections,
            gates,
            representations,
        })
    }

    /// Mean cross-entropy of the batch labels.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        batch: &Batch,
        opts: &ForwardOptions,
    ) -> Result<(Var, ForwardVars), ModelError> {
        let inputs = tape.constant(batch.inputs.clone());
        let fwd = self.build_forward(tape, vars, inputs, &batch.mask, opts)?;
        let loss = tape.cross_entropy(fwd.probs, &batch.labels)?;
        Ok((loss, fwd))
    }

    /// Forward pass without gradients.
    pub fn forward(
        &self,
        batch: &Batch,
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let inputs = tape.constant(batch.inputs.clone());
        let fwd = self.build_forward(&mut tape, &vars, inputs, &batch.mask, opts)?;
        let grab = |vs: &[Var]| {
            vs.iter()
                .map(|v| tape.value(*v).clone())
                .collect::<Vec<_>>()
        };
        Ok(ForwardOutput {
            probs: tape.value(fwd.probs).clone(),
            attention: grab(&fwd.attention),
            selections: grab(&fwd.selections),
            gates: grab(&fwd.gates),
            representations: grab(&fwd.representations),
        })
    }

    /// Loss, per-parameter gradients (canonical order) and class probabilities.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch,
        opts: &ForwardOptions,
    ) -> Result<(f64, Vec<Tensor>, Tensor), ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let (loss, fwd) = self.loss_on_tape(&mut tape, &vars, batch, opts)?;
        let mut grads = tape.backward(loss)?;
        let value = tape.value(loss).item().expect("scalar loss");
        let out = vars
            .all
            .iter()
            .zip(self.params())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, out, tape.value(fwd.probs).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn batch(b: usize, n: usize, d_in: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * n * d_in)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Batch {
            inputs: Tensor::new(vec![b, n, d_in], data).unwrap(),
            mask: vec![true; b * n],
            lengths: vec![n; b],
            labels: (0..b).map(|i| i % 5).collect(),
        }
    }

    fn net(layers: usize) -> AgtNetwork {
        let cfg = ModelConfig {
            hidden: 4,
            head_hidden: 4,
            layers,
            ..ModelConfig::new(3)
        };
        AgtNetwork::new(cfg, 11).unwrap()
    }

    #[test]
    fn probabilities_are_distributions() {
        let out = net(3)
            .forward(&batch(4, 5, 3, 1), &ForwardOptions::eval())
            .unwrap();
        for r in 0..4 {
            let row = out.probs.row(r);
            assert_eq!(row.len(), 5);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(out.attention.len(), 3);
        assert_eq!(out.gates.len(), 2);
    }

    #[test]
    fn eval_is_bitwise_deterministic() {
        let n = net(3);
        let b = batch(2, 4, 3, 2);
        let a = n.forward(&b, &ForwardOptions::eval()).unwrap();
        let c = n.forward(&b, &ForwardOptions::eval()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn train_mode_dropout_depends_on_seed() {
        let n = net(3);
        let b = batch(2, 4, 3, 2);
        let a = n.forward(&b, &ForwardOptions::train(1)).unwrap();
        let a2 = n.forward(&b, &ForwardOptions::train(1)).unwrap();
        let c = n.forward(&b, &ForwardOptions::train(2)).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a.probs, c.probs);
    }

    #[test]
    fn zero_projection_gives_zero_vectors() {
        let mut n = net(2);
        n.projection.weight = Tensor::zeros(n.projection.weight.shape());
        let mut tape = Tape::new();
        let vars = n.bind(&mut tape, false);
        let b = batch(1, 3, 3, 4);
        let x = tape.constant(b.inputs.clone());
        let p = n.project(&mut tape, &vars, x).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_word_attention_is_one() {
        let n = net(2);
        let b = batch(1, 1, 3, 5);
        let mut tape = Tape::new();
        let vars = n.bind(&mut tape, false);
        let x = tape.constant(b.inputs.clone());
        let p = n.project(&mut tape, &vars, x).unwrap();
        let (s, d) = n.attend(&mut tape, vars.selectors[0], p, &b.mask).unwrap();
        assert_eq!(tape.value(d).data(), &[1.0]);
        assert_eq!(tape.value(s).data(), tape.value(p).data());
    }

    #[test]
    fn gate_with_zero_weights_is_sigmoid_of_bias() {
        let mut n = net(2);
        n.layers[0].gate.weight = Tensor::zeros(&[4, 4]);
        let mut tape = Tape::new();
        let vars = n.bind(&mut tape, false);
        let s = tape.constant(Tensor::new(vec![1, 4], vec![0.3, -0.9, 0.1, 0.7]).unwrap());
        let t = n.gate_activation(&mut tape, &vars.layers[0], s).unwrap();
        for &v in tape.value(t).data() {
            assert!((v - 0.73106).abs() < 1e-5);
        }

        n.layers[0].gate.bias = Tensor::zeros(&[4]);
        let mut tape = Tape::new();
        let vars = n.bind(&mut tape, false);
        let s = tape.constant(Tensor::new(vec![1, 4], vec![0.3, -0.9, 0.1, 0.7]).unwrap());
        let t = n.gate_activation(&mut tape, &vars.layers[0], s).unwrap();
        assert!(tape.value(t).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn input_width_mismatch_is_an_error() {
        let n = net(2);
        let b = batch(1, 2, 4, 1);
        assert!(n.forward(&b, &ForwardOptions::eval()).is_err());
    }
}
