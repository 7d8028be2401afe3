//! The attention gated transformation network.
//!
//! Word vectors are projected once (`tanh(x W + b)`), then every layer `l`
//! computes its own attention over the projected words, a selection vector
//! `s_l`, and a sigmoid gate `T_l = σ(s_l W_t + b_t)` that mixes a fresh
//! transform of `[y_{l-1}; s_l]` with the carried `y_{l-1}`. Layer 0 has no
//! gate: `y_0 = s_0`. A two-layer head maps `y_{L-1}` to class probabilities.

mod checkpoint;
mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use checkpoint::{Checkpoint, CheckpointError};
pub use forward::{ForwardOptions, ForwardOutput, ForwardVars, GateOverride, Mode};

pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub classes: usize,
    pub gate_bias_init: f64,
    /// When `Some(k)`, layers above `k` reuse layer `k`'s attention and
    /// selection vector instead of computing their own.
    pub max_selector_layer: Option<usize>,
}

impl ModelConfig {
    /// 15 layers of width 200, head width 200, dropout 0.2, gate bias 1.
    pub fn new(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden: 200,
            layers: 15,
            head_hidden: 200,
            dropout: 0.2,
            classes: NUM_CLASSES,
            gate_bias_init: 1.0,
            max_selector_layer: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return fail("dimensions must be positive");
        }
        if self.layers == 0 {
            return fail("layer count must be at least 1");
        }
        if self.classes != NUM_CLASSES {
            return fail("class count must be 5");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !self.gate_bias_init.is_finite() {
            return fail("gate bias must be finite");
        }
        Ok(())
    }

    /// Index of the layer whose attention layer `l` uses.
    pub fn selector_for(&self, l: usize) -> usize {
        self.max_selector_layer.map_or(l, |k| l.min(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `[input_dim, hidden]`, shared by every word position.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSelector {
    /// `[hidden, hidden]`.
    pub score_matrix: Tensor,
    /// `[hidden]`.
    pub score_vector: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformGate {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgtLayer {
    pub selector: AttentionSelector,
    pub gate: TransformGate,
    /// `[2 * hidden, hidden]`, applied to `[y_prev; s]`.
    pub transform_weight: Tensor,
    pub transform_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden_weight: Tensor,
    pub hidden_bias: Tensor,
    pub output_weight: Tensor,
    pub output_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgtNetwork {
    pub config: ModelConfig,
    pub projection: Projection,
    /// Attention for layer 0, whose selection vector is `y_0`.
    pub base_selector: AttentionSelector,
    /// Layers `1..L`.
    pub layers: Vec<AgtLayer>,
    pub head: Head,
}

/// Tape handles for every parameter, mirroring [`AgtNetwork`].
#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub projection_weight: Var,
    pub projection_bias: Var,
    pub selectors: Vec<SelectorVars>,
    pub layers: Vec<LayerVars>,
    pub head: [Var; 4],
    pub all: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct SelectorVars {
    pub score_matrix: Var,
    pub score_vector: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub transform_weight: Var,
    pub transform_bias: Var,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn glorot(&mut self, rows: usize, cols: usize) -> Tensor {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-limit..=limit))
            .collect();
        Tensor::new(vec![rows, cols], data).expect("sized")
    }

    fn glorot_vector(&mut self, n: usize) -> Tensor {
        let t = self.glorot(n, 1);
        t.reshaped(&[n]).expect("sized")
    }

    fn selector(&mut self, d: usize) -> AttentionSelector {
        AttentionSelector {
            score_matrix: self.glorot(d, d),
            score_vector: self.glorot_vector(d),
        }
    }
}

impl AgtNetwork {
    /// Glorot-uniform weights, gate biases at `gate_bias_init`, other biases 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (d_in, d, dh, c) = (
            config.input_dim,
            config.hidden,
            config.head_hidden,
            config.classes,
        );
        let projection = Projection {
            weight: init.glorot(d_in, d),
            bias: Tensor::zeros(&[d]),
        };
        let base_selector = init.selector(d);
        let layers = (1..config.layers)
            .map(|_| AgtLayer {
                selector: init.selector(d),
                gate: TransformGate {
                    weight: init.glorot(d, d),
                    bias: Tensor::full(&[d], config.gate_bias_init),
                },
                transform_weight: init.glorot(2 * d, d),
                transform_bias: Tensor::zeros(&[d]),
            })
            .collect();
        let head = Head {
            hidden_weight: init.glorot(d, dh),
            hidden_bias: Tensor::zeros(&[dh]),
            output_weight: init.glorot(dh, c),
            output_bias: Tensor::zeros(&[c]),
        };
        Ok(AgtNetwork {
            config,
            projection,
            base_selector,
            layers,
            head,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn selector(&self, l: usize) -> &AttentionSelector {
        if l == 0 {
            &self.base_selector
        } else {
            &self.layers[l - 1].selector
        }
    }

    pub fn selector_mut(&mut self, l: usize) -> &mut AttentionSelector {
        if l == 0 {
            &mut self.base_selector
        } else {
            &mut self.layers[l - 1].selector
        }
    }

    /// Parameter names in canonical order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "projection.weight".to_string(),
            "projection.bias".to_string(),
            "layer0.selector.score_matrix".to_string(),
            "layer0.selector.score_vector".to_string(),
        ];
        for l in 1..self.layer_count() {
            for part in [
                "selector.score_matrix",
                "selector.score_vector",
                "gate.weight",
                "gate.bias",
                "transform.weight",
                "transform.bias",
            ] {
                names.push(format!("layer{l}.{part}"));
            }
        }
        for part in [
            "hidden.weight",
            "hidden.bias",
            "output.weight",
            "output.bias",
        ] {
            names.push(format!("head.{part}"));
        }
        names
    }

    /// Parameters in canonical order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.projection.weight,
            &self.projection.bias,
            &self.base_selector.score_matrix,
            &self.base_selector.score_vector,
        ];
        for layer in &self.layers {
            out.extend([
                &layer.selector.score_matrix,
                &layer.selector.score_vector,
                &layer.gate.weight,
                &layer.gate.bias,
                &layer.transform_weight,
                &layer.transform_bias,
            ]);
        }
        let h = &self.head;
        out.extend([
            &h.hidden_weight,
            &h.hidden_bias,
            &h.output_weight,
            &h.output_bias,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.projection.weight,
            &mut self.projection.bias,
            &mut self.base_selector.score_matrix,
            &mut self.base_selector.score_vector,
        ];
        for layer in &mut self.layers {
            out.extend([
                &mut layer.selector.score_matrix,
                &mut layer.selector.score_vector,
                &mut layer.gate.weight,
                &mut layer.gate.bias,
                &mut layer.transform_weight,
                &mut layer.transform_bias,
            ]);
        }
        let h = &mut self.head;
        out.extend([
            &mut h.hidden_weight,
            &mut h.hidden_bias,
            &mut h.output_weight,
            &mut h.output_bias,
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Rebuilds a network from `(name, tensor)` pairs in canonical order.
    pub fn from_params(
        config: ModelConfig,
        params: Vec<(String, Tensor)>,
    ) -> Result<Self, ModelError> {
        let mut net = AgtNetwork::new(config, 0)?;
        let names = net.param_names();
        if params.len() != names.len() {
            return Err(ModelError::Parameter {
                name: "*".into(),
                reason: format!("expected {} tensors, found {}", names.len(), params.len()),
            });
        }
        for ((slot, expected), (name, tensor)) in
            net.params_mut().into_iter().zip(&names).zip(params)
        {
            if &name != expected {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("expected {expected} at this position"),
                });
            }
            if tensor.shape() != slot.shape() {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("shape {:?}, expected {:?}", tensor.shape(), slot.shape()),
                });
            }
            *slot = tensor;
        }
        Ok(net)
    }

    /// Registers every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> NetworkVars {
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), requires_grad))
            .collect();
        self.bind_vars(&vars)
    }

    /// Interprets `vars` (canonical order) as this network's parameters.
    pub fn bind_vars(&self, vars: &[Var]) -> NetworkVars {
        assert_eq!(
            vars.len(),
            self.param_names().len(),
            "one var per parameter"
        );
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("counted");
        let projection_weight = next();
        let projection_bias = next();
        let mut selectors = vec![SelectorVars {
            score_matrix: next(),
            score_vector: next(),
        }];
        let mut layers = Vec::with_capacity(self.layers.len());
        for _ in &self.layers {
            selectors.push(SelectorVars {
                score_matrix: next(),
                score_vector: next(),
            });
            layers.push(LayerVars {
                gate_weight: next(),
                gate_bias: next(),
                transform_weight: next(),
                transform_bias: next(),
            });
        }
        let head = [next(), next(), next(), next()];
        NetworkVars {
            projection_weight,
            projection_bias,
            selectors,
            layers,
            head,
            all: vars.to_vec(),
        }
    }
}

/// Gradient check of every parameter tensor on one eval-mode batch.
pub fn check_gradients(
    net: &AgtNetwork,
    batch: &crate::corpus::Batch,
    tolerance: f64,
) -> Result<crate::tensor::GradReport, ModelError> {
    let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
    crate::tensor::gradcheck(
        &net.param_names(),
        &params,
        |tape, vars| {
            let bound = net.bind_vars(vars);
            let (loss, _) = net.loss_on_tape(tape, &bound, batch, &ForwardOptions::eval())?;
            Ok(loss)
        },
        tolerance,
    )
}
