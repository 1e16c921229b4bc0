use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Cache, Layer, LayerSpec, BN_MOMENTUM};
use super::{Loss, Tensor};
use crate::error::{Error, Result};

/// A feed-forward stack of layers plus free-form metadata that travels
/// with the saved model (label set, feature settings, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Activations recorded by a training-mode forward pass.
pub struct Tape {
    caches: Vec<Cache>,
    pub output: Tensor,
}

/// Parameter gradients in model order (layer by layer, parameter by
/// parameter) and the gradient with respect to the input.
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

impl Model {
    /// Builds and initialises a model. Channel counts must chain.
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels: Option<usize> = None;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            if let (Some(have), Some(want)) = (channels, spec.in_channels()) {
                if have != want {
                    return Err(Error::Shape(format!(
                        "layer {i} expects {want} channels but receives {have}"
                    )));
                }
            }
            channels = spec.out_channels(channels);
            layers.push(Layer::build(spec, &i.to_string(), &mut rng)?);
        }
        Ok(Self {
            layers,
            metadata: BTreeMap::new(),
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(|p| p.value.len())
            .sum()
    }

    /// Inference with running batch-norm statistics.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, false)?.0;
        }
        if !cur.all_finite() {
            return Err(Error::Numeric("non-finite model output".into()));
        }
        Ok(cur)
    }

    /// Training-mode forward pass (batch statistics) keeping activations.
    pub fn forward_train(&self, x: &Tensor) -> Result<Tape> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur, true)?;
            caches.push(c);
            cur = y;
        }
        Ok(Tape {
            caches,
            output: cur,
        })
    }

    /// Backpropagates `grad` from layer `from` (exclusive of later layers)
    /// down to the input.
    fn backward_from(&self, tape: &Tape, grad: Tensor, from: usize) -> Result<Gradients> {
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad;
        for i in (0..from).rev() {
            let (gx, gp) = self.layers[i].backward(&tape.caches[i], &g)?;
            per_layer[i] = gp;
            g = gx;
        }
        for (i, layer) in self.layers.iter().enumerate().skip(from) {
            per_layer[i] = layer.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        Ok(Gradients {
            params: per_layer.into_iter().flatten().collect(),
            input: g,
        })
    }

    /// Gradient of an arbitrary scalar function of the output, given its
    /// derivative with respect to the output.
    pub fn backward(&self, tape: &Tape, grad_output: Tensor) -> Result<Gradients> {
        self.backward_from(tape, grad_output, self.layers.len())
    }

    fn fused_with(&self, loss: Loss) -> bool {
        matches!(
            (self.layers.last().map(|l| &l.spec), loss),
            (Some(LayerSpec::Softmax), Loss::CrossEntropy)
                | (Some(LayerSpec::Sigmoid), Loss::BinaryCrossEntropy)
        )
    }

    /// Loss value and gradients. When the model ends in the activation
    /// matching the loss, the combined gradient `(p - y) / count` is used.
    pub fn loss_and_grad(&self, x: &Tensor, target: &Tensor, loss: Loss) -> Result<(f64, Gradients, Tape)> {
        let tape = self.forward_train(x)?;
        let value = loss.value(&tape.output, target)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss became {value}")));
        }
        let grads = if self.fused_with(loss) {
            let g = loss.fused_grad(&tape.output, target)?;
            self.backward_from(&tape, g, self.layers.len() - 1)?
        } else {
            let g = loss.grad(&tape.output, target)?;
            self.backward(&tape, g)?
        };
        Ok((value, grads, tape))
    }

    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            layer.update_running_stats(cache, BN_MOMENTUM);
        }
    }

    /// Mutable views of all parameters in gradient order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut())
            .map(|p| &mut p.value)
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| l.params.iter()).map(|p| &p.value)
    }
}
