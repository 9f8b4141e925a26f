use rand::Rng;

use super::{Activation, AffineLayer, Tensor};
use crate::error::{Error, Result};

/// A stack of affine layers, each followed by its own activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<AffineLayer>,
    activations: Vec<Activation>,
}

/// Intermediate values recorded by [`Mlp::forward_trace`] for backprop.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `inputs[k]` is the input to layer `k`; the final entry is the network output.
    inputs: Vec<Tensor>,
}

impl MlpTrace {
    pub fn input(&self) -> &Tensor {
        &self.inputs[0]
    }

    pub fn output(&self) -> &Tensor {
        self.inputs.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Builds `dims.len() - 1` Glorot-initialized layers. Hidden layers use ReLU,
    /// the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Contract(format!("invalid MLP dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .map(|w| AffineLayer::glorot(w[0], w[1], rng))
            .collect();
        let activations = (0..n)
            .map(|k| if k + 1 == n { output } else { Activation::Relu })
            .collect();
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn from_layers(layers: Vec<AffineLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || layers.len() != activations.len() {
            return Err(Error::Contract(format!(
                "{} layers with {} activations",
                layers.len(),
                activations.len()
            )));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::dims(
                    "Mlp::from_layers",
                    &[w[0].out_dim()],
                    &[w[1].in_dim()],
                ));
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(AffineLayer::num_params).sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(input)?;
        apply_in_place(&mut h, self.activations[0]);
        for (layer, &act) in self.layers.iter().zip(&self.activations).skip(1) {
            h = layer.forward(&h)?;
            apply_in_place(&mut h, act);
        }
        Ok(h)
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<MlpTrace> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(input.clone());
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            let mut h = layer.forward(inputs.last().expect("non-empty"))?;
            apply_in_place(&mut h, act);
            inputs.push(h);
        }
        Ok(MlpTrace { inputs })
    }

    /// Accumulates gradients given `dL/d(output)` and returns `dL/d(input)`.
    pub fn backward(&mut self, trace: &MlpTrace, grad_output: &Tensor) -> Result<Tensor> {
        if trace.inputs.len() != self.layers.len() + 1 {
            return Err(Error::Contract(
                "trace does not belong to this network".into(),
            ));
        }
        if grad_output.shape() != trace.output().shape() {
            return Err(Error::dims(
                "Mlp::backward",
                trace.output().shape(),
                grad_output.shape(),
            ));
        }
        let mut grad = grad_output.clone();
        for k in (0..self.layers.len()).rev() {
            let act = self.activations[k];
            if act != Activation::Identity {
                for (g, &y) in grad
                    .values_mut()
                    .iter_mut()
                    .zip(trace.inputs[k + 1].values())
                {
                    *g *= act.derivative_from_output(y);
                }
            }
            grad = self.layers[k].backward(&trace.inputs[k], &grad)?;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(AffineLayer::zero_grad);
    }
}

fn apply_in_place(t: &mut Tensor, act: Activation) {
    if act != Activation::Identity {
        t.values_mut().iter_mut().for_each(|v| *v = act.apply(*v));
    }
}
