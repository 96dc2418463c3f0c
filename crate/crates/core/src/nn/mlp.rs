//! Fully-connected networks on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{LinearLayer, NodeId, Tape, Unary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    None,
    Sigmoid,
    ExpClamped,
}

/// Upper bound applied to a density pre-activation before exponentiation.
pub const DENSITY_CLAMP: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Self {
        Self {
            layer_widths,
            activation,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config("an MLP needs input and output widths"));
        }
        if self.layer_widths.iter().any(|w| *w == 0) {
            return Err(Error::config("MLP widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }
}

/// An MLP bound to a parameter offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub offset: usize,
    layers: Vec<LinearLayer>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, offset: usize) -> Result<Self> {
        spec.validate()?;
        let mut at = offset;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let layer = LinearLayer {
                    weight: at,
                    bias: at + w[0] * w[1],
                    in_dim: w[0],
                    out_dim: w[1],
                };
                at += layer.param_count();
                layer
            })
            .collect();
        Ok(Self {
            spec,
            offset,
            layers,
        })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(spec.param_count());
        for w in spec.layer_widths.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            out.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
            out.extend(std::iter::repeat(0.0).take(w[1]));
        }
        out
    }

    pub fn forward(&self, tape: &mut Tape, params: &[f64], input: NodeId) -> Result<NodeId> {
        let (_, cols) = tape.shape(input);
        if cols != self.spec.input_dim() {
            return Err(Error::config(format!(
                "MLP expects {} inputs, got {cols}",
                self.spec.input_dim()
            )));
        }
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = tape.linear(params, x, *layer)?;
            if i < last {
                x = tape.unary(
                    x,
                    match self.spec.activation {
                        Activation::Relu => Unary::Relu,
                        Activation::Softplus => Unary::Softplus,
                    },
                );
            }
        }
        Ok(match self.spec.output_activation {
            OutputActivation::None => x,
            OutputActivation::Sigmoid => tape.unary(x, Unary::Sigmoid),
            OutputActivation::ExpClamped => tape.unary(x, Unary::ExpClamp(DENSITY_CLAMP)),
        })
    }

    /// Single-input evaluation.
    pub fn eval(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.leaf(1, input.len(), input.to_vec());
        let y = self.forward(&mut tape, params, x)?;
        Ok(tape.value(y).to_vec())
    }
}
