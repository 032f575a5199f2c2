use std::fmt;
use std::str::FromStr;

use super::{NumericsError, Result};

/// Element-wise nonlinearity applied after an affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => super::linalg::sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::None => "none",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" | "linear" => Ok(Activation::None),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Hyperparameters of one layer, independent of its weights.
///
/// `param_shapes` lists the tensors the layer owns, as `(suffix, shape,
/// fan_in, fan_out)`; a `None` fan means the tensor is a bias-like vector.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        width: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    Gru {
        inputs: usize,
        hidden: usize,
    },
    Embedding {
        vocab: usize,
        dim: usize,
    },
    DualFc {
        inputs: usize,
        outputs: usize,
    },
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| {
            Err(NumericsError::InvalidHyperparameter {
                op: "layer",
                detail: detail.to_string(),
            })
        };
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return bad("conv1d channel counts must be >= 1");
                }
                if kernel == 0 || stride == 0 {
                    return bad("conv1d kernel and stride must be >= 1");
                }
            }
            LayerSpec::MaxPool { width } => {
                if width == 0 {
                    return bad("maxpool width must be >= 1");
                }
            }
            LayerSpec::Dense {
                inputs, outputs, ..
            }
            | LayerSpec::DualFc { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return bad("dense sizes must be >= 1");
                }
            }
            LayerSpec::Gru { inputs, hidden } => {
                if inputs == 0 || hidden == 0 {
                    return bad("gru sizes must be >= 1");
                }
            }
            LayerSpec::Embedding { vocab, dim } => {
                if vocab == 0 || dim == 0 {
                    return bad("embedding sizes must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Parameter tensors owned by this layer: `(suffix, shape, init)`.
    ///
    /// GRU gate blocks are stacked in z, r, h order along the first axis;
    /// each block is initialized with its own `(inputs, hidden)` fans.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>, ParamInit)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (
                    "weight",
                    vec![out_channels, in_channels, kernel],
                    ParamInit::Glorot {
                        fan_in: in_channels * kernel,
                        fan_out: out_channels * kernel,
                    },
                ),
                ("bias", vec![out_channels], ParamInit::Zeros),
            ],
            LayerSpec::MaxPool { .. } => Vec::new(),
            LayerSpec::Dense {
                inputs, outputs, ..
            } => vec![
                (
                    "weight",
                    vec![outputs, inputs],
                    ParamInit::Glorot {
                        fan_in: inputs,
                        fan_out: outputs,
                    },
                ),
                ("bias", vec![outputs], ParamInit::Zeros),
            ],
            LayerSpec::Gru { inputs, hidden } => vec![
                (
                    "w",
                    vec![3 * hidden, inputs],
                    ParamInit::Glorot {
                        fan_in: inputs,
                        fan_out: hidden,
                    },
                ),
                (
                    "u",
                    vec![3 * hidden, hidden],
                    ParamInit::Glorot {
                        fan_in: hidden,
                        fan_out: hidden,
                    },
                ),
                ("b", vec![3 * hidden], ParamInit::Zeros),
            ],
            LayerSpec::Embedding { vocab, dim } => vec![(
                "table",
                vec![vocab, dim],
                ParamInit::Glorot {
                    fan_in: 1,
                    fan_out: dim,
                },
            )],
            LayerSpec::DualFc { inputs, outputs } => {
                let glorot = ParamInit::Glorot {
                    fan_in: inputs,
                    fan_out: outputs,
                };
                vec![
                    ("w1", vec![outputs, inputs], glorot),
                    ("w2", vec![outputs, inputs], glorot),
                    ("b1", vec![outputs], ParamInit::Zeros),
                    ("b2", vec![outputs], ParamInit::Zeros),
                    ("a1", vec![outputs], ParamInit::Ones),
                    ("a2", vec![outputs], ParamInit::Ones),
                ]
            }
        }
    }
}
