//! JSON model documents. Field order is fixed by declaration order, so the
//! same model always serializes to the same bytes; weights are flat
//! row-major decimal arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "cvxdistill-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        /// `inputs x outputs`
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu {
        width: usize,
    },
    GreluStudent {
        inputs: usize,
        outputs: usize,
        /// Width of the lifted input the gates and `w1` act on.
        lifted_dim: usize,
        input_means: Vec<f64>,
        input_scales: Vec<f64>,
        append_bias: bool,
        num_gates: usize,
        /// `num_gates x lifted_dim`
        gates: Vec<f64>,
        hidden: usize,
        unit_gate: Vec<usize>,
        /// `lifted_dim x hidden`
        w1: Vec<f64>,
        /// `hidden x outputs`
        w2: Vec<f64>,
        output_bias: Vec<f64>,
    },
    MaskedConvStudent {
        in_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        filters: usize,
        out_channels: usize,
        /// `filters x (in_channels * kernel * kernel)`, frozen gate filters.
        mask_filters: Vec<f64>,
        /// `filters x (in_channels * kernel * kernel)`
        main_filters: Vec<f64>,
        /// `out_channels x filters`
        mix_filters: Vec<f64>,
    },
    SoftmaxHead {
        width: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::GreluStudent { .. } => "grelu-student",
            LayerSpec::MaskedConvStudent { .. } => "masked-conv-student",
            LayerSpec::SoftmaxHead { .. } => "softmax-head",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            LayerSpec::Dense { inputs, .. } | LayerSpec::GreluStudent { inputs, .. } => *inputs,
            LayerSpec::Relu { width } | LayerSpec::SoftmaxHead { width } => *width,
            LayerSpec::MaskedConvStudent {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LayerSpec::Dense { outputs, .. } | LayerSpec::GreluStudent { outputs, .. } => *outputs,
            LayerSpec::Relu { width } | LayerSpec::SoftmaxHead { width } => *width,
            LayerSpec::MaskedConvStudent {
                height,
                width,
                kernel,
                stride,
                padding,
                out_channels,
                ..
            } => {
                let oh = (height + 2 * padding).saturating_sub(*kernel) / stride.max(&1) + 1;
                let ow = (width + 2 * padding).saturating_sub(*kernel) / stride.max(&1) + 1;
                out_channels * oh * ow
            }
        }
    }

    fn check_buffers(&self) -> Result<()> {
        let check = |ctx: &'static str, want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(Error::dims(ctx, want, got))
            }
        };
        match self {
            LayerSpec::Dense {
                inputs,
                outputs,
                weight,
                bias,
            } => {
                check("dense weight", inputs * outputs, weight.len())?;
                check("dense bias", *outputs, bias.len())
            }
            LayerSpec::GreluStudent {
                inputs,
                outputs,
                lifted_dim,
                input_means,
                input_scales,
                append_bias,
                num_gates,
                gates,
                hidden,
                unit_gate,
                w1,
                w2,
                output_bias,
            } => {
                check("grelu input means", *inputs, input_means.len())?;
                check("grelu input scales", *inputs, input_scales.len())?;
                check(
                    "grelu lifted dim",
                    inputs + usize::from(*append_bias),
                    *lifted_dim,
                )?;
                check("grelu gates", num_gates * lifted_dim, gates.len())?;
                check("grelu unit gates", *hidden, unit_gate.len())?;
                check("grelu w1", lifted_dim * hidden, w1.len())?;
                check("grelu w2", hidden * outputs, w2.len())?;
                check("grelu output bias", *outputs, output_bias.len())?;
                if let Some(&bad) = unit_gate.iter().find(|&&g| g >= *num_gates) {
                    return Err(Error::dims("grelu unit gate index", *num_gates, bad));
                }
                Ok(())
            }
            LayerSpec::MaskedConvStudent {
                in_channels,
                kernel,
                filters,
                out_channels,
                mask_filters,
                main_filters,
                mix_filters,
                ..
            } => {
                let patch = in_channels * kernel * kernel;
                check("conv mask filters", filters * patch, mask_filters.len())?;
                check("conv main filters", filters * patch, main_filters.len())?;
                check(
                    "conv mix filters",
                    out_channels * filters,
                    mix_filters.len(),
                )
            }
            LayerSpec::Relu { .. } | LayerSpec::SoftmaxHead { .. } => Ok(()),
        }
    }
}

impl ModelSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            input_dim,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks buffer sizes and that adjacent layer shapes chain.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown model format {:?}",
                self.format
            )));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: self.version,
            });
        }
        let mut width = self.input_dim;
        for layer in &self.layers {
            layer.check_buffers()?;
            if layer.input_dim() != width {
                return Err(Error::dims("layer chaining", width, layer.input_dim()));
            }
            width = layer.output_dim();
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .map_or(self.input_dim, LayerSpec::output_dim)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
