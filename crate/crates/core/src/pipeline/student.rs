use crate::data::{standardize, DenseMatrix, LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::gates::{Gate, GateSet, GateSource};
use crate::grelu::GReLUStudent;
use crate::nonconvex::{Block, MLPNet};

/// Anything that can stand in for a block of a frozen network.
pub trait BlockMap: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn map(&self, z: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>>;
}

/// Per-column standardization followed by an optional constant-one column.
#[derive(Debug, Clone, PartialEq)]
pub struct InputLift {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub append_bias: bool,
}

impl InputLift {
    pub fn fit(z: &DenseMatrix<f64>, append_bias: bool) -> Self {
        let (_, s) = standardize(z);
        Self {
            means: s.means,
            scales: s.scales,
            append_bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.means.len()
    }

    pub fn lifted_dim(&self) -> usize {
        self.input_dim() + usize::from(self.append_bias)
    }

    pub fn apply(&self, z: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        let d = self.input_dim();
        if z.cols() != d {
            return Err(Error::dims("lift input", d, z.cols()));
        }
        Ok(DenseMatrix::from_fn(z.rows(), self.lifted_dim(), |i, j| {
            if j < d {
                (z[(i, j)] - self.means[j]) / self.scales[j]
            } else {
                1.0
            }
        }))
    }
}

/// Gated-ReLU student acting on lifted block inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledStudent {
    pub lift: InputLift,
    pub net: GReLUStudent<f64>,
}

impl DistilledStudent {
    pub fn new(lift: InputLift, net: GReLUStudent<f64>) -> Result<Self> {
        if net.hidden() > 0 && net.input_dim() != lift.lifted_dim() {
            return Err(Error::dims(
                "student lifted input",
                lift.lifted_dim(),
                net.input_dim(),
            ));
        }
        Ok(Self { lift, net })
    }

    /// Nonzero first- and second-layer weights.
    pub fn effective_params(&self) -> usize {
        self.net.nonzero_params()
    }

    pub fn to_layer_spec(&self) -> LayerSpec {
        let gates = &self.net.gates;
        let lifted = self.lift.lifted_dim();
        let directions = if gates.is_empty() {
            Vec::new()
        } else {
            gates.direction_matrix().into_vec()
        };
        LayerSpec::GreluStudent {
            inputs: self.lift.input_dim(),
            outputs: self.net.outputs(),
            lifted_dim: lifted,
            input_means: self.lift.means.clone(),
            input_scales: self.lift.scales.clone(),
            append_bias: self.lift.append_bias,
            num_gates: gates.len(),
            gates: directions,
            hidden: self.net.hidden(),
            unit_gate: self.net.unit_gate.clone(),
            w1: self.net.w1.as_slice().to_vec(),
            w2: self.net.w2.as_slice().to_vec(),
            output_bias: self.net.output_bias.clone(),
        }
    }

    pub fn to_model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.lift.input_dim(), vec![self.to_layer_spec()])
    }

    pub fn from_layer_spec(spec: &LayerSpec) -> Result<Self> {
        let LayerSpec::GreluStudent {
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
        } = spec
        else {
            return Err(Error::InvalidArgument(format!(
                "expected a grelu-student layer, found {}",
                spec.kind()
            )));
        };
        if input_means.len() != *inputs || input_scales.len() != *inputs {
            return Err(Error::dims(
                "student input means",
                *inputs,
                input_means.len(),
            ));
        }
        let lift = InputLift {
            means: input_means.clone(),
            scales: input_scales.clone(),
            append_bias: *append_bias,
        };
        let gate_list = if *lifted_dim == 0 {
            Vec::new()
        } else {
            gates
                .chunks(*lifted_dim)
                .take(*num_gates)
                .map(|g| Gate::new(g.to_vec()))
                .collect::<Result<Vec<_>>>()?
        };
        // Training patterns are not stored; forward passes recompute masks.
        let patterns =
            vec![crate::gates::ArrangementPattern::from_mask(Vec::new()); gate_list.len()];
        let gate_set = GateSet::from_parts(gate_list, patterns, GateSource::Gaussian)?;
        let net = GReLUStudent::new(
            gate_set,
            unit_gate.clone(),
            DenseMatrix::new(*lifted_dim, *hidden, w1.clone())?,
            DenseMatrix::new(*hidden, *outputs, w2.clone())?,
            output_bias.clone(),
        )?;
        Self::new(lift, net)
    }
}

impl BlockMap for DistilledStudent {
    fn input_dim(&self) -> usize {
        self.lift.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.outputs()
    }

    fn map(&self, z: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        self.net.forward(&self.lift.apply(z)?)
    }
}

/// Standalone network: ReLU between layers, linear output.
impl BlockMap for MLPNet<f64> {
    fn input_dim(&self) -> usize {
        MLPNet::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        MLPNet::output_dim(self)
    }

    fn map(&self, z: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        self.forward(z)
    }
}

/// A block evaluated in place inside its network, keeping the activation
/// that follows it.
#[derive(Debug, Clone, Copy)]
pub struct InPlaceBlock<'a> {
    pub net: &'a MLPNet<f64>,
    pub block: Block,
}

impl BlockMap for InPlaceBlock<'_> {
    fn input_dim(&self) -> usize {
        self.block.input_dim(self.net)
    }

    fn output_dim(&self) -> usize {
        self.block.output_dim(self.net)
    }

    fn map(&self, z: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        self.net.forward_range(z, self.block.start, self.block.end)
    }
}

/// Constant-zero map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroBlock {
    pub inputs: usize,
    pub outputs: usize,
}

impl BlockMap for ZeroBlock {
    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn output_dim(&self) -> usize {
        self.outputs
    }

    fn map(&self, z: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        if z.cols() != self.inputs {
            return Err(Error::dims("zero block input", self.inputs, z.cols()));
        }
        Ok(DenseMatrix::zeros(z.rows(), self.outputs))
    }
}

/// Reads a student saved either as a single grelu-student layer or as a dense network.
pub fn load_block_student(spec: &ModelSpec) -> Result<Box<dyn BlockMap>> {
    match spec.layers.as_slice() {
        [layer @ LayerSpec::GreluStudent { .. }] => {
            Ok(Box::new(DistilledStudent::from_layer_spec(layer)?))
        }
        layers => Ok(Box::new(MLPNet::<f64>::from_layer_specs(layers)?)),
    }
}
