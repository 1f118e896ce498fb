use crate::data::{DenseMatrix, LayerSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Affine map `x W + b` with `W` stored `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: DenseMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weight: DenseMatrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::dims("dense bias", weight.cols(), bias.len()));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(
                "dense layer has non-finite entries".into(),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut h = x.matmul(&self.weight)?;
        for r in 0..h.rows() {
            for (v, b) in h.row_mut(r).iter_mut().zip(&self.bias) {
                *v += *b;
            }
        }
        Ok(h)
    }
}

/// Gradients of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Training loss for [`MLPNet::loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub enum NetLoss<'a, T> {
    /// Mean softmax cross-entropy against integer labels.
    SoftmaxCe(&'a [usize]),
    /// `(1/(2n)) ||out - target||_F^2`.
    Squared(&'a DenseMatrix<T>),
}

/// Stack of dense layers with ReLU between consecutive layers; the output is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPNet<T> {
    pub layers: Vec<DenseLayer<T>>,
}

fn relu_inplace<T: Real>(m: &mut DenseMatrix<T>) {
    for v in m.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

impl<T: Real> MLPNet<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::dims("layer chaining", w[0].outputs(), w[1].inputs()));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal weights and zero biases; `widths` lists every layer boundary.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid widths {widths:?}")));
        }
        let mut rng = crate::data::rng::seeded(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                let vals = crate::data::rng::normal_vec(&mut rng, w[0] * w[1], scale);
                DenseLayer {
                    weight: DenseMatrix::from_vec_unchecked(w[0], w[1], vals),
                    bias: vec![T::zero(); w[1]],
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.depth() - 1].outputs()
    }

    /// Layer boundary widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::outputs))
            .collect()
    }

    /// Weight entries, biases excluded.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len()).sum()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().iter().filter(|v| !v.is_zero()).count())
            .sum()
    }

    /// Whether a ReLU follows layer `i`.
    pub fn relu_after(&self, i: usize) -> bool {
        i + 1 < self.depth()
    }

    pub fn forward(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.forward_range(x, 0, self.depth())
    }

    /// Applies layers `start..end`, including the ReLU after each applied layer
    /// that is not the network's last.
    pub fn forward_range(
        &self,
        x: &DenseMatrix<T>,
        start: usize,
        end: usize,
    ) -> Result<DenseMatrix<T>> {
        if start > end || end > self.depth() {
            return Err(Error::InvalidArgument(format!(
                "layer range {start}..{end} outside 0..{}",
                self.depth()
            )));
        }
        if start < end && x.cols() != self.layers[start].inputs() {
            return Err(Error::dims(
                "network input",
                self.layers[start].inputs(),
                x.cols(),
            ));
        }
        let mut a = x.clone();
        for i in start..end {
            a = self.layers[i].apply(&a)?;
            if self.relu_after(i) {
                relu_inplace(&mut a);
            }
        }
        Ok(a)
    }

    /// Loss value and per-layer gradients by backpropagation.
    pub fn loss_and_grad(
        &self,
        x: &DenseMatrix<T>,
        loss: NetLoss<'_, T>,
    ) -> Result<(T, Vec<LayerGrad<T>>)> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::NoRows);
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut acts = vec![x.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.apply(&acts[i])?;
            if self.relu_after(i) {
                relu_inplace(&mut h);
            }
            acts.push(h);
        }
        let out = &acts[self.depth()];
        let (value, mut delta) = match loss {
            NetLoss::SoftmaxCe(labels) => {
                if labels.len() != n {
                    return Err(Error::dims("label count", n, labels.len()));
                }
                let c = out.cols();
                let mut delta = DenseMatrix::zeros(n, c);
                let mut total = T::zero();
                for (r, &lab) in labels.iter().enumerate() {
                    if lab >= c {
                        return Err(Error::LabelOutOfRange {
                            row: r,
                            label: lab,
                            classes: c,
                        });
                    }
                    let row = out.row(r);
                    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let z: T = row.iter().map(|v| (*v - mx).exp()).sum();
                    total += z.ln() + mx - row[lab];
                    for (k, d) in delta.row_mut(r).iter_mut().enumerate() {
                        let p = (row[k] - mx).exp() / z;
                        let ind = if k == lab { T::one() } else { T::zero() };
                        *d = (p - ind) * inv_n;
                    }
                }
                (total * inv_n, delta)
            }
            NetLoss::Squared(target) => {
                if target.shape() != out.shape() {
                    return Err(Error::dims("target columns", out.cols(), target.cols()));
                }
                let mut delta = out.clone();
                let mut total = T::zero();
                for (d, t) in delta.as_mut_slice().iter_mut().zip(target.as_slice()) {
                    let e = *d - *t;
                    total += e * e;
                    *d = e * inv_n;
                }
                (total * inv_n * T::lit(0.5), delta)
            }
        };
        let mut grads = Vec::with_capacity(self.depth());
        for i in (0..self.depth()).rev() {
            let gw = acts[i].t_matmul(&delta)?;
            let mut gb = vec![T::zero(); delta.cols()];
            for r in 0..n {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += *d;
                }
            }
            if i > 0 {
                let mut prev = delta.matmul(&self.layers[i].weight.transpose())?;
                // acts[i] is post-ReLU, so a zero entry marks an inactive unit.
                for (p, a) in prev.as_mut_slice().iter_mut().zip(acts[i].as_slice()) {
                    if *a <= T::zero() {
                        *p = T::zero();
                    }
                }
                delta = prev;
            }
            grads.push(LayerGrad {
                weight: gw.into_vec(),
                bias: gb,
            });
        }
        grads.reverse();
        Ok((value, grads))
    }

    /// Mutable views of all parameters in `(w0, b0, w1, b1, ...)` order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> MLPNet<U> {
        MLPNet {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|b| U::lit(b.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Dense and ReLU layers in evaluation order.
    pub fn to_layer_specs(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(LayerSpec::Dense {
                inputs: l.inputs(),
                outputs: l.outputs(),
                weight: l.weight.as_slice().iter().map(|v| v.as_f64()).collect(),
                bias: l.bias.iter().map(|v| v.as_f64()).collect(),
            });
            if self.relu_after(i) {
                out.push(LayerSpec::Relu { width: l.outputs() });
            }
        }
        out
    }

    /// Inverse of [`Self::to_layer_specs`]; a trailing softmax head is ignored.
    pub fn from_layer_specs(specs: &[LayerSpec]) -> Result<Self> {
        let specs = match specs.last() {
            Some(LayerSpec::SoftmaxHead { .. }) => &specs[..specs.len() - 1],
            _ => specs,
        };
        let mut layers = Vec::new();
        let mut expect_relu = false;
        for s in specs {
            match (s, expect_relu) {
                (
                    LayerSpec::Dense {
                        inputs,
                        outputs,
                        weight,
                        bias,
                    },
                    false,
                ) => {
                    let w = DenseMatrix::new(
                        *inputs,
                        *outputs,
                        weight.iter().map(|v| T::lit(*v)).collect(),
                    )?;
                    layers.push(DenseLayer::new(
                        w,
                        bias.iter().map(|v| T::lit(*v)).collect(),
                    )?);
                    expect_relu = true;
                }
                (LayerSpec::Relu { .. }, true) => expect_relu = false,
                (other, _) => {
                    return Err(Error::InvalidArgument(format!(
                        "unexpected '{}' layer in a dense/relu stack",
                        other.kind()
                    )))
                }
            }
        }
        if !expect_relu {
            return Err(Error::InvalidArgument(
                "network must end with a dense layer".into(),
            ));
        }
        Self::new(layers)
    }
}
