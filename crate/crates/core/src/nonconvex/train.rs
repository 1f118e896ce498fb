use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::{MLPNet, NetLoss};
use crate::data::{rng, standardize, ActivationDataset, Dataset, DenseMatrix};
use crate::error::{Error, Result};

fn shapes(net: &MLPNet<f64>) -> Vec<usize> {
    net.layers
        .iter()
        .flat_map(|l| [l.weight.as_slice().len(), l.bias.len()])
        .collect()
}

fn adam_step(
    net: &mut MLPNet<f64>,
    adam: &mut AdamState<f64>,
    grads: &[super::mlp::LayerGrad<f64>],
) {
    let flat: Vec<&[f64]> = grads
        .iter()
        .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
        .collect();
    let mut params = net.param_slices_mut();
    adam.update(&mut params, &flat);
}

fn accuracy(net: &MLPNet<f64>, x: &DenseMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let pred = net.forward(x)?.argmax_rows();
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub net: MLPNet<f64>,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

pub const BATCH_SIZE: usize = 64;

/// Softmax cross-entropy training with Adam on seeded minibatches.
/// `hidden` lists the hidden widths; the output width is the class count.
pub fn train_teacher(
    ds: &Dataset,
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TeacherRun> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    let x: DenseMatrix<f64> = ds.x.cast();
    let widths: Vec<usize> = std::iter::once(ds.dim())
        .chain(hidden.iter().copied())
        .chain(std::iter::once(ds.num_classes()))
        .collect();
    let mut net = MLPNet::init(&widths, rng::substream(seed, 0))?;
    let mut adam = AdamState::new(&shapes(&net), lr);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut shuffle = rng::seeded(rng::substream(seed, 1));
    let mut iter = 0;
    let mut final_loss = f64::NAN;
    for _ in 0..epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(BATCH_SIZE) {
            iter += 1;
            let xb = x.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net.loss_and_grad(&xb, NetLoss::SoftmaxCe(&yb))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { iter });
            }
            epoch_loss += loss * batch.len() as f64;
            adam_step(&mut net, &mut adam, &grads);
        }
        final_loss = epoch_loss / ds.len() as f64;
    }
    if !net.is_finite() {
        return Err(Error::Divergence { iter });
    }
    let train_accuracy = accuracy(&net, &x, labels)?;
    Ok(TeacherRun {
        net,
        train_accuracy,
        final_loss,
    })
}

/// Contiguous range `start..end` of dense layers treated as one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// The single layer `index`.
    pub fn layer(index: usize) -> Self {
        Self::new(index, index + 1)
    }

    pub fn validate(&self, net: &MLPNet<f64>) -> Result<()> {
        if self.start >= self.end || self.end > net.depth() {
            return Err(Error::InvalidArgument(format!(
                "block {}..{} outside network of depth {}",
                self.start,
                self.end,
                net.depth()
            )));
        }
        Ok(())
    }

    /// Parameters inside the block, biases excluded.
    pub fn weight_count(&self, net: &MLPNet<f64>) -> usize {
        net.layers[self.start..self.end]
            .iter()
            .map(|l| l.weight.as_slice().len())
            .sum()
    }

    pub fn input_dim(&self, net: &MLPNet<f64>) -> usize {
        net.layers[self.start].inputs()
    }

    pub fn output_dim(&self, net: &MLPNet<f64>) -> usize {
        net.layers[self.end - 1].outputs()
    }
}

/// Inputs entering and outputs leaving `block`, one row per sample in dataset order.
pub fn extract_block_activations(
    net: &MLPNet<f64>,
    ds: &Dataset,
    block: Block,
) -> Result<ActivationDataset> {
    block.validate(net)?;
    let x: DenseMatrix<f64> = ds.x.cast();
    let z = net.forward_range(&x, 0, block.start)?;
    let t = net.forward_range(&z, block.start, block.end)?;
    ActivationDataset::new(z.cast(), t.cast())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    Millis(f64),
    Epochs(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub hidden: usize,
    pub budget: Budget,
    pub lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl StudentConfig {
    pub fn new(hidden: usize, budget: Budget, seed: u64) -> Self {
        Self {
            hidden,
            budget,
            lr: 1e-3,
            batch_size: BATCH_SIZE,
            validation_fraction: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub epoch: usize,
    pub elapsed_ms: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    /// Best-validation snapshot, acting on raw (unstandardized) inputs.
    pub net: MLPNet<f64>,
    pub best_val_mse: f64,
    pub epochs: usize,
    pub elapsed_ms: f64,
    pub trace: Vec<StudentRecord>,
}

/// Folds `z -> (z - means) / scales` into the first layer.
fn fold_standardization(net: &MLPNet<f64>, means: &[f64], scales: &[f64]) -> MLPNet<f64> {
    let mut out = net.clone();
    let first = &mut out.layers[0];
    let cols = first.outputs();
    for (r, (m, s)) in means.iter().zip(scales).enumerate() {
        for c in 0..cols {
            let w = first.weight[(r, c)] / s;
            first.weight[(r, c)] = w;
            first.bias[c] -= m * w;
        }
    }
    out
}

/// Two-layer ReLU student fitted to `acts` by Adam on the squared matching loss.
/// Inputs are standardized for training and the map is folded back afterwards.
pub fn train_relu_student(acts: &ActivationDataset, cfg: &StudentConfig) -> Result<StudentRun> {
    if cfg.hidden == 0 {
        return Err(Error::InvalidArgument(
            "hidden width must be at least 1".into(),
        ));
    }
    if acts.is_empty() {
        return Err(Error::NoRows);
    }
    let start = Instant::now();
    let n = acts.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = rng::seeded(rng::substream(cfg.seed, 1));
    order.shuffle(&mut shuffle);
    let n_val = if n >= 2 {
        ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let z: DenseMatrix<f64> = acts.z.cast();
    let t: DenseMatrix<f64> = acts.t.cast();
    let (_, stdz) = standardize(&z.select_rows(&train_idx));
    let zs = stdz.apply(&z)?;
    let val_rows: Vec<usize> = if val_idx.is_empty() {
        train_idx.clone()
    } else {
        val_idx.to_vec()
    };
    let (zv, tv) = (zs.select_rows(&val_rows), t.select_rows(&val_rows));

    let widths = [acts.input_dim(), cfg.hidden, acts.output_dim()];
    let mut net = MLPNet::init(&widths, rng::substream(cfg.seed, 0))?;
    let mut adam = AdamState::new(&shapes(&net), cfg.lr);
    let val_mse =
        |net: &MLPNet<f64>| -> Result<f64> { Ok(net.forward(&zv)?.mean_squared_error(&tv)) };
    let mut best = net.clone();
    let mut best_val = val_mse(&net)?;
    let mut trace = vec![StudentRecord {
        epoch: 0,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        val_mse: best_val,
        best_val_mse: best_val,
    }];
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let out_of_time = |epoch: usize| match cfg.budget {
        Budget::Millis(ms) => elapsed() >= ms,
        Budget::Epochs(e) => epoch >= e,
    };
    let mut epoch = 0;
    let mut iter = 0;
    'outer: while !out_of_time(epoch) {
        train_idx.shuffle(&mut shuffle);
        for batch in train_idx.chunks(cfg.batch_size.max(1)) {
            if matches!(cfg.budget, Budget::Millis(_)) && out_of_time(epoch) {
                break 'outer;
            }
            iter += 1;
            let (loss, grads) = net.loss_and_grad(
                &zs.select_rows(batch),
                NetLoss::Squared(&t.select_rows(batch)),
            )?;
            if !loss.is_finite() {
                return Err(Error::Divergence { iter });
            }
            adam_step(&mut net, &mut adam, &grads);
        }
        epoch += 1;
        let v = val_mse(&net)?;
        if v < best_val {
            best_val = v;
            best = net.clone();
        }
        trace.push(StudentRecord {
            epoch,
            elapsed_ms: elapsed(),
            val_mse: v,
            best_val_mse: best_val,
        });
    }
    if iter > 0 && trace.last().is_some_and(|r| r.epoch != epoch || epoch == 0) {
        // Partial epoch cut off by the time budget.
        let v = val_mse(&net)?;
        if v < best_val {
            best_val = v;
            best = net.clone();
        }
        trace.push(StudentRecord {
            epoch,
            elapsed_ms: elapsed(),
            val_mse: v,
            best_val_mse: best_val,
        });
    }
    Ok(StudentRun {
        net: fold_standardization(&best, &stdz.means, &stdz.scales),
        best_val_mse: best_val,
        epochs: epoch,
        elapsed_ms: elapsed(),
        trace,
    })
}

/// Hidden nonlinearity of the bias-free two-layer network.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenActivation {
    Relu,
    /// Fixed gates, `d x m`: unit `j` is active where `x g_j >= 0`.
    Gated(DenseMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerConfig {
    pub width: usize,
    pub lambda: f64,
    pub iters: usize,
    pub lr: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub activation: HiddenActivation,
}

#[derive(Debug, Clone)]
pub struct TwoLayerRun {
    pub w1: DenseMatrix<f64>,
    pub w2: Vec<f64>,
    /// Lowest objective over all iterates; `w1`, `w2` attain it.
    pub objective: f64,
}

fn two_layer_masks(
    x: &DenseMatrix<f64>,
    h: &DenseMatrix<f64>,
    act: &HiddenActivation,
) -> Result<Vec<bool>> {
    Ok(match act {
        HiddenActivation::Relu => h.as_slice().iter().map(|&v| v > 0.0).collect(),
        HiddenActivation::Gated(g) => x.matmul(g)?.as_slice().iter().map(|&v| v >= 0.0).collect(),
    })
}

/// `(1/(2n)) ||act(x W1) w2 - y||^2 + (lambda/2)(||W1||_F^2 + ||w2||^2)`.
pub fn two_layer_objective(
    x: &DenseMatrix<f64>,
    y: &[f64],
    w1: &DenseMatrix<f64>,
    w2: &[f64],
    act: &HiddenActivation,
    lambda: f64,
) -> Result<f64> {
    let h = x.matmul(w1)?;
    let mask = two_layer_masks(x, &h, act)?;
    let m = w1.cols();
    let mut loss = 0.0;
    for (r, yr) in y.iter().enumerate() {
        let mut out = 0.0;
        for j in 0..m {
            if mask[r * m + j] {
                out += h[(r, j)] * w2[j];
            }
        }
        loss += (out - yr) * (out - yr);
    }
    let reg: f64 = w1.as_slice().iter().chain(w2).map(|v| v * v).sum();
    Ok(loss / (2.0 * y.len() as f64) + 0.5 * lambda * reg)
}

/// Full-batch Adam on the weight-decayed two-layer objective, no biases.
pub fn train_two_layer(
    x: &DenseMatrix<f64>,
    y: &[f64],
    cfg: &TwoLayerConfig,
) -> Result<TwoLayerRun> {
    let (n, d, m) = (x.rows(), x.cols(), cfg.width);
    if y.len() != n {
        return Err(Error::dims("two-layer targets", n, y.len()));
    }
    if let HiddenActivation::Gated(g) = &cfg.activation {
        if g.shape() != (d, m) {
            return Err(Error::dims("gate matrix columns", m, g.cols()));
        }
    }
    let mut r = rng::seeded(cfg.seed);
    let mut w1 = DenseMatrix::new(d, m, rng::normal_vec(&mut r, d * m, cfg.init_scale))?;
    let mut w2: Vec<f64> = rng::normal_vec(&mut r, m, cfg.init_scale);
    let mut adam = AdamState::new(&[d * m, m], cfg.lr);
    let inv_n = 1.0 / n as f64;
    let mut best = (f64::INFINITY, w1.clone(), w2.clone());
    for _ in 0..=cfg.iters {
        let h = x.matmul(&w1)?;
        let mask = two_layer_masks(x, &h, &cfg.activation)?;
        let mut resid = vec![0.0; n];
        let mut loss = 0.0;
        for (i, res) in resid.iter_mut().enumerate() {
            let mut out = 0.0;
            for j in 0..m {
                if mask[i * m + j] {
                    out += h[(i, j)] * w2[j];
                }
            }
            *res = (out - y[i]) * inv_n;
            loss += (out - y[i]) * (out - y[i]);
        }
        let reg: f64 = w1.as_slice().iter().chain(&w2).map(|v| v * v).sum();
        let obj = 0.5 * loss * inv_n + 0.5 * cfg.lambda * reg;
        if !obj.is_finite() {
            return Err(Error::Divergence {
                iter: adam.step as usize,
            });
        }
        if obj < best.0 {
            best = (obj, w1.clone(), w2.clone());
        }
        if adam.step as usize == cfg.iters {
            break;
        }
        let mut g2: Vec<f64> = w2.iter().map(|v| cfg.lambda * v).collect();
        let mut dh = DenseMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                if mask[i * m + j] {
                    g2[j] += h[(i, j)] * resid[i];
                    dh[(i, j)] = resid[i] * w2[j];
                }
            }
        }
        let mut g1 = x.t_matmul(&dh)?;
        for (g, w) in g1.as_mut_slice().iter_mut().zip(w1.as_slice()) {
            *g += cfg.lambda * w;
        }
        adam.update(
            &mut [w1.as_mut_slice(), w2.as_mut_slice()],
            &[g1.as_slice(), &g2],
        );
    }
    Ok(TwoLayerRun {
        objective: best.0,
        w1: best.1,
        w2: best.2,
    })
}
