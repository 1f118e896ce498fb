use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::rng;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Inputs with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix<f32>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(x: DenseMatrix<f32>, labels: Option<Vec<usize>>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::NoRows);
        }
        let num_classes = match &labels {
            Some(l) => {
                if l.len() != x.rows() {
                    return Err(Error::dims("label count", x.rows(), l.len()));
                }
                l.iter().copied().max().map_or(0, |m| m + 1)
            }
            None => 0,
        };
        Ok(Self {
            x,
            labels,
            num_classes,
        })
    }

    /// Like [`Dataset::new`] but with an explicit class count, so subsets
    /// that miss the top classes keep the same label space.
    pub fn with_classes(
        x: DenseMatrix<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        let mut ds = Self::new(x, Some(labels))?;
        ds.num_classes = num_classes;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Drops the labels. Used by code paths that must stay label-free.
    pub fn without_labels(&self) -> Self {
        Self {
            x: self.x.clone(),
            labels: None,
            num_classes: 0,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or(Error::MissingLabels)?;
        let mut counts = vec![0; self.num_classes];
        for &l in labels {
            counts[l] += 1;
        }
        Ok(counts)
    }
}

/// Teacher block input/output pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub z: DenseMatrix<f32>,
    pub t: DenseMatrix<f32>,
}

impl ActivationDataset {
    pub fn new(z: DenseMatrix<f32>, t: DenseMatrix<f32>) -> Result<Self> {
        if z.rows() != t.rows() {
            return Err(Error::dims("activation rows", z.rows(), t.rows()));
        }
        Ok(Self { z, t })
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.z.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.t.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            z: self.z.select_rows(idx),
            t: self.t.select_rows(idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub samples_per_class: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 1.0,
            seed: 0,
            samples_per_class: None,
        }
    }
}

/// Reads a headerless CSV. With `has_labels`, the last column is the class id.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, has_labels)
}

pub fn parse_csv(text: &str, has_labels: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::InconsistentWidth {
                row,
                expected,
                found: record.len(),
            });
        }
        let features = if has_labels {
            if expected < 2 {
                return Err(Error::Parse {
                    row,
                    col: 0,
                    msg: "labelled rows need at least one feature and a label".into(),
                });
            }
            expected - 1
        } else {
            expected
        };
        for (col, field) in record.iter().enumerate().take(features) {
            let v: f32 = field.parse().map_err(|_| Error::Parse {
                row,
                col,
                msg: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
        }
        if has_labels {
            let col = features;
            let field = &record[col];
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col,
                msg: format!("label is not a number: {field:?}"),
            })?;
            if !v.is_finite() || v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Parse {
                    row,
                    col,
                    msg: format!("label must be a non-negative integer: {field:?}"),
                });
            }
            labels.push(v as usize);
        }
    }
    let Some(width) = width else {
        return Err(Error::NoRows);
    };
    let cols = if has_labels { width - 1 } else { width };
    let rows = values.len() / cols.max(1);
    let x = DenseMatrix::new(rows, cols, values)?;
    Dataset::new(x, has_labels.then_some(labels))
}

/// Writes the layout [`load_csv`] reads: headerless, label last when present.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(ds)).map_err(|e| Error::io(path, e))
}

pub fn to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        let mut fields: Vec<String> = ds.x.row(i).iter().map(f32::to_string).collect();
        if let Some(labels) = ds.labels() {
            fields.push(labels[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Takes `min(samples_per_class, available)` rows of every class after a
/// seeded shuffle. Rows come back in shuffled order.
pub fn subsample_per_class(ds: &Dataset, spec: &SplitSpec) -> Result<Dataset> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let cap = spec.samples_per_class.unwrap_or(usize::MAX);
    let mut taken = vec![0usize; ds.num_classes()];
    let picked: Vec<usize> = order
        .into_iter()
        .filter(|&i| {
            let c = &mut taken[labels[i]];
            if *c < cap {
                *c += 1;
                true
            } else {
                false
            }
        })
        .collect();
    Ok(ds.select(&picked))
}

/// Seeded shuffle split; the first `ceil(train_fraction * n)` rows train.
pub fn train_test_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1], got {}",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let cut = ((spec.train_fraction * ds.len() as f64).ceil() as usize).min(ds.len());
    Ok((ds.select(&order[..cut]), ds.select(&order[cut..])))
}

/// Per-column affine map recorded by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization<T> {
    pub means: Vec<T>,
    pub scales: Vec<T>,
}

impl<T: Real> Standardization<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![T::zero(); d],
            scales: vec![T::one(); d],
        }
    }

    pub fn apply(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.cols() != self.means.len() {
            return Err(Error::dims(
                "standardize columns",
                self.means.len(),
                x.cols(),
            ));
        }
        Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.scales[j]
        }))
    }

    pub fn invert(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.cols() != self.means.len() {
            return Err(Error::dims(
                "standardize columns",
                self.means.len(),
                x.cols(),
            ));
        }
        Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            x[(i, j)] * self.scales[j] + self.means[j]
        }))
    }
}

/// Centers every column and divides by its population standard deviation.
/// Zero-variance columns keep scale 1.
pub fn standardize<T: Real>(x: &DenseMatrix<T>) -> (DenseMatrix<T>, Standardization<T>) {
    let (n, d) = x.shape();
    let nf = n.max(1) as f64;
    let mut means = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    for j in 0..d {
        let mean = (0..n).map(|i| x[(i, j)].as_f64()).sum::<f64>() / nf;
        let var = (0..n)
            .map(|i| {
                let c = x[(i, j)].as_f64() - mean;
                c * c
            })
            .sum::<f64>()
            / nf;
        let std = var.sqrt();
        let eps = T::epsilon().as_f64() * (1.0 + mean.abs());
        means.push(T::lit(mean));
        scales.push(if std > eps { T::lit(std) } else { T::one() });
    }
    let st = Standardization { means, scales };
    let out = st.apply(x).expect("shape checked");
    (out, st)
}
