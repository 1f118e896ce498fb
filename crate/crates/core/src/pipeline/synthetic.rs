use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{rng, Dataset, DenseMatrix};
use crate::error::{Error, Result};

/// Isotropic Gaussian classes around seeded random means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Per-coordinate standard deviation of the class means; samples have unit noise.
    pub mean_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            train_per_class: 500,
            test_per_class: 100,
            mean_scale: 0.5,
        }
    }
}

/// Train and test draws from the same mixture, rows shuffled.
pub fn gaussian_mixture(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 || spec.dim == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::InvalidArgument(
            "synthetic task needs at least 2 classes, 1 dimension and 1 sample per class".into(),
        ));
    }
    let mut mean_rng = rng::seeded(rng::substream(seed, 0));
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| rng::normal_vec(&mut mean_rng, spec.dim, spec.mean_scale))
        .collect();
    let draw = |per_class: usize, stream: u64| -> Result<Dataset> {
        let mut r = rng::seeded(rng::substream(seed, stream));
        let mut labels: Vec<usize> = (0..spec.classes)
            .flat_map(|k| std::iter::repeat_n(k, per_class))
            .collect();
        labels.shuffle(&mut r);
        let mut values = Vec::with_capacity(labels.len() * spec.dim);
        for &k in &labels {
            let noise: Vec<f64> = rng::normal_vec(&mut r, spec.dim, 1.0);
            values.extend(means[k].iter().zip(&noise).map(|(m, e)| (m + e) as f32));
        }
        let x = DenseMatrix::new(labels.len(), spec.dim, values)?;
        Dataset::with_classes(x, labels, spec.classes)
    };
    Ok((
        draw(spec.train_per_class, 1)?,
        draw(spec.test_per_class, 2)?,
    ))
}
