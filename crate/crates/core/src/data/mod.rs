//! Matrices, datasets, seeded randomness and on-disk formats.

pub mod cvxa;
pub mod dataset;
pub mod matrix;
pub mod model_spec;
pub mod rng;

pub use cvxa::{load_activations, save_activations};
pub use dataset::{
    load_csv, parse_csv, save_csv, standardize, subsample_per_class, to_csv, train_test_split,
    ActivationDataset, Dataset, SplitSpec, Standardization,
};
pub use matrix::DenseMatrix;
pub use model_spec::{LayerSpec, ModelSpec};
