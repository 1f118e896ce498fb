//! Non-convex baselines: dense ReLU networks trained by backprop and Adam,
//! block activation extraction, magnitude pruning and width matching.

pub mod adam;
pub mod mlp;
pub mod prune;
pub mod train;

pub use adam::AdamState;
pub use mlp::{DenseLayer, LayerGrad, MLPNet, NetLoss};
pub use prune::{keep_count, magnitude_prune, match_width_to_nnz, width_for_budget};
pub use train::{
    extract_block_activations, train_relu_student, train_teacher, train_two_layer,
    two_layer_objective, Block, Budget, HiddenActivation, StudentConfig, StudentRecord, StudentRun,
    TeacherRun, TwoLayerConfig, TwoLayerRun, BATCH_SIZE,
};
