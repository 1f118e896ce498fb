use sha2::{Digest, Sha256};

use super::student::BlockMap;
use crate::data::{Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::nonconvex::{Block, MLPNet};

/// SHA-256 over the little-endian bytes of every weight and bias outside `block`.
pub fn frozen_checksum(net: &MLPNet<f64>, block: Block) -> String {
    let mut h = Sha256::new();
    for (i, layer) in net.layers.iter().enumerate() {
        if (block.start..block.end).contains(&i) {
            continue;
        }
        h.update((i as u64).to_le_bytes());
        for v in layer.weight.as_slice().iter().chain(&layer.bias) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapResult {
    pub accuracy: f64,
    pub checksum: String,
}

/// Logits of `teacher` with `block` replaced by `student`.
pub fn swapped_logits(
    teacher: &MLPNet<f64>,
    block: Block,
    student: &dyn BlockMap,
    x: &DenseMatrix<f64>,
) -> Result<DenseMatrix<f64>> {
    block.validate(teacher)?;
    let (din, dout) = (block.input_dim(teacher), block.output_dim(teacher));
    if student.input_dim() != din {
        return Err(Error::dims("student input width", din, student.input_dim()));
    }
    if student.output_dim() != dout {
        return Err(Error::dims(
            "student output width",
            dout,
            student.output_dim(),
        ));
    }
    let z = teacher.forward_range(x, 0, block.start)?;
    let s = student.map(&z)?;
    teacher.forward_range(&s, block.end, teacher.depth())
}

/// Top-1 accuracy of the frozen teacher with `block` swapped for `student`.
/// Fails if any weight outside the block changed during evaluation.
pub fn swap_and_evaluate(
    teacher: &MLPNet<f64>,
    block: Block,
    student: &dyn BlockMap,
    test: &Dataset,
) -> Result<SwapResult> {
    let labels = test.labels().ok_or(Error::MissingLabels)?;
    block.validate(teacher)?;
    let before = frozen_checksum(teacher, block);
    let logits = swapped_logits(teacher, block, student, &test.x.cast())?;
    let after = frozen_checksum(teacher, block);
    if before != after {
        return Err(Error::InvalidArgument(
            "frozen weights changed during evaluation".into(),
        ));
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(SwapResult {
        accuracy: hits as f64 / labels.len() as f64,
        checksum: after,
    })
}
