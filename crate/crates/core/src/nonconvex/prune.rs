use super::mlp::MLPNet;
use crate::grelu::{recover_weights, ConvexSolution};
use crate::scalar::Real;

/// Keeps the `ceil(keep_fraction * total)` largest-magnitude weights across all
/// layers; ties go to the earlier (layer, index). Biases are untouched.
pub fn magnitude_prune<T: Real>(net: &MLPNet<T>, keep_fraction: f64) -> MLPNet<T> {
    assert!(
        keep_fraction > 0.0 && keep_fraction <= 1.0,
        "keep fraction must lie in (0, 1]"
    );
    let total = net.weight_count();
    let keep = keep_count(total, keep_fraction);
    let mut entries: Vec<(T, usize, usize)> = net
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| {
            layer
                .weight
                .as_slice()
                .iter()
                .enumerate()
                .map(move |(i, w)| (w.abs(), l, i))
        })
        .collect();
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite weights")
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut out = net.clone();
    for &(_, l, i) in &entries[keep..] {
        out.layers[l].weight.as_mut_slice()[i] = T::zero();
    }
    out
}

/// `ceil(fraction * total)`, robust to the fraction being a rounded ratio.
pub fn keep_count(total: usize, fraction: f64) -> usize {
    let raw = fraction * total as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 * raw.max(1.0) {
        rounded
    } else {
        raw.ceil()
    };
    (k as usize).min(total)
}

/// Largest ReLU width `h >= 1` with `d h + h C` at most the recovered nonzero count.
pub fn match_width_to_nnz<T: Real>(solution: &ConvexSolution<T>) -> usize {
    let student = recover_weights(solution);
    let nnz = student.nonzero_params();
    width_for_budget(nnz, solution.input_dim(), solution.outputs())
}

/// Rounds down so the non-convex model never exceeds `params`.
pub fn width_for_budget(params: usize, input_dim: usize, outputs: usize) -> usize {
    (params / (input_dim + outputs).max(1)).max(1)
}
