//! Trilinear attention weights and attentive pooling.

use crate::error::{Error, Result};
use crate::numerics::{Mask, Node, Tape};

/// Column-stochastic attention of `right` positions over `left` positions.
///
/// `left` is `d × N`, `right` is `d × M`, `weights` is `3d × 1`. Entry
/// `(i, j)` of the `N × M` result is the softmax over `i` of
/// `wᵀ[u_i; v_j; u_i ∘ v_j]`, with masked `left` positions at exactly 0.
/// The `v_j` block cancels in the softmax and is not computed.
pub fn att_weights(
    tape: &mut Tape<'_>,
    left: Node,
    right: Node,
    weights: Node,
    left_mask: &Mask,
) -> Result<Node> {
    let scores = tape.trilinear_for_columns(weights, left, right)?;
    tape.masked_column_softmax(scores, left_mask.clone())
}

/// Softmax-weighted mean of the columns of `seq` (`d × n`) with position
/// scores `v_aᵀ seq`; returns `d × 1`.
pub fn attentive_pool(tape: &mut Tape<'_>, seq: Node, weights: Node, mask: &Mask) -> Result<Node> {
    let (d, n) = tape.shape(seq);
    if tape.shape(weights) != (d, 1) {
        return Err(Error::contract(
            "attentive_pool",
            format!("weights {:?} for hidden size {d}", tape.shape(weights)),
        ));
    }
    if mask.len() != n {
        return Err(Error::contract(
            "attentive_pool",
            "mask length differs from sequence",
        ));
    }
    let seq_t = tape.transpose(seq)?;
    let scores = tape.matmul(seq_t, weights)?;
    let dist = tape.masked_column_softmax(scores, mask.clone())?;
    tape.matmul(seq, dist)
}
