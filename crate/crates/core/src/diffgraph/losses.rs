//! Loss heads shared by the training loops.

use super::graph::{Graph, Var};

/// `mean_i w_i · ‖pred_i − target_i‖²`; `weights` is an `n×1` column.
pub fn weighted_mse(g: &mut Graph, pred: Var, target: Var, weights: Var) -> Var {
    let diff = g.sub(pred, target);
    let sq = g.square(diff);
    let per_row = g.sum_cols(sq);
    let weighted = g.mul(per_row, weights);
    g.mean(weighted)
}

/// Mean binary cross-entropy of (already clamped) probabilities `p` against
/// 0/1 `labels`, both `n×1`.
pub fn binary_cross_entropy(g: &mut Graph, p: Var, labels: Var) -> Var {
    let log_p = g.log(p);
    let one_minus_p = {
        let neg = g.scale(p, -1.0);
        g.offset(neg, 1.0)
    };
    let log_q = g.log(one_minus_p);
    let one_minus_y = {
        let neg = g.scale(labels, -1.0);
        g.offset(neg, 1.0)
    };
    let pos = g.mul(labels, log_p);
    let neg = g.mul(one_minus_y, log_q);
    let ll = g.add(pos, neg);
    let m = g.mean(ll);
    g.scale(m, -1.0)
}
