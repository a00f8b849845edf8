//! Per-mode membership updates.
//!
//! At fixed coefficients the objective splits across the nodes of one mode:
//! reassigning node `i` only changes the residuals of the cells in its
//! slice, so each node picks the group minimizing its slice's sum of squared
//! residuals, independently of the other nodes in the same mode. Ties go to
//! the smallest group index.

use crate::estimator::cells::{dot, quad_form, CellStats};
use crate::estimator::system::XiLayout;
use crate::tensor::advance;

/// Updates the labels of one mode in place; returns how many nodes moved.
pub(crate) fn sweep_mode(
    cells: &CellStats,
    labels: &mut [Vec<usize>],
    layout: &XiLayout,
    xi: &[f64],
    mode: usize,
) -> usize {
    let g_l = layout.group_counts()[mode];
    if g_l == 1 {
        return 0;
    }
    let q = cells.dims.len();
    let n_l = cells.dims[mode];
    let m = cells.m;
    let feature = &cells.layout;
    let strides = layout.alpha_strides();
    let alpha_off = layout.alpha_offset();
    let mode_dst = feature.mode_offset(mode);
    let mode_len = layout.theta_len(mode);

    // cost[node * g_l + g] accumulates the slice objective under candidate g.
    let mut cost = vec![0.0; n_l * g_l];
    let mut theta = vec![0.0; m];
    let mut idx = vec![0usize; q];
    for c in 0..cells.n_cells {
        // Coefficients of the fixed modes plus the partial tuple offset.
        let mut lin_rest = 0;
        for l in 0..q {
            if l == mode {
                continue;
            }
            let g = labels[l][idx[l]];
            lin_rest += g * strides[l];
            let src = layout.theta_offset(l, g);
            let dst = feature.mode_offset(l);
            let len = layout.theta_len(l);
            theta[dst..dst + len].copy_from_slice(&xi[src..src + len]);
        }
        let gram = cells.gram_of(c);
        let xy = cells.xy_of(c);
        let yy = cells.yy[c];
        let row = &mut cost[idx[mode] * g_l..(idx[mode] + 1) * g_l];
        for (cand, slot) in row.iter_mut().enumerate() {
            let src = layout.theta_offset(mode, cand);
            theta[mode_dst..mode_dst + mode_len].copy_from_slice(&xi[src..src + mode_len]);
            theta[m - 1] = xi[alpha_off + lin_rest + cand * strides[mode]];
            *slot += yy - 2.0 * dot(&theta, xy) + quad_form(gram, &theta);
        }
        advance(&mut idx, &cells.dims);
    }

    let mut changes = 0;
    for (i, label) in labels[mode].iter_mut().enumerate() {
        let row = &cost[i * g_l..(i + 1) * g_l];
        let mut best = 0;
        for (g, &v) in row.iter().enumerate().skip(1) {
            if v < row[best] {
                best = g;
            }
        }
        if *label != best {
            *label = best;
            changes += 1;
        }
    }
    changes
}
