//! Exact linear assignment by shortest augmenting paths with potentials.

use crate::error::{Error, Result};

/// Largest square instance accepted by [`solve`].
pub const MAX_ASSIGNMENT_SIZE: usize = 2048;

/// Solves the square assignment problem for a row-major `n x n` cost matrix.
///
/// Returns `(total_cost, col_of_row)`. Runs in O(n^3) and is fully
/// deterministic: ties are broken by the lowest column index.
pub fn solve(cost: &[f64], n: usize) -> Result<(f64, Vec<usize>)> {
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::SupportTooLarge(n, MAX_ASSIGNMENT_SIZE));
    }
    if cost.len() != n * n {
        return Err(Error::DimensionMismatch(cost.len(), n * n));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    // 1-based arrays with a dummy column 0, following the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    // Recompute the objective directly from the matching rather than the duals.
    let total = (0..n).map(|i| cost[i * n + col_of_row[i]]).sum();
    Ok((total, col_of_row))
}
