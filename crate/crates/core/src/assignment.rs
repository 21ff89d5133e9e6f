//! Optimal linear assignment with cost gating.
//!
//! The solver is a Jonker-Volgenant style shortest-augmenting-path method
//! (O(n^3)) on a zero-padded square matrix. After solving, the assignment is
//! refined to the lexicographically smallest one among equal-cost optima:
//! by LP complementary slackness every optimal assignment lives inside the
//! zero-reduced-cost graph of the final dual potentials, so the refinement
//! greedily forces `(row, col)` pairs in ascending order and keeps a pair
//! whenever the forced set still extends to a perfect matching of that
//! graph. Matching earlier rows always compares smaller, so rows are offered
//! real columns before dummy (unmatched) slots.

use crate::geometry::CostMatrix;
use crate::scalar::{sc, Scalar};

/// Cost substituted for gated-out entries. Far above any feasible hybrid
/// distance (which caps at 2).
pub const GATE_SENTINEL: f64 = 1e5;

/// Result of [`gated_match`]: `matches` plus the leftover row/col indices.
/// The three sets partition rows and columns exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatedMatch {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Minimum-cost assignment of `min(M, N)` pairs.
///
/// Deterministic: among equal-cost optima it returns the assignment whose
/// row-sorted pair list is lexicographically smallest. An empty matrix
/// yields an empty assignment.
pub fn hungarian<T: Scalar>(cost: &CostMatrix<T>) -> Vec<(usize, usize)> {
    let m = cost.rows();
    let n = cost.cols();
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let s = m.max(n);

    // Zero-pad to square; dummy rows/cols absorb the surplus at no cost.
    let mut c = vec![vec![T::zero(); s]; s];
    let mut max_abs = T::one();
    for i in 0..m {
        for j in 0..n {
            let v = cost[(i, j)];
            c[i][j] = v;
            max_abs = max_abs.max(v.abs());
        }
    }

    let (mut row_col, mut col_row, u, v) = jv_square(&c);

    // Tie tolerance for the zero-reduced-cost test, scaled to the inputs and
    // the scalar's precision so accumulated dual rounding stays inside it.
    let eps = max_abs * T::epsilon() * sc::<T>(256.0);
    let zero_rc = |i: usize, j: usize| (c[i][j] - u[i] - v[j]).abs() <= eps;

    // Greedy lexicographic refinement over real rows. Candidate columns are
    // offered in ascending order, real ones first; forcing a pair succeeds
    // when the remaining graph still holds a perfect matching.
    let mut locked_col = vec![false; s];
    for r in 0..m {
        let cand_cols = (0..n).chain(n..s);
        let mut placed = false;
        for cand in cand_cols {
            if locked_col[cand] || !zero_rc(r, cand) {
                continue;
            }
            if try_force(r, cand, &zero_rc, &mut row_col, &mut col_row, &locked_col, s) {
                locked_col[cand] = true;
                placed = true;
                break;
            }
        }
        // The row's current partner is always a valid candidate, so the
        // greedy step cannot fail.
        debug_assert!(placed, "row {r} could not be placed");
        let _ = placed;
    }

    (0..m)
        .filter_map(|r| {
            let col = row_col[r];
            (col < n).then_some((r, col))
        })
        .collect()
}

/// Attempts to put edge `(r, c)` into the current perfect matching without
/// touching locked columns. On success the matching is updated in place.
fn try_force(
    r: usize,
    c: usize,
    zero_rc: &dyn Fn(usize, usize) -> bool,
    row_col: &mut [usize],
    col_row: &mut [usize],
    locked_col: &[bool],
    s: usize,
) -> bool {
    let c_old = row_col[r];
    if c_old == c {
        return true;
    }
    let r_old = col_row[c];
    // Rewire (r, c) and try to re-seat the displaced row on the freed
    // column via an alternating path in the zero graph.
    row_col[r] = c;
    col_row[c] = r;
    row_col[r_old] = usize::MAX;
    col_row[c_old] = usize::MAX;
    let mut visited = vec![false; s];
    visited[c] = true; // c now belongs to r
    if kuhn_augment(r_old, zero_rc, row_col, col_row, locked_col, &mut visited) {
        true
    } else {
        // Restore.
        row_col[r] = c_old;
        col_row[c_old] = r;
        row_col[r_old] = c;
        col_row[c] = r_old;
        false
    }
}

/// Kuhn augmenting step: finds an alternating path from `row` to any free
/// column inside the zero graph, skipping locked columns.
fn kuhn_augment(
    row: usize,
    zero_rc: &dyn Fn(usize, usize) -> bool,
    row_col: &mut [usize],
    col_row: &mut [usize],
    locked_col: &[bool],
    visited: &mut [bool],
) -> bool {
    for col in 0..visited.len() {
        if visited[col] || locked_col[col] || !zero_rc(row, col) {
            continue;
        }
        visited[col] = true;
        let occupant = col_row[col];
        if occupant == usize::MAX
            || kuhn_augment(occupant, zero_rc, row_col, col_row, locked_col, visited)
        {
            row_col[row] = col;
            col_row[col] = row;
            return true;
        }
    }
    false
}

/// Shortest-augmenting-path solve of a square min-cost assignment.
/// Returns (row -> col, col -> row, row potentials, col potentials); the
/// potentials satisfy `u[i] + v[j] <= c[i][j]` with equality on matched
/// pairs, and the column scan order makes tie handling deterministic.
fn jv_square<T: Scalar>(c: &[Vec<T>]) -> (Vec<usize>, Vec<usize>, Vec<T>, Vec<T>) {
    let n = c.len();
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: 1-based row matched to col j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[i0 - 1][j - 1] - u[i0] - v[j];
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

    let mut row_col = vec![usize::MAX; n];
    let mut col_row = vec![usize::MAX; n];
    for j in 1..=n {
        let i = p[j];
        row_col[i - 1] = j - 1;
        col_row[j - 1] = i - 1;
    }
    let u0 = (0..n).map(|i| u[i + 1]).collect();
    let v0 = (0..n).map(|j| v[j + 1]).collect();
    (row_col, col_row, u0, v0)
}

/// Assignment under a cost gate.
///
/// Entries above `gate` are replaced by [`GATE_SENTINEL`] before solving;
/// any resulting pair whose true cost still exceeds the gate is discarded
/// into the unmatched sets, so no returned match ever violates the gate.
pub fn gated_match<T: Scalar>(cost: &CostMatrix<T>, gate: T) -> GatedMatch {
    let m = cost.rows();
    let n = cost.cols();
    let sentinel: T = sc(GATE_SENTINEL);
    let masked = CostMatrix::from_fn(m, n, |i, j| {
        if cost[(i, j)] > gate {
            sentinel
        } else {
            cost[(i, j)]
        }
    });
    let pairs = hungarian(&masked);

    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    let mut matches = Vec::new();
    for (r, c) in pairs {
        if cost[(r, c)] <= gate {
            row_used[r] = true;
            col_used[c] = true;
            matches.push((r, c));
        }
    }
    GatedMatch {
        matches,
        unmatched_rows: (0..m).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..n).filter(|&c| !col_used[c]).collect(),
    }
}
