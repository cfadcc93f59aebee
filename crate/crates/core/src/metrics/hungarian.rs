//! Optimal one-to-one assignment (Kuhn–Munkres with potentials).

/// Minimum-cost assignment on a `rows x cols` cost matrix (row-major).
///
/// Returns `assignment[r] = Some(c)` for matched rows; exactly
/// `min(rows, cols)` rows are matched. The matrix is padded to square with
/// zeros. Columns are scanned in ascending index order and only strictly
/// smaller reduced costs replace the current candidate, so ties resolve to
/// the lowest index deterministically.
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let at = |r: usize, c: usize| -> f64 {
        if r < rows && c < cols {
            cost[r * cols + c]
        } else {
            0.0
        }
    };
    // 1-based arrays; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut assignment = vec![None; rows];
    for j in 1..=n {
        let r = p[j] - 1;
        if r < rows && j - 1 < cols {
            assignment[r] = Some(j - 1);
        }
    }
    assignment
}

/// Maximum-weight assignment; returns the matched pairs and total weight.
pub fn max_weight_matching(weights: &[f64], rows: usize, cols: usize) -> (Vec<(usize, usize)>, f64) {
    let neg: Vec<f64> = weights.iter().map(|w| -w).collect();
    let assignment = min_cost_assignment(&neg, rows, cols);
    let pairs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect();
    let total = pairs.iter().map(|&(r, c)| weights[r * cols + c]).sum();
    (pairs, total)
}
